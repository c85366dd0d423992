// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "reenact/gan.hpp"
#include "reenact/losses.hpp"
#include "reenact/motion.hpp"
#include "reenact/networks.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace reenact {

/// Training hyperparameters. Defaults follow the desk-scale profile.
struct TrainConfig {
    ModelConfig model;
    double learning_rate = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.9;
    std::int64_t batch_size = 4;
    std::int64_t total_steps = 20000;
    std::uint64_t seed = 0;
    /// Discriminator members in declaration order; weights must lie on the simplex.
    std::vector<gan::MemberSpec> discriminators{
        {gan::Modality::rgb, 0.5}, {gan::Modality::depth, 0.25}, {gan::Modality::normal, 0.25}};
    std::int64_t discriminator_scales = 2;
    std::int64_t discriminator_channels = 16;
    gan::LossKind gan_loss = gan::LossKind::vanilla;
    losses::LossWeights loss_weights;
    motion::TpsOptions equivariance;
    std::string geometry_backend = "baseline";
    std::filesystem::path geometry_weights;
    double pixel_spacing = 1.0;
    int threads = 1;

    /// Weight of a member, or 0 when absent.
    double lambda(gan::Modality m) const;
    /// Sets a member weight, adding the member if missing.
    void set_lambda(gan::Modality m, double weight);

    /// Throws ValidationError naming the first violated invariant.
    void validate() const;
};

/// Ordered key -> raw value text.
using ConfigValues = std::map<std::string, std::string>;

/// Parses flat `key = value` lines; `#` starts a comment, strings may be double-quoted.
/// Throws ValidationError with the line number on malformed input.
ConfigValues parse_config_text(const std::string& text);
ConfigValues read_config_file(const std::filesystem::path& path);

/// Applies recognised keys onto `config`; unknown keys or bad values throw ValidationError.
void apply_config(TrainConfig& config, const ConfigValues& values);

/// Every key with a round-trippable value (doubles in shortest round-trip form).
ConfigValues config_values(const TrainConfig& config);
/// Documented text form; parse_config_text(to_text(c)) reproduces c exactly.
std::string config_to_text(const TrainConfig& config);
void write_config_file(const TrainConfig& config, const std::filesystem::path& path);

/// Keys understood by apply_config, in the order config_to_text writes them.
const std::vector<std::string>& config_keys();

} // namespace reenact
