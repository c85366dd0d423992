// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <torch/nn.h>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace reenact::gan {

struct SpectralResult {
    torch::Tensor weight; ///< weight / sigma_hat
    torch::Tensor sigma;  ///< scalar estimate of the top singular value
};

/// One power-iteration step on a matrixized kernel [out, in*kh*kw], updating `u` ([out])
/// in place. A zero weight returns zeros and resets `u`.
SpectralResult spectral_normalize(const torch::Tensor& weight, torch::Tensor& u, int iterations = 1);

/// Conv2d whose kernel is divided by its power-iterated spectral norm at every forward.
/// The power-iteration vector is a persistent buffer; it advances only in training mode.
class SNConv2dImpl : public torch::nn::Module {
public:
    SNConv2dImpl(std::int64_t in_channels, std::int64_t out_channels, std::int64_t kernel, std::int64_t stride,
                 std::int64_t padding);
    torch::Tensor forward(const torch::Tensor& x);
    /// Spectrally normalized kernel as currently seen by forward (no state update).
    torch::Tensor normalized_weight() const;

    torch::Tensor weight;
    torch::Tensor bias;
    torch::Tensor u;

private:
    std::int64_t stride_;
    std::int64_t padding_;
};
TORCH_MODULE(SNConv2d);

/// Patch discriminator: three stride-2 4x4 blocks and a 3x3 logit head, every conv
/// spectrally normalized.
class PatchDiscriminatorImpl : public torch::nn::Module {
public:
    PatchDiscriminatorImpl(std::int64_t in_channels, std::int64_t base_channels);
    torch::Tensor forward(const torch::Tensor& x); ///< patch logits [B, 1, h, w]

private:
    torch::nn::ModuleList layers_{};
};
TORCH_MODULE(PatchDiscriminator);

/// Patch discriminators at full and successively halved resolution.
class MultiScaleDiscriminatorImpl : public torch::nn::Module {
public:
    MultiScaleDiscriminatorImpl(std::int64_t in_channels, std::int64_t scales = 2, std::int64_t base_channels = 16);
    /// Patch logits per scale.
    std::vector<torch::Tensor> patch_logits(const torch::Tensor& x);
    /// Mean sigmoid probability over patches and scales: [B] in (0, 1).
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::ModuleList scales_{};
};
TORCH_MODULE(MultiScaleDiscriminator);

enum class Modality { rgb, depth, normal };

std::string to_string(Modality m);
Modality parse_modality(const std::string& name);
std::int64_t input_channels(Modality m);

/// One frame's three views. Tensors may be left undefined for zero-weight members.
struct EnsembleInput {
    torch::Tensor rgb;    ///< [B, 3, H, W]
    torch::Tensor depth;  ///< [B, 1, H, W]
    torch::Tensor normal; ///< [B, 3, H, W]

    const torch::Tensor& get(Modality m) const;
    EnsembleInput detach() const;
};

struct EnsembleScores {
    torch::Tensor total;                          ///< [B]
    std::map<std::string, torch::Tensor> members; ///< name -> [B], evaluated members only
};

struct MemberSpec {
    Modality modality;
    double weight;
};

/// Throws ValidationError unless names are unique and the weights lie on the simplex
/// (non-negative, |sum - 1| <= 1e-9).
void validate_simplex(const std::vector<MemberSpec>& members);

/// sum_i lambda_i D_i, accumulated in canonical (rgb, depth, normal) order so member
/// order never changes the result.
torch::Tensor weighted_total(const std::vector<MemberSpec>& members, const std::map<std::string, torch::Tensor>& scores);

/// Per-image min-max normalisation of depth to [0, 1].
torch::Tensor normalize_depth(const torch::Tensor& depth);

class DiscriminatorEnsembleImpl : public torch::nn::Module {
public:
    /// With a seed, each member is initialised from derive_seed(seed, "discriminator/<name>"),
    /// so a member's weights do not depend on which other members exist.
    DiscriminatorEnsembleImpl(std::vector<MemberSpec> members, std::int64_t scales = 2,
                              std::int64_t base_channels = 16, std::optional<std::uint64_t> seed = std::nullopt);

    /// Members with zero weight are skipped entirely.
    EnsembleScores forward(const EnsembleInput& input);

    const std::vector<MemberSpec>& members() const noexcept { return specs_; }
    std::vector<double> weights() const;
    void set_weights(const std::vector<double>& weights);
    bool needs_geometry() const;
    MultiScaleDiscriminator member(Modality m) const;

private:
    std::vector<MemberSpec> specs_;
    std::map<std::string, MultiScaleDiscriminator> nets_;
};
TORCH_MODULE(DiscriminatorEnsemble);

enum class LossKind { vanilla, least_squares };

inline constexpr double kLogClamp = 1e-7;

/// -[log D(real) + log(1 - D(fake))] averaged over the batch (or the least-squares form).
torch::Tensor discriminator_loss(const torch::Tensor& real_total, const torch::Tensor& fake_total,
                                 LossKind kind = LossKind::vanilla);

/// Non-saturating -log D(fake) (or (D(fake) - 1)^2).
torch::Tensor generator_loss(const torch::Tensor& fake_total, LossKind kind = LossKind::vanilla);

struct DiscriminatorStep {
    torch::Tensor loss;
    EnsembleScores real;
    EnsembleScores fake;
};

/// Scores detached fakes and real frames and returns the discriminator objective.
DiscriminatorStep gan_loss_discriminator(DiscriminatorEnsemble& ensemble, const EnsembleInput& real,
                                         const EnsembleInput& fake, LossKind kind = LossKind::vanilla);

struct GeneratorStep {
    torch::Tensor loss;
    EnsembleScores fake;
};

/// Scores fakes with gradients flowing back into them (and through geometry extraction).
GeneratorStep gan_loss_generator(DiscriminatorEnsemble& ensemble, const EnsembleInput& fake,
                                 LossKind kind = LossKind::vanilla);

} // namespace reenact::gan
