// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "reenact/config.hpp"
#include "reenact/dataio.hpp"
#include "reenact/gan.hpp"
#include "reenact/generator.hpp"
#include "reenact/geometry.hpp"
#include "reenact/losses.hpp"
#include "reenact/synthetic.hpp"

#include <torch/optim/adam.h>

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

namespace reenact {

/// All mutable training state. Per-step randomness is derived from (seed, step), so the
/// step counter is the complete RNG state.
struct TrainState {
    TrainConfig config;
    Generator generator{nullptr};
    gan::DiscriminatorEnsemble ensemble{nullptr};
    std::shared_ptr<const geometry::GeometryExtractor> geometry;
    std::unique_ptr<torch::optim::Adam> generator_optimizer;
    std::unique_ptr<torch::optim::Adam> discriminator_optimizer;
    std::int64_t step = 0;
    /// Fingerprint of the frozen geometry tensors taken at construction.
    std::uint32_t geometry_fingerprint = 0;
    /// Ensemble weights at construction.
    std::vector<double> initial_lambda;
};

/// Builds a fresh state. Sub-networks are seeded by name (generator first, then each
/// discriminator member) so member presence never perturbs other modules.
TrainState make_train_state(const TrainConfig& config);

/// CRC32 over the bytes of every tensor the geometry backend reads.
std::uint32_t geometry_fingerprint(const geometry::GeometryExtractor& extractor);

/// Throws Error if the geometry backend or the ensemble weights changed since construction.
void check_frozen(const TrainState& state);

/// A batch of (source, driving) pairs, both [B, 3, H, W].
struct FramePairs {
    torch::Tensor source;
    torch::Tensor driving;
};

/// Deterministic supplier of training pairs addressed by a global sample index.
class PairSource {
public:
    virtual ~PairSource() = default;
    virtual std::pair<Image, Image> pair(std::uint64_t index) const = 0;
};

/// Frames from a scanned dataset, sampled with the regular (seed, index) pair sampler.
class DatasetPairSource final : public PairSource {
public:
    DatasetPairSource(dataio::DatasetManifest manifest, std::uint64_t seed, std::int64_t image_size);
    std::pair<Image, Image> pair(std::uint64_t index) const override;

private:
    dataio::DatasetManifest manifest_;
    std::uint64_t seed_;
    std::unique_ptr<dataio::FrameCache> cache_;
};

/// In-memory synthetic corpus with the same sampling rule.
class CorpusPairSource final : public PairSource {
public:
    CorpusPairSource(synthetic::BlobCorpus corpus, std::uint64_t seed);
    std::pair<Image, Image> pair(std::uint64_t index) const override;
    const synthetic::BlobCorpus& corpus() const noexcept { return corpus_; }

private:
    synthetic::BlobCorpus corpus_;
    dataio::DatasetManifest manifest_;
    std::uint64_t seed_;
};

/// A fixed list of pairs cycled in order.
class FixedPairSource final : public PairSource {
public:
    explicit FixedPairSource(std::vector<std::pair<Image, Image>> pairs);
    std::pair<Image, Image> pair(std::uint64_t index) const override;
    std::size_t size() const noexcept { return pairs_.size(); }

private:
    std::vector<std::pair<Image, Image>> pairs_;
};

/// Sample indices step * batch_size + b for b in [0, batch_size).
FramePairs make_batch(const PairSource& source, std::int64_t step, std::int64_t batch_size);
FramePairs stack_pairs(const std::vector<std::pair<Image, Image>>& pairs);

/// One discriminator update on detached fakes followed by one generator update.
/// Throws NumericalError (with every term in the message) on a non-finite loss.
losses::LossReport train_step(TrainState& state, const FramePairs& batch);

/// Runs train_step until state.step == steps, calling `on_step` after each.
void train(TrainState& state, const PairSource& source, std::int64_t steps,
           const std::function<void(const TrainState&, const losses::LossReport&)>& on_step = {});

/// Mean |G(source, driving) - driving| in evaluation mode, chunked by `chunk`.
double reconstruction_l1(Generator& generator, const FramePairs& pairs, std::int64_t chunk = 8);

enum class TransferMode { absolute, relative };

TransferMode parse_transfer_mode(const std::string& name);

struct AnimationRequest {
    Image source;
    std::vector<Image> driving;
    TransferMode mode = TransferMode::relative;
};

struct AnimationResult {
    std::vector<Image> frames;
    /// Keypoints actually used to drive each frame (after transfer).
    std::vector<motion::KeypointSet> keypoints;
    /// Per-frame transmittance profiles [1, D+1, h, w].
    std::vector<torch::Tensor> transmittance;
};

/// One output frame per driving frame. Throws ValidationError("empty driving sequence")
/// when there are none.
AnimationResult animate(Generator& generator, const AnimationRequest& request);

} // namespace reenact
