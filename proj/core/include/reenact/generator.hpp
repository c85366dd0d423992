// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "reenact/fvr.hpp"
#include "reenact/motion.hpp"
#include "reenact/networks.hpp"

#include <torch/nn.h>

#include <cstdint>

namespace reenact {

/// Everything produced by one generator pass; intermediate tensors are kept for
/// debugging dumps and tests.
struct GeneratorOutput {
    torch::Tensor prediction;      ///< [B, 3, H, W] in (0, 1)
    motion::KeypointSet source_keypoints;
    motion::KeypointSet driving_keypoints;
    motion::DenseMotion motion;
    torch::Tensor source_features; ///< f_s  [B, C, h, w]
    torch::Tensor warped;          ///< F_w  [B, C, h, w]
    fvr::RaySamples rays;
    torch::Tensor rendered;        ///< F_r  [B, C_c, h, w]
};

/// Keypoint detector, dense motion, appearance encoder, volumetric feature renderer and
/// SPADE decoder. Each sub-network draws its initial weights from a stream derived from
/// (seed, sub-network name), so adding or removing other modules never perturbs it.
class GeneratorImpl : public torch::nn::Module {
public:
    GeneratorImpl(const ModelConfig& config, std::uint64_t seed);

    motion::KeypointSet detect(const torch::Tensor& images);
    /// Renders `source` under the motion source_keypoints -> driving_keypoints.
    GeneratorOutput generate(const torch::Tensor& source, const motion::KeypointSet& source_keypoints,
                             const motion::KeypointSet& driving_keypoints);
    /// detect(source), detect(driving), generate.
    GeneratorOutput forward(const torch::Tensor& source, const torch::Tensor& driving);

    const ModelConfig& config() const noexcept { return config_; }

    KeypointDetector keypoint_detector{nullptr};
    DenseMotionNetwork dense_motion{nullptr};
    SourceEncoder encoder{nullptr};
    fvr::FieldExtractor shape_field{nullptr};
    fvr::FieldExtractor color_field{nullptr};
    fvr::RaySampler ray_sampler{nullptr};
    fvr::SpadeDecoder decoder{nullptr};

private:
    ModelConfig config_;
};
TORCH_MODULE(Generator);

} // namespace reenact
