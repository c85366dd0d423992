// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "reenact/motion.hpp"

#include <torch/nn.h>

namespace reenact {

/// Architecture hyperparameters shared by every generator sub-network.
struct ModelConfig {
    std::int64_t image_size = 64;
    std::int64_t keypoints = motion::kDefaultKeypointCount;
    /// Feature grid is image_size / feature_stride.
    std::int64_t feature_stride = 4;
    std::int64_t feature_channels = 32;
    /// Samples per orthogonal ray.
    std::int64_t depth_samples = 16;
    std::int64_t color_channels = 16;
    std::int64_t ray_hidden = 64;
    std::int64_t block_expansion = 32;
    std::int64_t hourglass_blocks = 3;
    std::int64_t max_features = 128;
    /// Keypoint detector runs on the image downscaled by this factor.
    std::int64_t detector_downscale = 2;
    double keypoint_temperature = 0.1;
    double heatmap_variance = 0.01;
    double jacobian_eps = motion::kDefaultJacobianEps;
    bool freeze_jacobians = false;

    std::int64_t feature_size() const { return image_size / feature_stride; }
    /// Throws ValidationError on inconsistent sizes.
    void validate() const;
};

/// conv3x3 -> ReLU -> 2x2 average pool.
class DownBlockImpl : public torch::nn::Module {
public:
    DownBlockImpl(std::int64_t in_channels, std::int64_t out_channels);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(DownBlock);

/// nearest x2 upsample -> conv3x3 -> ReLU.
class UpBlockImpl : public torch::nn::Module {
public:
    UpBlockImpl(std::int64_t in_channels, std::int64_t out_channels);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(UpBlock);

/// U-shaped encoder/decoder with skip concatenations. Output has
/// block_expansion + in_channels channels at input resolution.
class HourglassImpl : public torch::nn::Module {
public:
    HourglassImpl(std::int64_t in_channels, std::int64_t block_expansion, std::int64_t blocks,
                  std::int64_t max_features);
    torch::Tensor forward(const torch::Tensor& x);
    std::int64_t out_channels() const noexcept { return out_channels_; }

private:
    torch::nn::ModuleList down_{};
    torch::nn::ModuleList up_{};
    std::int64_t out_channels_ = 0;
};
TORCH_MODULE(Hourglass);

/// Heatmap soft-argmax keypoints plus heatmap-weighted 2x2 Jacobian regression.
class KeypointDetectorImpl : public torch::nn::Module {
public:
    explicit KeypointDetectorImpl(const ModelConfig& config);
    /// images [B, 3, H, W] in [0, 1].
    motion::KeypointSet forward(const torch::Tensor& images);

private:
    ModelConfig config_;
    Hourglass hourglass_{nullptr};
    torch::nn::Conv2d heatmap_head_{nullptr};
    torch::nn::Conv2d jacobian_head_{nullptr};
};
TORCH_MODULE(KeypointDetector);

/// Predicts K+1 soft masks and an occlusion map from keypoint heatmap differences and
/// sparsely warped copies of the downscaled source image, then composes the dense flow.
class DenseMotionNetworkImpl : public torch::nn::Module {
public:
    explicit DenseMotionNetworkImpl(const ModelConfig& config);
    /// source_small: [B, 3, h, w] source image at feature-grid resolution.
    motion::DenseMotion forward(const torch::Tensor& source_small, const motion::SparseMotions& sparse,
                                const motion::KeypointSet& source, const motion::KeypointSet& driving);

private:
    ModelConfig config_;
    Hourglass hourglass_{nullptr};
    torch::nn::Conv2d mask_head_{nullptr};
    torch::nn::Conv2d occlusion_head_{nullptr};
};
TORCH_MODULE(DenseMotionNetwork);

/// Appearance encoder producing f_s at the feature grid.
class SourceEncoderImpl : public torch::nn::Module {
public:
    explicit SourceEncoderImpl(const ModelConfig& config);
    torch::Tensor forward(const torch::Tensor& images);

private:
    torch::nn::Conv2d stem_{nullptr};
    torch::nn::ModuleList down_{};
};
TORCH_MODULE(SourceEncoder);

} // namespace reenact
