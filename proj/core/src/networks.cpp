// SPDX-License-Identifier: Apache-2.0
#include "reenact/networks.hpp"

#include "reenact/errors.hpp"

#include <torch/torch.h>

#include <algorithm>

namespace reenact {

namespace F = torch::nn::functional;
namespace nn = torch::nn;

namespace {

nn::Conv2d conv3x3(std::int64_t in, std::int64_t out) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1));
}

std::int64_t level_channels(std::int64_t expansion, std::int64_t level, std::int64_t max_features) {
    return std::min(max_features, expansion << level);
}

void require_finite(const torch::Tensor& t, const char* what) {
    if (!torch::isfinite(t).all().item<bool>()) {
        throw NumericalError(std::string("non-finite network output in ") + what);
    }
}

} // namespace

void ModelConfig::validate() const {
    if (image_size < 8 || keypoints < 1 || feature_stride < 1 || feature_channels < 1 || depth_samples < 1 ||
        color_channels < 1 || ray_hidden < 1 || block_expansion < 1 || hourglass_blocks < 1 ||
        detector_downscale < 1) {
        throw ValidationError("model configuration has non-positive sizes");
    }
    if (image_size % feature_stride != 0 || image_size % detector_downscale != 0) {
        throw ValidationError("image size must be divisible by the feature stride and detector downscale");
    }
    const std::int64_t pyramid = std::int64_t{1} << hourglass_blocks;
    if (feature_size() % pyramid != 0 || (image_size / detector_downscale) % pyramid != 0) {
        throw ValidationError("hourglass depth too large for the configured resolution");
    }
    if (feature_stride != 4) {
        // The encoder and decoder use exactly two resolution steps.
        throw ValidationError("feature stride must be 4");
    }
    if (keypoint_temperature <= 0 || heatmap_variance <= 0 || jacobian_eps <= 0) {
        throw ValidationError("temperature, heatmap variance and Jacobian eps must be positive");
    }
}

DownBlockImpl::DownBlockImpl(std::int64_t in_channels, std::int64_t out_channels)
    : conv_(register_module("conv", conv3x3(in_channels, out_channels))) {}

torch::Tensor DownBlockImpl::forward(const torch::Tensor& x) {
    return F::avg_pool2d(torch::relu(conv_->forward(x)), F::AvgPool2dFuncOptions(2));
}

UpBlockImpl::UpBlockImpl(std::int64_t in_channels, std::int64_t out_channels)
    : conv_(register_module("conv", conv3x3(in_channels, out_channels))) {}

torch::Tensor UpBlockImpl::forward(const torch::Tensor& x) {
    auto up = F::interpolate(x, F::InterpolateFuncOptions()
                                    .scale_factor(std::vector<double>{2.0, 2.0})
                                    .mode(torch::kNearest));
    return torch::relu(conv_->forward(up));
}

HourglassImpl::HourglassImpl(std::int64_t in_channels, std::int64_t block_expansion, std::int64_t blocks,
                             std::int64_t max_features) {
    for (std::int64_t i = 0; i < blocks; ++i) {
        const auto in = i == 0 ? in_channels : level_channels(block_expansion, i, max_features);
        down_->push_back(DownBlock(in, level_channels(block_expansion, i + 1, max_features)));
    }
    for (std::int64_t i = blocks - 1; i >= 0; --i) {
        const auto in = (i == blocks - 1 ? 1 : 2) * level_channels(block_expansion, i + 1, max_features);
        up_->push_back(UpBlock(in, level_channels(block_expansion, i, max_features)));
    }
    register_module("down", down_);
    register_module("up", up_);
    out_channels_ = block_expansion + in_channels;
}

torch::Tensor HourglassImpl::forward(const torch::Tensor& x) {
    std::vector<torch::Tensor> skips{x};
    for (auto& block : *down_) {
        skips.push_back(block->as<DownBlock>()->forward(skips.back()));
    }
    auto out = skips.back();
    skips.pop_back();
    for (auto& block : *up_) {
        out = block->as<UpBlock>()->forward(out);
        out = torch::cat({out, skips.back()}, 1);
        skips.pop_back();
    }
    return out;
}

KeypointDetectorImpl::KeypointDetectorImpl(const ModelConfig& config) : config_(config) {
    hourglass_ = register_module(
        "hourglass", Hourglass(3, config.block_expansion, config.hourglass_blocks, config.max_features));
    heatmap_head_ = register_module(
        "heatmap_head", nn::Conv2d(nn::Conv2dOptions(hourglass_->out_channels(), config.keypoints, 3).padding(1)));
    jacobian_head_ = register_module(
        "jacobian_head",
        nn::Conv2d(nn::Conv2dOptions(hourglass_->out_channels(), 4 * config.keypoints, 3).padding(1)));
    // Start from identity Jacobians everywhere.
    torch::NoGradGuard no_grad;
    jacobian_head_->weight.zero_();
    jacobian_head_->bias.copy_(torch::tensor({1.0f, 0.0f, 0.0f, 1.0f}).repeat({config.keypoints}));
}

motion::KeypointSet KeypointDetectorImpl::forward(const torch::Tensor& images) {
    auto x = images;
    if (config_.detector_downscale > 1) {
        x = F::avg_pool2d(x, F::AvgPool2dFuncOptions(config_.detector_downscale));
    }
    auto features = hourglass_->forward(x);
    auto logits = heatmap_head_->forward(features);
    const auto batch = logits.size(0);
    const auto k = logits.size(1);
    const auto h = logits.size(2);
    const auto w = logits.size(3);

    auto heatmap = torch::softmax(logits.reshape({batch, k, h * w}) / config_.keypoint_temperature, -1);
    auto grid = motion::identity_grid(h, w, logits.options().requires_grad(false)).reshape({h * w, 2});
    motion::KeypointSet out;
    out.positions = torch::matmul(heatmap, grid); // [B, K, 2]

    if (config_.freeze_jacobians) {
        out.jacobians = torch::eye(2, logits.options()).expand({batch, k, 2, 2}).clone();
    } else {
        auto jac_map = jacobian_head_->forward(features).reshape({batch, k, 4, h * w});
        out.jacobians = (jac_map * heatmap.unsqueeze(2)).sum(-1).reshape({batch, k, 2, 2});
    }
    require_finite(out.positions, "keypoint detector");
    require_finite(out.jacobians, "keypoint detector");
    return out;
}

DenseMotionNetworkImpl::DenseMotionNetworkImpl(const ModelConfig& config) : config_(config) {
    const auto in_channels = (config.keypoints + 1) * 4;
    hourglass_ = register_module(
        "hourglass", Hourglass(in_channels, config.block_expansion, config.hourglass_blocks, config.max_features));
    mask_head_ = register_module(
        "mask_head", nn::Conv2d(nn::Conv2dOptions(hourglass_->out_channels(), config.keypoints + 1, 3).padding(1)));
    occlusion_head_ = register_module(
        "occlusion_head", nn::Conv2d(nn::Conv2dOptions(hourglass_->out_channels(), 1, 3).padding(1)));
}

motion::DenseMotion DenseMotionNetworkImpl::forward(const torch::Tensor& source_small,
                                                    const motion::SparseMotions& sparse,
                                                    const motion::KeypointSet& source,
                                                    const motion::KeypointSet& driving) {
    const auto batch = sparse.flows.size(0);
    const auto k = sparse.flows.size(1);
    const auto h = sparse.flows.size(2);
    const auto w = sparse.flows.size(3);
    if (source_small.size(0) != batch || source_small.size(2) != h || source_small.size(3) != w ||
        k != config_.keypoints) {
        throw ValidationError("dense motion inputs disagree on batch, keypoint count or grid size");
    }

    auto heat = motion::keypoint_heatmaps(driving.positions, h, w, config_.heatmap_variance) -
                motion::keypoint_heatmaps(source.positions, h, w, config_.heatmap_variance);
    heat = torch::cat({torch::zeros({batch, 1, h, w}, heat.options()), heat}, 1).unsqueeze(2); // [B,K+1,1,h,w]

    auto identity = sparse.identity_grid.to(sparse.flows.dtype()).unsqueeze(0).unsqueeze(0).expand({batch, 1, h, w, 2});
    auto flows = torch::cat({identity, sparse.flows}, 1).reshape({batch * (k + 1), h, w, 2});
    auto repeated = source_small.unsqueeze(1).expand({batch, k + 1, 3, h, w}).reshape({batch * (k + 1), 3, h, w});
    auto deformed = motion::backward_warp(repeated, flows).reshape({batch, k + 1, 3, h, w});

    auto input = torch::cat({heat, deformed}, 2).reshape({batch, (k + 1) * 4, h, w});
    auto features = hourglass_->forward(input);

    motion::DenseMotion out;
    out.masks = torch::softmax(mask_head_->forward(features), 1);
    out.occlusion = torch::sigmoid(occlusion_head_->forward(features));
    out.flow = motion::compose_dense_flow(out.masks, sparse);
    return out;
}

SourceEncoderImpl::SourceEncoderImpl(const ModelConfig& config) {
    const auto stem_channels = std::max<std::int64_t>(config.feature_channels / 2, 8);
    stem_ = register_module("stem", conv3x3(3, stem_channels));
    down_->push_back(DownBlock(stem_channels, config.feature_channels));
    down_->push_back(DownBlock(config.feature_channels, config.feature_channels));
    register_module("down", down_);
}

torch::Tensor SourceEncoderImpl::forward(const torch::Tensor& images) {
    auto x = torch::relu(stem_->forward(images));
    for (auto& block : *down_) {
        x = block->as<DownBlock>()->forward(x);
    }
    return x;
}

} // namespace reenact
