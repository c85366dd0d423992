// SPDX-License-Identifier: Apache-2.0
#include "reenact/fvr.hpp"

#include "reenact/errors.hpp"

#include <torch/torch.h>

#include <algorithm>

namespace reenact::fvr {

namespace F = torch::nn::functional;
namespace nn = torch::nn;

namespace {

nn::Conv2d conv3x3(std::int64_t in, std::int64_t out, bool bias = true) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1).bias(bias));
}

nn::Conv2d conv1x1(std::int64_t in, std::int64_t out, bool bias = true) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, 1).bias(bias));
}

torch::Tensor upsample2(const torch::Tensor& x) {
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .scale_factor(std::vector<double>{2.0, 2.0})
                                 .mode(torch::kNearest));
}

} // namespace

FieldExtractorImpl::FieldExtractorImpl(std::int64_t in_channels, std::int64_t out_channels, std::int64_t hidden)
    : first_(register_module("first", conv3x3(in_channels, hidden))),
      second_(register_module("second", conv3x3(hidden, out_channels))),
      out_channels_(out_channels) {}

torch::Tensor FieldExtractorImpl::forward(const torch::Tensor& warped) {
    if (warped.dim() != 4 || warped.size(1) != first_->options.in_channels()) {
        throw ValidationError("field extractor input must be [B, C, H, W] with the configured channel count");
    }
    return second_->forward(torch::relu(first_->forward(warped)));
}

void FieldExtractorImpl::zero_bias() {
    torch::NoGradGuard no_grad;
    first_->bias.zero_();
    second_->bias.zero_();
}

RaySamplerImpl::RaySamplerImpl(std::int64_t density_channels, std::int64_t color_channels, std::int64_t samples,
                               std::int64_t out_channels, std::int64_t hidden)
    : samples_(samples), out_channels_(out_channels) {
    mlp_ = register_module("mlp", nn::Sequential(conv1x1(density_channels + color_channels, hidden), nn::ReLU(),
                                                 conv1x1(hidden, hidden), nn::ReLU(),
                                                 conv1x1(hidden, samples * (1 + out_channels))));
}

RaySamples RaySamplerImpl::forward(const torch::Tensor& density_features, const torch::Tensor& color_features) {
    if (density_features.dim() != 4 || color_features.dim() != 4 ||
        density_features.sizes().slice(2) != color_features.sizes().slice(2) ||
        density_features.size(0) != color_features.size(0)) {
        throw ValidationError("density and color features must share batch and spatial dims");
    }
    auto raw = mlp_->forward(torch::cat({density_features, color_features}, 1));
    const auto batch = raw.size(0);
    const auto h = raw.size(2);
    const auto w = raw.size(3);
    RaySamples samples;
    samples.density = F::softplus(raw.narrow(1, 0, samples_));
    samples.color = raw.narrow(1, samples_, samples_ * out_channels_).reshape({batch, samples_, out_channels_, h, w});
    if (!torch::isfinite(samples.density).all().item<bool>() || !torch::isfinite(samples.color).all().item<bool>()) {
        throw NumericalError("non-finite ray samples");
    }
    return samples;
}

SpadeImpl::SpadeImpl(std::int64_t channels, std::int64_t condition_channels, std::int64_t hidden)
    : shared_(register_module("shared", conv3x3(condition_channels, hidden))),
      gamma_(register_module("gamma", conv3x3(hidden, channels))),
      beta_(register_module("beta", conv3x3(hidden, channels))) {}

torch::Tensor SpadeImpl::forward(const torch::Tensor& x, const torch::Tensor& condition) {
    auto normalized = F::instance_norm(x, F::InstanceNormFuncOptions().eps(1e-5));
    auto cond = condition;
    if (cond.size(2) != x.size(2) || cond.size(3) != x.size(3)) {
        cond = F::interpolate(cond, F::InterpolateFuncOptions()
                                        .size(std::vector<std::int64_t>{x.size(2), x.size(3)})
                                        .mode(torch::kNearest));
    }
    auto hidden = torch::relu(shared_->forward(cond));
    return normalized * (1 + gamma_->forward(hidden)) + beta_->forward(hidden);
}

SpadeResBlockImpl::SpadeResBlockImpl(std::int64_t in_channels, std::int64_t out_channels,
                                     std::int64_t condition_channels) {
    const auto middle = std::min(in_channels, out_channels);
    norm_in_ = register_module("norm_in", Spade(in_channels, condition_channels));
    conv_in_ = register_module("conv_in", conv3x3(in_channels, middle));
    norm_mid_ = register_module("norm_mid", Spade(middle, condition_channels));
    conv_mid_ = register_module("conv_mid", conv3x3(middle, out_channels));
    if (in_channels != out_channels) {
        norm_skip_ = register_module("norm_skip", Spade(in_channels, condition_channels));
        conv_skip_ = register_module("conv_skip", conv1x1(in_channels, out_channels, false));
    }
}

torch::Tensor SpadeResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& condition) {
    auto skip = x;
    if (conv_skip_) {
        skip = conv_skip_->forward(norm_skip_->forward(x, condition));
    }
    auto h = conv_in_->forward(F::leaky_relu(norm_in_->forward(x, condition), F::LeakyReLUFuncOptions().negative_slope(0.2)));
    h = conv_mid_->forward(F::leaky_relu(norm_mid_->forward(h, condition), F::LeakyReLUFuncOptions().negative_slope(0.2)));
    return skip + h;
}

SpadeDecoderImpl::SpadeDecoderImpl(const ModelConfig& config) {
    const auto in_channels = config.feature_channels + config.color_channels;
    const auto width = config.block_expansion;
    blocks_->push_back(SpadeResBlock(in_channels, 2 * width, config.color_channels));
    blocks_->push_back(SpadeResBlock(2 * width, width, config.color_channels));
    blocks_->push_back(SpadeResBlock(width, width / 2, config.color_channels));
    register_module("blocks", blocks_);
    to_rgb_ = register_module("to_rgb", conv3x3(width / 2, 3));
}

torch::Tensor SpadeDecoderImpl::forward(const torch::Tensor& rendered, const torch::Tensor& source_features) {
    if (rendered.dim() != 4 || source_features.dim() != 4 || rendered.size(0) != source_features.size(0) ||
        rendered.sizes().slice(2) != source_features.sizes().slice(2)) {
        throw ValidationError("decoder inputs must share batch and spatial dims");
    }
    auto x = torch::cat({source_features, rendered}, 1);
    for (std::size_t i = 0; i < blocks_->size(); ++i) {
        if (i > 0) {
            x = upsample2(x);
        }
        x = blocks_[i]->as<SpadeResBlock>()->forward(x, rendered);
    }
    return torch::sigmoid(to_rgb_->forward(F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2))));
}

} // namespace reenact::fvr
