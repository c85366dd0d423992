// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "reenact/networks.hpp"

#include <torch/nn.h>

namespace reenact::fvr {

/// Per-pixel samples along the frontal orthogonal ray.
struct RaySamples {
    torch::Tensor density; ///< [B, D, H, W], non-negative
    torch::Tensor color;   ///< [B, D, C, H, W]

    std::int64_t samples() const { return density.size(1); }
    std::int64_t pixels() const { return density.size(2) * density.size(3); }
};

/// Volume rendering along each ray:
///   out_i = sum_j T_j (1 - exp(-sigma_ij)) c_ij,  T_j = exp(-sum_{k<j} sigma_ik),  T_1 = 1.
/// Returns [B, C, H, W]. Differentiable w.r.t. density and color through a hand-written
/// backward pass. Throws ValidationError on negative density.
torch::Tensor volume_render(const RaySamples& samples);

/// Transmittance profile T_1 .. T_{D+1} per pixel: [B, D+1, H, W].
torch::Tensor transmittance(const torch::Tensor& density);

/// Per-sample compositing weights T_j (1 - exp(-sigma_j)): [B, D, H, W].
torch::Tensor render_weights(const torch::Tensor& density);

/// Two 3x3 convolutions lifting warped features into a density (D channels) or
/// color (C_c channels) field.
class FieldExtractorImpl : public torch::nn::Module {
public:
    FieldExtractorImpl(std::int64_t in_channels, std::int64_t out_channels, std::int64_t hidden = 32);
    torch::Tensor forward(const torch::Tensor& warped);
    /// Zeroes both bias vectors (used by linearity checks).
    void zero_bias();
    std::int64_t out_channels() const noexcept { return out_channels_; }

private:
    torch::nn::Conv2d first_{nullptr};
    torch::nn::Conv2d second_{nullptr};
    std::int64_t out_channels_ = 0;
};
TORCH_MODULE(FieldExtractor);

/// f_theta: a per-pixel MLP (1x1 convolutions) from concatenated density and color
/// features to D softplus densities and D x C_out colors. No cross-pixel coupling.
class RaySamplerImpl : public torch::nn::Module {
public:
    RaySamplerImpl(std::int64_t density_channels, std::int64_t color_channels, std::int64_t samples,
                   std::int64_t out_channels, std::int64_t hidden = 64);
    RaySamples forward(const torch::Tensor& density_features, const torch::Tensor& color_features);

private:
    std::int64_t samples_;
    std::int64_t out_channels_;
    torch::nn::Sequential mlp_{nullptr};
};
TORCH_MODULE(RaySampler);

/// Spatially-adaptive normalization: instance-normalised x modulated by
/// (1 + gamma(cond), beta(cond)).
class SpadeImpl : public torch::nn::Module {
public:
    SpadeImpl(std::int64_t channels, std::int64_t condition_channels, std::int64_t hidden = 32);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& condition);

private:
    torch::nn::Conv2d shared_{nullptr};
    torch::nn::Conv2d gamma_{nullptr};
    torch::nn::Conv2d beta_{nullptr};
};
TORCH_MODULE(Spade);

class SpadeResBlockImpl : public torch::nn::Module {
public:
    SpadeResBlockImpl(std::int64_t in_channels, std::int64_t out_channels, std::int64_t condition_channels);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& condition);

private:
    Spade norm_in_{nullptr};
    Spade norm_mid_{nullptr};
    torch::nn::Conv2d conv_in_{nullptr};
    torch::nn::Conv2d conv_mid_{nullptr};
    Spade norm_skip_{nullptr};
    torch::nn::Conv2d conv_skip_{nullptr};
};
TORCH_MODULE(SpadeResBlock);

/// Shallow decoder: concat(f_s, F_r) -> SPADE res-blocks conditioned on F_r with two x2
/// upsamplings -> sigmoid RGB at image resolution.
class SpadeDecoderImpl : public torch::nn::Module {
public:
    explicit SpadeDecoderImpl(const ModelConfig& config);
    torch::Tensor forward(const torch::Tensor& rendered, const torch::Tensor& source_features);

private:
    torch::nn::ModuleList blocks_{};
    torch::nn::Conv2d to_rgb_{nullptr};
};
TORCH_MODULE(SpadeDecoder);

} // namespace reenact::fvr
