// SPDX-License-Identifier: Apache-2.0
#include "reenact/errors.hpp"
#include "reenact/fvr.hpp"

#include <torch/torch.h>

#include <cmath>
#include <vector>

namespace reenact::fvr {

namespace {

using torch::autograd::AutogradContext;
using torch::autograd::tensor_list;

// Layouts: density [B, D, P], color [B, D, C, P], out [B, C, P].
template <typename T>
void render_forward(const T* density, const T* color, T* out, std::int64_t batch, std::int64_t samples,
                    std::int64_t channels, std::int64_t pixels) {
    for (std::int64_t b = 0; b < batch; ++b) {
        const T* sigma_b = density + b * samples * pixels;
        const T* color_b = color + b * samples * channels * pixels;
        T* out_b = out + b * channels * pixels;
        for (std::int64_t p = 0; p < pixels; ++p) {
            T optical_depth = 0;
            for (std::int64_t j = 0; j < samples; ++j) {
                const T sigma = sigma_b[j * pixels + p];
                const T weight = std::exp(-optical_depth) * -std::expm1(-sigma);
                const T* c = color_b + j * channels * pixels + p;
                for (std::int64_t ch = 0; ch < channels; ++ch) {
                    out_b[ch * pixels + p] += weight * c[ch * pixels];
                }
                optical_depth += sigma;
            }
        }
    }
}

// d out_c / d c_jc = w_j
// d L / d sigma_m = T_{m+1} g_m - sum_{j>m} w_j g_j,   g_j = sum_c G_c c_jc
template <typename T>
void render_backward(const T* density, const T* color, const T* grad_out, T* grad_density, T* grad_color,
                     std::int64_t batch, std::int64_t samples, std::int64_t channels, std::int64_t pixels) {
    std::vector<T> weight(static_cast<std::size_t>(samples));
    std::vector<T> next_transmittance(static_cast<std::size_t>(samples));
    std::vector<T> projected(static_cast<std::size_t>(samples));
    for (std::int64_t b = 0; b < batch; ++b) {
        const T* sigma_b = density + b * samples * pixels;
        const T* color_b = color + b * samples * channels * pixels;
        const T* grad_b = grad_out + b * channels * pixels;
        T* gsigma_b = grad_density + b * samples * pixels;
        T* gcolor_b = grad_color + b * samples * channels * pixels;
        for (std::int64_t p = 0; p < pixels; ++p) {
            T optical_depth = 0;
            for (std::int64_t j = 0; j < samples; ++j) {
                const T sigma = sigma_b[j * pixels + p];
                weight[j] = std::exp(-optical_depth) * -std::expm1(-sigma);
                optical_depth += sigma;
                next_transmittance[j] = std::exp(-optical_depth);
                T g = 0;
                for (std::int64_t ch = 0; ch < channels; ++ch) {
                    const T upstream = grad_b[ch * pixels + p];
                    g += upstream * color_b[(j * channels + ch) * pixels + p];
                    gcolor_b[(j * channels + ch) * pixels + p] = weight[j] * upstream;
                }
                projected[j] = g;
            }
            T tail = 0;
            for (std::int64_t m = samples - 1; m >= 0; --m) {
                gsigma_b[m * pixels + p] = next_transmittance[m] * projected[m] - tail;
                tail += weight[m] * projected[m];
            }
        }
    }
}

struct Shape {
    std::int64_t batch, samples, channels, pixels;
};

Shape validate(const torch::Tensor& density, const torch::Tensor& color) {
    if (density.dim() != 4 || color.dim() != 5) {
        throw ValidationError("volume_render expects density [B, D, H, W] and color [B, D, C, H, W]");
    }
    if (color.size(0) != density.size(0) || color.size(1) != density.size(1) || color.size(3) != density.size(2) ||
        color.size(4) != density.size(3)) {
        throw ValidationError("density and color ray samples disagree in shape");
    }
    if (density.scalar_type() != color.scalar_type()) {
        throw ValidationError("density and color must share a dtype");
    }
    if (density.numel() > 0 && density.min().item<double>() < 0.0) {
        throw ValidationError("volume_render contract violation: negative density");
    }
    return {density.size(0), density.size(1), color.size(2), density.size(2) * density.size(3)};
}

class VolumeRenderFunction : public torch::autograd::Function<VolumeRenderFunction> {
public:
    static torch::Tensor forward(AutogradContext* ctx, const torch::Tensor& density, const torch::Tensor& color) {
        const auto shape = validate(density, color);
        auto sigma = density.contiguous();
        auto rgb = color.contiguous();
        auto out = torch::zeros({shape.batch, shape.channels, density.size(2), density.size(3)}, density.options());
        AT_DISPATCH_FLOATING_TYPES(density.scalar_type(), "volume_render_forward", [&] {
            render_forward<scalar_t>(sigma.data_ptr<scalar_t>(), rgb.data_ptr<scalar_t>(), out.data_ptr<scalar_t>(),
                                     shape.batch, shape.samples, shape.channels, shape.pixels);
        });
        ctx->save_for_backward({sigma, rgb});
        return out;
    }

    static tensor_list backward(AutogradContext* ctx, tensor_list grad_outputs) {
        auto saved = ctx->get_saved_variables();
        const auto& sigma = saved[0];
        const auto& rgb = saved[1];
        auto grad = grad_outputs[0].contiguous();
        const Shape shape{sigma.size(0), sigma.size(1), rgb.size(2), sigma.size(2) * sigma.size(3)};
        auto grad_density = torch::empty_like(sigma);
        auto grad_color = torch::empty_like(rgb);
        AT_DISPATCH_FLOATING_TYPES(sigma.scalar_type(), "volume_render_backward", [&] {
            render_backward<scalar_t>(sigma.data_ptr<scalar_t>(), rgb.data_ptr<scalar_t>(), grad.data_ptr<scalar_t>(),
                                      grad_density.data_ptr<scalar_t>(), grad_color.data_ptr<scalar_t>(), shape.batch,
                                      shape.samples, shape.channels, shape.pixels);
        });
        return {grad_density, grad_color};
    }
};

} // namespace

torch::Tensor volume_render(const RaySamples& samples) {
    return VolumeRenderFunction::apply(samples.density, samples.color);
}

torch::Tensor transmittance(const torch::Tensor& density) {
    if (density.dim() != 4) {
        throw ValidationError("transmittance expects density [B, D, H, W]");
    }
    auto cumulative = torch::cumsum(density, 1);
    auto leading = torch::zeros_like(density.narrow(1, 0, 1));
    return torch::exp(-torch::cat({leading, cumulative}, 1));
}

torch::Tensor render_weights(const torch::Tensor& density) {
    auto tau = transmittance(density);
    return tau.narrow(1, 0, density.size(1)) * -torch::expm1(-density);
}

} // namespace reenact::fvr
