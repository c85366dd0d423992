// SPDX-License-Identifier: Apache-2.0
#include "reenact/geometry.hpp"

#include "reenact/errors.hpp"

#include <torch/script.h>
#include <torch/torch.h>

#include <cmath>

namespace reenact::geometry {

namespace F = torch::nn::functional;

namespace {

void require_images(const torch::Tensor& images) {
    if (images.dim() != 4 || images.size(1) != 3) {
        throw ValidationError("geometry backends expect images [B, 3, H, W]");
    }
}

// Central differences along `dim`, one-sided at both ends.
torch::Tensor derivative(const torch::Tensor& depth, std::int64_t dim, double spacing) {
    const auto n = depth.size(dim);
    if (n < 2) {
        throw ValidationError("depth map must be at least 2x2");
    }
    auto first = (depth.narrow(dim, 1, 1) - depth.narrow(dim, 0, 1)) / spacing;
    auto last = (depth.narrow(dim, n - 1, 1) - depth.narrow(dim, n - 2, 1)) / spacing;
    if (n == 2) {
        return torch::cat({first, last}, dim);
    }
    auto interior = (depth.narrow(dim, 2, n - 2) - depth.narrow(dim, 0, n - 2)) / (2.0 * spacing);
    return torch::cat({first, interior, last}, dim);
}

} // namespace

torch::Tensor normal_from_depth(const torch::Tensor& depth, double pixel_spacing) {
    if (depth.dim() != 4 || depth.size(1) != 1) {
        throw ValidationError("normal_from_depth expects depth [B, 1, H, W]");
    }
    if (!(pixel_spacing > 0.0)) {
        throw ValidationError("pixel spacing must be positive");
    }
    auto dx = derivative(depth, 3, pixel_spacing);
    auto dy = derivative(depth, 2, pixel_spacing);
    auto norm = torch::sqrt(dx.square() + dy.square() + 1.0);
    return torch::cat({-dx / norm, -dy / norm, 1.0 / norm}, 1);
}

GeometryMaps extract_geometry(const torch::Tensor& images, const GeometryExtractor& extractor, double pixel_spacing) {
    require_images(images);
    GeometryMaps maps;
    maps.depth = extractor.depth(images);
    if (maps.depth.dim() != 4 || maps.depth.size(1) != 1 || maps.depth.size(0) != images.size(0) ||
        maps.depth.size(2) != images.size(2) || maps.depth.size(3) != images.size(3)) {
        throw ValidationError("geometry backend '" + extractor.id() + "' returned a depth map of the wrong shape");
    }
    if (!torch::isfinite(maps.depth).all().item<bool>()) {
        throw NumericalError("geometry backend '" + extractor.id() + "' produced non-finite depth");
    }
    if (!(maps.depth.min().item<double>() > 0.0)) {
        throw NumericalError("geometry backend '" + extractor.id() + "' produced non-positive depth");
    }
    maps.normal = normal_from_depth(maps.depth, pixel_spacing);
    return maps;
}

torch::Tensor luminance(const torch::Tensor& images) {
    require_images(images);
    return 0.299 * images.narrow(1, 0, 1) + 0.587 * images.narrow(1, 1, 1) + 0.114 * images.narrow(1, 2, 1);
}

LuminanceDepthExtractor::LuminanceDepthExtractor(std::int64_t kernel_size, double sigma, double offset) {
    if (kernel_size < 1 || kernel_size % 2 == 0 || !(sigma > 0.0) || !(offset > 0.0)) {
        throw ValidationError("luminance depth needs an odd kernel, positive sigma and positive offset");
    }
    auto axis = torch::arange(kernel_size, torch::kFloat64) - static_cast<double>(kernel_size / 2);
    auto g = torch::exp(-axis.square() / (2.0 * sigma * sigma));
    g = g / g.sum();
    kernel_ = torch::outer(g, g).reshape({1, 1, kernel_size, kernel_size}).to(torch::kFloat32);
    offset_ = torch::tensor(offset, torch::kFloat32);
}

torch::Tensor LuminanceDepthExtractor::depth(const torch::Tensor& images) const {
    auto luma = luminance(images);
    const auto pad = kernel_.size(-1) / 2;
    auto padded = F::pad(luma, F::PadFuncOptions({pad, pad, pad, pad}).mode(torch::kReplicate));
    auto smooth = F::conv2d(padded, kernel_.to(images.dtype()));
    return 1.0 / (offset_.to(images.dtype()) + smooth);
}

SyntheticScene render_synthetic_scene(const SceneSpec& spec) {
    const double light_norm = std::sqrt(spec.light[0] * spec.light[0] + spec.light[1] * spec.light[1] +
                                        spec.light[2] * spec.light[2]);
    if (std::abs(light_norm - 1.0) > 1e-6) {
        throw ValidationError("light direction must be normalized");
    }
    if (spec.size < 3 || !(spec.pixel_spacing > 0.0) || !(spec.base_depth > 0.0)) {
        throw ValidationError("scene needs size >= 3, positive spacing and positive base depth");
    }
    for (double a : spec.albedo) {
        if (a < 0.0 || a > 1.0) {
            throw ValidationError("albedo must lie in [0, 1]");
        }
    }

    const auto n = spec.size;
    auto coords = (torch::arange(n, torch::kFloat64) - (n - 1) / 2.0) * spec.pixel_spacing;
    auto grid = torch::meshgrid({coords, coords}, "ij");
    auto x = grid[1] - spec.center_x;
    auto y = grid[0] - spec.center_y;

    torch::Tensor depth, dx, dy;
    switch (spec.kind) {
    case SurfaceKind::plane:
        depth = spec.base_depth + spec.slope_x * grid[1] + spec.slope_y * grid[0];
        dx = torch::full_like(depth, spec.slope_x);
        dy = torch::full_like(depth, spec.slope_y);
        break;
    case SurfaceKind::sphere_cap: {
        if (!(spec.radius > 0.0)) {
            throw ValidationError("sphere radius must be positive");
        }
        auto r2 = x.square() + y.square();
        auto inside = r2 < spec.radius * spec.radius;
        auto height = torch::sqrt((spec.radius * spec.radius - r2).clamp_min(0.0));
        depth = spec.base_depth - height;
        auto safe = height.clamp_min(1e-12);
        dx = torch::where(inside, x / safe, torch::zeros_like(x));
        dy = torch::where(inside, y / safe, torch::zeros_like(y));
        break;
    }
    case SurfaceKind::gaussian_bump: {
        if (!(spec.sigma > 0.0) || spec.amplitude < 0.0) {
            throw ValidationError("gaussian bump needs positive sigma and non-negative amplitude");
        }
        auto bump = spec.amplitude * torch::exp(-(x.square() + y.square()) / (2.0 * spec.sigma * spec.sigma));
        depth = spec.base_depth - bump;
        dx = bump * x / (spec.sigma * spec.sigma);
        dy = bump * y / (spec.sigma * spec.sigma);
        break;
    }
    }
    if (!(depth.min().item<double>() > 0.0)) {
        throw ValidationError("scene depth must stay positive; increase base_depth");
    }

    auto norm = torch::sqrt(dx.square() + dy.square() + 1.0);
    auto normal = torch::stack({-dx / norm, -dy / norm, 1.0 / norm});
    // Exact normals where the analytic form is available in closed form.
    if (spec.kind == SurfaceKind::sphere_cap) {
        auto r2 = x.square() + y.square();
        auto inside = (r2 < spec.radius * spec.radius).unsqueeze(0);
        auto height = torch::sqrt((spec.radius * spec.radius - r2).clamp_min(0.0));
        auto sphere = torch::stack({-x, -y, height}) / spec.radius;
        normal = torch::where(inside, sphere, normal);
    }

    auto light = torch::tensor({spec.light[0], spec.light[1], spec.light[2]}, torch::kFloat64).reshape({3, 1, 1});
    auto shading = (normal * light).sum(0).clamp_min(0.0);
    auto albedo = torch::tensor({spec.albedo[0], spec.albedo[1], spec.albedo[2]}, torch::kFloat64).reshape({3, 1, 1});

    SyntheticScene scene;
    scene.image = Image((albedo * shading).clamp(0.0, 1.0).to(torch::kFloat32));
    scene.truth.depth = depth.reshape({1, 1, n, n});
    scene.truth.normal = normal.unsqueeze(0);
    return scene;
}

SyntheticOracleExtractor::SyntheticOracleExtractor(const SceneSpec& spec, double gain)
    : scene_(render_synthetic_scene(spec)) {
    reference_luma_ = luminance(scene_.image.batched().to(torch::kFloat64));
    true_depth_ = scene_.truth.depth;
    gain_ = torch::tensor(gain, torch::kFloat64);
}

torch::Tensor SyntheticOracleExtractor::depth(const torch::Tensor& images) const {
    require_images(images);
    if (images.size(2) != true_depth_.size(2) || images.size(3) != true_depth_.size(3)) {
        throw ValidationError("oracle backend is bound to a " + std::to_string(true_depth_.size(2)) +
                              "px scene; got a different image size");
    }
    const auto dtype = images.scalar_type();
    auto residual = luminance(images) - reference_luma_.to(dtype);
    return true_depth_.to(dtype) * torch::exp(gain_.to(dtype) * residual);
}

struct ExternalExtractor::Impl {
    mutable torch::jit::script::Module module;
};

ExternalExtractor::ExternalExtractor(const std::filesystem::path& weights) : impl_(std::make_unique<Impl>()) {
    if (weights.empty() || !std::filesystem::is_regular_file(weights)) {
        throw IoError("external geometry weights not found at '" + weights.string() +
                      "'; export a pretrained depth network with torch.jit.script/trace (forward: [B,3,H,W] "
                      "RGB in [0,1] -> [B,1,H,W] positive depth) and pass it via --geometry-weights, or use "
                      "--geometry-backend baseline");
    }
    try {
        impl_->module = torch::jit::load(weights.string());
    } catch (const c10::Error& e) {
        throw IoError("cannot load TorchScript depth network '" + weights.string() + "': " + e.what_without_backtrace());
    }
    impl_->module.eval();
    for (auto p : impl_->module.parameters()) {
        p.set_requires_grad(false);
    }
}

ExternalExtractor::~ExternalExtractor() = default;

torch::Tensor ExternalExtractor::depth(const torch::Tensor& images) const {
    require_images(images);
    auto out = impl_->module.forward({images}).toTensor();
    if (out.dim() == 3) {
        out = out.unsqueeze(1);
    }
    return out;
}

std::vector<torch::Tensor> ExternalExtractor::parameters() const {
    std::vector<torch::Tensor> params;
    for (const auto& p : impl_->module.parameters()) {
        params.push_back(p);
    }
    for (const auto& b : impl_->module.buffers()) {
        params.push_back(b);
    }
    return params;
}

std::unique_ptr<GeometryExtractor> make_extractor(const std::string& backend, std::int64_t image_size,
                                                  const std::filesystem::path& weights) {
    if (backend == "baseline") {
        return std::make_unique<LuminanceDepthExtractor>();
    }
    if (backend == "oracle") {
        SceneSpec spec;
        spec.size = image_size;
        spec.radius = 0.375 * static_cast<double>(image_size);
        return std::make_unique<SyntheticOracleExtractor>(spec);
    }
    if (backend == "external") {
        return std::make_unique<ExternalExtractor>(weights);
    }
    throw ValidationError("unknown geometry backend '" + backend + "' (expected baseline, oracle or external)");
}

} // namespace reenact::geometry
