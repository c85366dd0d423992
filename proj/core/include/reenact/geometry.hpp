// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "reenact/image.hpp"

#include <torch/types.h>

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace reenact::geometry {

/// Depth and unit normals for a batch of frames.
struct GeometryMaps {
    torch::Tensor depth;  ///< [B, 1, H, W], strictly positive
    torch::Tensor normal; ///< [B, 3, H, W], unit length, n_z > 0
};

/// Frozen, differentiable single-image depth estimator. Gradients flow to the input
/// image; parameters never change.
class GeometryExtractor {
public:
    virtual ~GeometryExtractor() = default;

    virtual std::string id() const = 0;
    /// images [B, 3, H, W] in [0, 1] -> depth [B, 1, H, W] > 0.
    virtual torch::Tensor depth(const torch::Tensor& images) const = 0;
    /// Every tensor the backend reads during depth(); all have requires_grad == false.
    virtual std::vector<torch::Tensor> parameters() const = 0;
};

/// normal ∝ (-dd/dx, -dd/dy, 1) from central differences (one-sided on borders), where
/// x runs along columns and y along rows. depth: [B, 1, H, W], H, W >= 2.
torch::Tensor normal_from_depth(const torch::Tensor& depth, double pixel_spacing = 1.0);

/// Runs the backend and derives normals. Throws NumericalError on non-finite or
/// non-positive depth.
GeometryMaps extract_geometry(const torch::Tensor& images, const GeometryExtractor& extractor,
                              double pixel_spacing = 1.0);

/// Rec. 601 luma of [B, 3, H, W] images -> [B, 1, H, W].
torch::Tensor luminance(const torch::Tensor& images);

/// depth = 1 / (offset + gaussian_blur(luma)); bright regions read as near.
class LuminanceDepthExtractor final : public GeometryExtractor {
public:
    explicit LuminanceDepthExtractor(std::int64_t kernel_size = 5, double sigma = 1.0, double offset = 0.5);

    std::string id() const override { return "baseline"; }
    torch::Tensor depth(const torch::Tensor& images) const override;
    std::vector<torch::Tensor> parameters() const override { return {kernel_, offset_}; }

private:
    torch::Tensor kernel_; ///< [1, 1, k, k]
    torch::Tensor offset_; ///< scalar
};

enum class SurfaceKind { plane, sphere_cap, gaussian_bump };

/// Orthographic, Lambertian height-field scene in pixel-spacing units centred on the image.
struct SceneSpec {
    SurfaceKind kind = SurfaceKind::sphere_cap;
    std::int64_t size = 64;
    double pixel_spacing = 1.0;
    double base_depth = 100.0;
    double center_x = 0.0;
    double center_y = 0.0;
    double radius = 24.0;    ///< sphere cap
    double amplitude = 10.0; ///< gaussian bump height
    double sigma = 10.0;     ///< gaussian bump width
    double slope_x = 0.0;    ///< plane
    double slope_y = 0.0;    ///< plane
    std::array<double, 3> light{0.0, 0.0, 1.0};
    std::array<double, 3> albedo{0.9, 0.9, 0.9};
};

struct SyntheticScene {
    Image image;
    GeometryMaps truth; ///< batch of one, analytic depth and normals
};

/// Renders shading = albedo * max(0, n·l) with exact depth/normals. Throws
/// ValidationError for invalid specs (non-positive radii, depth, unnormalized light).
SyntheticScene render_synthetic_scene(const SceneSpec& spec);

/// Test oracle backend tied to one synthetic scene:
///   depth(I) = d_true * exp(gain * (luma(I) - luma(I_scene)))
/// Exact on the scene's own rendering and differentiable everywhere.
class SyntheticOracleExtractor final : public GeometryExtractor {
public:
    explicit SyntheticOracleExtractor(const SceneSpec& spec, double gain = 0.5);

    std::string id() const override { return "oracle"; }
    torch::Tensor depth(const torch::Tensor& images) const override;
    std::vector<torch::Tensor> parameters() const override { return {reference_luma_, true_depth_, gain_}; }
    const SyntheticScene& scene() const noexcept { return scene_; }

private:
    SyntheticScene scene_;
    torch::Tensor reference_luma_;
    torch::Tensor true_depth_;
    torch::Tensor gain_;
};

/// Adapter for a pretrained depth network exported as TorchScript. Contract: forward takes
/// [B, 3, H, W] RGB in [0, 1] and returns positive depth [B, 1, H, W].
class ExternalExtractor final : public GeometryExtractor {
public:
    /// Throws IoError with a remediation hint when the file is missing or unreadable.
    explicit ExternalExtractor(const std::filesystem::path& weights);
    ~ExternalExtractor() override;

    std::string id() const override { return "external"; }
    torch::Tensor depth(const torch::Tensor& images) const override;
    std::vector<torch::Tensor> parameters() const override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// "baseline", "oracle" (default sphere-cap scene at image_size) or "external" (needs weights).
std::unique_ptr<GeometryExtractor> make_extractor(const std::string& backend, std::int64_t image_size,
                                                  const std::filesystem::path& weights = {});

} // namespace reenact::geometry
