// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "reenact/image.hpp"

#include <torch/types.h>

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace reenact::metrics {

inline constexpr double kPsnrCap = 100.0;

/// Mean absolute difference on the [0, 1] scale. Shapes must match.
double l1(const torch::Tensor& x, const torch::Tensor& y);
/// Peak signal-to-noise ratio for unit peak, capped at 100 dB.
double psnr(const torch::Tensor& x, const torch::Tensor& y);
/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2, valid
/// convolution. Accepts [C, H, W] or [B, C, H, W] with H, W >= 11.
double ssim(const torch::Tensor& x, const torch::Tensor& y);

/// Landmark detector used by AKD. detect() returns [L, 2] pixel coordinates (x, y), or
/// nullopt when nothing is found.
class LandmarkPlugin {
public:
    virtual ~LandmarkPlugin() = default;
    virtual std::string id() const = 0;
    virtual std::optional<torch::Tensor> detect(const Image& frame) const = 0;
};

/// Built-in stand-in: luminance centroid of the whole frame and of its four quadrants
/// (five points). Fails on frames with no luminance in some quadrant.
class CentroidLandmarks final : public LandmarkPlugin {
public:
    std::string id() const override { return "luminance-centroid-5"; }
    std::optional<torch::Tensor> detect(const Image& frame) const override;
};

struct AkdResult {
    double value = 0.0;
    std::int64_t frames_used = 0;
    std::int64_t frames_skipped = 0;
};

/// Mean Euclidean landmark distance over frames where both detections succeed. Throws
/// Error("no detectable faces") when every frame fails.
AkdResult akd(const std::vector<Image>& predicted, const std::vector<Image>& ground_truth,
              const LandmarkPlugin& plugin);

/// Frechet distance between Gaussian fits of two feature sets [N, d]; matrix square root
/// via symmetric eigendecomposition with negative eigenvalues clipped to zero. Each set
/// needs at least d + 1 samples.
double fid(const torch::Tensor& set_a, const torch::Tensor& set_b);

/// Frozen, deterministic image embedder for FID.
class EmbedderPlugin {
public:
    virtual ~EmbedderPlugin() = default;
    virtual std::string id() const = 0;
    virtual std::int64_t dimension() const = 0;
    /// images [B, 3, H, W] -> [B, dimension()]
    virtual torch::Tensor embed(const torch::Tensor& images) const = 0;
};

/// Built-in analytic embedder: per-channel means over a 2x2 grid plus per-channel
/// standard deviations (15 features).
class PooledStatsEmbedder final : public EmbedderPlugin {
public:
    std::string id() const override { return "pooled-stats-15"; }
    std::int64_t dimension() const override { return 15; }
    torch::Tensor embed(const torch::Tensor& images) const override;
};

/// Identity embedder for CSIM; no default backend ships.
class IdentityPlugin {
public:
    virtual ~IdentityPlugin() = default;
    virtual std::string id() const = 0;
    virtual torch::Tensor embed(const torch::Tensor& images) const = 0; ///< [B, d]
};

/// Mean cosine similarity of identity embeddings; nullopt without a plugin.
std::optional<double> csim(const std::vector<Image>& predicted, const std::vector<Image>& identity_frames,
                           const IdentityPlugin* plugin);

/// Learned perceptual distance; interface only.
class LpipsPlugin {
public:
    virtual ~LpipsPlugin() = default;
    virtual std::string id() const = 0;
    virtual double distance(const torch::Tensor& x, const torch::Tensor& y) const = 0;
};

struct MetricValue {
    std::optional<double> value; ///< nullopt = unavailable
    std::string backend;
    std::int64_t count = 0;
    std::string note;
};

struct MetricReport {
    std::map<std::string, MetricValue> metrics;
    std::string to_json() const; ///< pretty JSON
};

struct EvaluationPlugins {
    const LandmarkPlugin* landmarks = nullptr;
    const EmbedderPlugin* embedder = nullptr;
    const IdentityPlugin* identity = nullptr;
    const LpipsPlugin* lpips = nullptr;
};

/// Pairs frames by position. Metrics whose plugin is missing (or, for FID, whose sample
/// count is below dimension + 1) are reported as unavailable.
MetricReport evaluate(const std::vector<Image>& predicted, const std::vector<Image>& ground_truth,
                      const EvaluationPlugins& plugins);

} // namespace reenact::metrics
