// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <torch/types.h>

#include <array>
#include <functional>

namespace reenact::motion {

inline constexpr std::int64_t kDefaultKeypointCount = 15;
inline constexpr double kDefaultJacobianEps = 1e-4;

/// K landmarks in normalized (x, y) coordinates plus a 2x2 local Jacobian each.
struct KeypointSet {
    torch::Tensor positions; ///< [B, K, 2]
    torch::Tensor jacobians; ///< [B, K, 2, 2]

    std::int64_t batch() const { return positions.size(0); }
    std::int64_t count() const { return positions.size(1); }

    KeypointSet detach() const { return {positions.detach(), jacobians.detach()}; }
    KeypointSet slice(std::int64_t begin, std::int64_t end) const {
        return {positions.slice(0, begin, end), jacobians.slice(0, begin, end)};
    }
};

/// Row-major 2x2 matrix used by the scalar helpers.
using Mat2 = std::array<double, 4>;

struct InverseResult {
    Mat2 inverse{};
    bool regularized = false;
};

/// Exact inverse when |det J| > eps, otherwise the inverse of J + eps*I.
/// Throws NumericalError on NaN input.
InverseResult invert_jacobian(const Mat2& jacobian, double eps = kDefaultJacobianEps);

struct BatchedInverse {
    torch::Tensor inverse;     ///< [..., 2, 2]
    torch::Tensor regularized; ///< [...] bool
};

/// Tensor form of invert_jacobian over any leading shape. Differentiable.
BatchedInverse invert_jacobians(const torch::Tensor& jacobians, double eps = kDefaultJacobianEps);

/// inv(lhs) * rhs computed through the adjugate, so inv(J) * J is exactly I
/// for well-conditioned J.
torch::Tensor solve_jacobians(const torch::Tensor& lhs, const torch::Tensor& rhs, double eps = kDefaultJacobianEps);

/// [H, W, 2] grid of (x, y) pixel centres spanning [-1, 1] (corner-aligned).
torch::Tensor identity_grid(std::int64_t height, std::int64_t width,
                            torch::TensorOptions options = torch::kFloat32);

/// Per-keypoint affine backward flows over the feature grid.
struct SparseMotions {
    torch::Tensor flows;         ///< [B, K, H, W, 2]
    torch::Tensor identity_grid; ///< [H, W, 2]
};

/// tau_k(z) = q_s,k + J_s,k J_d,k^-1 (z - q_d,k) for arbitrary points z: [B, P, 2] -> [B, K, P, 2].
torch::Tensor evaluate_sparse_motion(const KeypointSet& source, const KeypointSet& driving,
                                     const torch::Tensor& points, double eps = kDefaultJacobianEps);

SparseMotions sparse_motion(const KeypointSet& source, const KeypointSet& driving, const torch::Tensor& grid,
                            double eps = kDefaultJacobianEps);

/// Mask-weighted composition of the sparse flows.
struct DenseMotion {
    torch::Tensor masks;     ///< [B, K+1, H, W], channel 0 = background, softmax over channels
    torch::Tensor flow;      ///< [B, H, W, 2]
    torch::Tensor occlusion; ///< [B, 1, H, W] in [0, 1]
};

/// M_0 z + sum_k M_k tau_k(z); masks [B, K+1, H, W].
torch::Tensor compose_dense_flow(const torch::Tensor& masks, const SparseMotions& sparse);

/// Bilinear backward sampling (border clamped, corner-aligned): features [B, C, H, W], flow [B, H', W', 2].
torch::Tensor backward_warp(const torch::Tensor& features, const torch::Tensor& flow);

/// O ⊙ warp(f_s, flow). The occlusion map multiplies after sampling.
torch::Tensor warp_features(const torch::Tensor& source_features, const DenseMotion& motion);

/// Isotropic Gaussians around each keypoint: positions [B, K, 2] -> [B, K, H, W].
torch::Tensor keypoint_heatmaps(const torch::Tensor& positions, std::int64_t height, std::int64_t width,
                                double variance);

/// Relative transfer: q = q_d - q_d0 + q_s, J = J_d J_d0^-1 J_s.
KeypointSet transfer_relative(const KeypointSet& source, const KeypointSet& driving,
                              const KeypointSet& driving_initial, double eps = kDefaultJacobianEps);

struct TpsOptions {
    double max_rotation_degrees = 15.0;
    double max_scale_jitter = 0.15;
    std::int64_t control_points_per_side = 5;
    double control_sigma = 0.005;
};

/// Random thin-plate-spline warp z -> A z + sum_c w_c U(|z - c|), U(r) = r^2 log r,
/// over a regular control grid, used for keypoint equivariance.
class ThinPlateSpline {
public:
    static ThinPlateSpline identity(std::int64_t batch, torch::TensorOptions options = torch::kFloat32);
    /// Resamples (bounded retries) until the local Jacobian stays invertible over the image.
    static ThinPlateSpline sample(std::int64_t batch, torch::Generator& generator, const TpsOptions& options = {},
                                  torch::TensorOptions tensor_options = torch::kFloat32);
    static ThinPlateSpline translation(const torch::Tensor& offsets);

    /// points [B, N, 2] -> [B, N, 2]
    torch::Tensor apply(const torch::Tensor& points) const;
    /// points [B, N, 2] -> dT/dz as [B, N, 2, 2]
    torch::Tensor jacobian(const torch::Tensor& points) const;
    /// Resamples images [B, C, H, W] at T(z): out(z) = image(T(z)).
    torch::Tensor warp_image(const torch::Tensor& images) const;

    bool is_identity() const noexcept { return identity_; }
    std::int64_t batch() const { return affine_.size(0); }

private:
    ThinPlateSpline(torch::Tensor affine, torch::Tensor translation, torch::Tensor control,
                    torch::Tensor weights, bool identity);

    torch::Tensor affine_;      ///< [B, 2, 2]
    torch::Tensor translation_; ///< [B, 2]
    torch::Tensor control_;     ///< [P, 2]
    torch::Tensor weights_;     ///< [B, P, 2]
    bool identity_ = false;
};

struct EquivarianceTerms {
    torch::Tensor position; ///< mean |T(q') - q|
    torch::Tensor jacobian; ///< mean |I - J^-1 (dT(q') J')|, zero when disabled
    torch::Tensor total;    ///< position + jacobian
};

using KeypointFn = std::function<KeypointSet(const torch::Tensor&)>;

/// Detects on the transformed images and compares against the original detections
/// mapped through the transform. `original` must come from `detect(images)`.
EquivarianceTerms equivariance_loss(const torch::Tensor& images, const KeypointSet& original,
                                    const KeypointFn& detect, const ThinPlateSpline& transform,
                                    bool with_jacobians = true, double eps = kDefaultJacobianEps);

} // namespace reenact::motion
