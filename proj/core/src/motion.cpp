// SPDX-License-Identifier: Apache-2.0
#include "reenact/motion.hpp"

#include "reenact/errors.hpp"

#include <torch/torch.h>

#include <cmath>
#include <numbers>

namespace reenact::motion {

namespace F = torch::nn::functional;
using torch::indexing::Ellipsis;

namespace {

torch::Tensor entry(const torch::Tensor& m, int row, int col) { return m.index({Ellipsis, row, col}); }

torch::Tensor assemble(const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& c, const torch::Tensor& d) {
    auto top = torch::stack({a, b}, -1);
    auto bottom = torch::stack({c, d}, -1);
    return torch::stack({top, bottom}, -2);
}

// Explicit 2x2 product; avoids BLAS so rounding does not depend on FMA contraction.
torch::Tensor matmul2(const torch::Tensor& lhs, const torch::Tensor& rhs) {
    auto a = entry(lhs, 0, 0), b = entry(lhs, 0, 1), c = entry(lhs, 1, 0), d = entry(lhs, 1, 1);
    auto e = entry(rhs, 0, 0), f = entry(rhs, 0, 1), g = entry(rhs, 1, 0), h = entry(rhs, 1, 1);
    return assemble(a * e + b * g, a * f + b * h, c * e + d * g, c * f + d * h);
}

struct Regularized {
    torch::Tensor a, b, c, d, det, mask;
};

Regularized regularize(const torch::Tensor& j, double eps) {
    auto a = entry(j, 0, 0), b = entry(j, 0, 1), c = entry(j, 1, 0), d = entry(j, 1, 1);
    auto det = a * d - b * c;
    auto mask = det.abs() <= eps;
    if (mask.any().item<bool>()) {
        auto shift = mask.to(j.scalar_type()) * eps;
        a = a + shift;
        d = d + shift;
        det = a * d - b * c;
    }
    return {a, b, c, d, det, mask};
}

void require_finite(const torch::Tensor& t, const char* what) {
    if (!torch::isfinite(t).all().item<bool>()) {
        throw NumericalError(std::string("non-finite values in ") + what);
    }
}

} // namespace

InverseResult invert_jacobian(const Mat2& jacobian, double eps) {
    for (double v : jacobian) {
        if (std::isnan(v)) {
            throw NumericalError("NaN in Jacobian");
        }
    }
    auto [a, b, c, d] = jacobian;
    InverseResult result;
    double det = a * d - b * c;
    if (std::abs(det) <= eps) {
        a += eps;
        d += eps;
        det = a * d - b * c;
        result.regularized = true;
        if (det == 0.0) {
            throw NumericalError("Jacobian singular even after regularization");
        }
    }
    result.inverse = {d / det, -b / det, -c / det, a / det};
    return result;
}

BatchedInverse invert_jacobians(const torch::Tensor& jacobians, double eps) {
    if (jacobians.dim() < 2 || jacobians.size(-1) != 2 || jacobians.size(-2) != 2) {
        throw ValidationError("Jacobians must have trailing shape [2, 2]");
    }
    if (torch::isnan(jacobians).any().item<bool>()) {
        throw NumericalError("NaN in Jacobian");
    }
    auto r = regularize(jacobians, eps);
    return {assemble(r.d / r.det, -r.b / r.det, -r.c / r.det, r.a / r.det), r.mask};
}

torch::Tensor solve_jacobians(const torch::Tensor& lhs, const torch::Tensor& rhs, double eps) {
    auto r = regularize(lhs, eps);
    auto adjugate = assemble(r.d, -r.b, -r.c, r.a);
    return matmul2(adjugate, rhs) / r.det.unsqueeze(-1).unsqueeze(-1);
}

torch::Tensor identity_grid(std::int64_t height, std::int64_t width, torch::TensorOptions options) {
    // Built in double and rounded once, so each coordinate is the nearest representable value.
    auto xs = torch::linspace(-1.0, 1.0, width, torch::kFloat64);
    auto ys = torch::linspace(-1.0, 1.0, height, torch::kFloat64);
    auto grid = torch::meshgrid({ys, xs}, "ij");
    return torch::stack({grid[1], grid[0]}, -1).to(options);
}

torch::Tensor evaluate_sparse_motion(const KeypointSet& source, const KeypointSet& driving,
                                     const torch::Tensor& points, double eps) {
    if (source.positions.sizes() != driving.positions.sizes()) {
        throw ValidationError("source and driving keypoint sets differ in shape");
    }
    if (points.dim() != 3 || points.size(-1) != 2 || points.size(0) != source.batch()) {
        throw ValidationError("points must be [B, P, 2] with matching batch");
    }
    auto transform = matmul2(source.jacobians, invert_jacobians(driving.jacobians, eps).inverse); // [B,K,2,2]
    auto diff = points.unsqueeze(1) - driving.positions.unsqueeze(2);                         // [B,K,P,2]
    auto dx = diff.select(-1, 0);
    auto dy = diff.select(-1, 1);
    auto t = transform.unsqueeze(2); // [B,K,1,2,2]
    auto mapped_x = entry(t, 0, 0) * dx + entry(t, 0, 1) * dy;
    auto mapped_y = entry(t, 1, 0) * dx + entry(t, 1, 1) * dy;
    return source.positions.unsqueeze(2) + torch::stack({mapped_x, mapped_y}, -1);
}

SparseMotions sparse_motion(const KeypointSet& source, const KeypointSet& driving, const torch::Tensor& grid,
                            double eps) {
    if (grid.dim() != 3 || grid.size(-1) != 2) {
        throw ValidationError("grid must be [H, W, 2]");
    }
    const auto batch = source.batch();
    const auto height = grid.size(0);
    const auto width = grid.size(1);
    auto points = grid.reshape({1, height * width, 2}).expand({batch, height * width, 2});
    auto flows = evaluate_sparse_motion(source, driving, points, eps);
    return {flows.reshape({batch, source.count(), height, width, 2}), grid};
}

torch::Tensor compose_dense_flow(const torch::Tensor& masks, const SparseMotions& sparse) {
    const auto batch = sparse.flows.size(0);
    const auto keypoints = sparse.flows.size(1);
    const auto height = sparse.flows.size(2);
    const auto width = sparse.flows.size(3);
    if (masks.dim() != 4 || masks.size(0) != batch || masks.size(1) != keypoints + 1 || masks.size(2) != height ||
        masks.size(3) != width) {
        throw ValidationError("masks must be [B, K+1, H, W] matching the sparse motions");
    }
    auto background = sparse.identity_grid.unsqueeze(0).unsqueeze(0).expand({batch, 1, height, width, 2});
    auto all = torch::cat({background.to(sparse.flows.dtype()), sparse.flows}, 1);
    return (masks.unsqueeze(-1) * all).sum(1);
}

torch::Tensor backward_warp(const torch::Tensor& features, const torch::Tensor& flow) {
    if (features.dim() != 4 || flow.dim() != 4 || flow.size(-1) != 2 || features.size(0) != flow.size(0)) {
        throw ValidationError("backward_warp expects features [B, C, H, W] and flow [B, H, W, 2]");
    }
    // Sample in double precision: in float32 the [-1, 1] -> pixel unnormalisation leaves
    // bilinear weights off by ~1e-7 * (W - 1), so an identity flow would blur features.
    const auto dtype = features.scalar_type();
    auto warped = F::grid_sample(features.to(torch::kFloat64), flow.to(torch::kFloat64),
                                 F::GridSampleFuncOptions()
                                     .mode(torch::kBilinear)
                                     .padding_mode(torch::kBorder)
                                     .align_corners(true));
    return warped.to(dtype);
}

torch::Tensor warp_features(const torch::Tensor& source_features, const DenseMotion& motion) {
    if (source_features.dim() != 4 || motion.flow.size(1) != source_features.size(2) ||
        motion.flow.size(2) != source_features.size(3)) {
        throw ValidationError("dense flow does not match the feature grid");
    }
    auto warped = backward_warp(source_features, motion.flow);
    return warped * motion.occlusion;
}

torch::Tensor keypoint_heatmaps(const torch::Tensor& positions, std::int64_t height, std::int64_t width,
                                double variance) {
    auto grid = identity_grid(height, width, positions.options().requires_grad(false));
    auto diff = grid.unsqueeze(0).unsqueeze(0) - positions.unsqueeze(2).unsqueeze(2); // [B,K,H,W,2]
    return torch::exp(-0.5 * diff.square().sum(-1) / variance);
}

KeypointSet transfer_relative(const KeypointSet& source, const KeypointSet& driving,
                              const KeypointSet& driving_initial, double eps) {
    KeypointSet out;
    out.positions = driving.positions - driving_initial.positions + source.positions;
    auto change = matmul2(driving.jacobians, invert_jacobians(driving_initial.jacobians, eps).inverse);
    out.jacobians = matmul2(change, source.jacobians);
    return out;
}

ThinPlateSpline::ThinPlateSpline(torch::Tensor affine, torch::Tensor translation, torch::Tensor control,
                                 torch::Tensor weights, bool identity)
    : affine_(std::move(affine)),
      translation_(std::move(translation)),
      control_(std::move(control)),
      weights_(std::move(weights)),
      identity_(identity) {}

ThinPlateSpline ThinPlateSpline::identity(std::int64_t batch, torch::TensorOptions options) {
    auto affine = torch::eye(2, options).unsqueeze(0).repeat({batch, 1, 1});
    auto control = identity_grid(2, 2, options).reshape({-1, 2});
    return {affine, torch::zeros({batch, 2}, options), control, torch::zeros({batch, control.size(0), 2}, options),
            true};
}

ThinPlateSpline ThinPlateSpline::translation(const torch::Tensor& offsets) {
    const auto batch = offsets.size(0);
    auto options = offsets.options();
    auto affine = torch::eye(2, options).unsqueeze(0).repeat({batch, 1, 1});
    auto control = identity_grid(2, 2, options).reshape({-1, 2});
    return {affine, offsets, control, torch::zeros({batch, control.size(0), 2}, options), false};
}

ThinPlateSpline ThinPlateSpline::sample(std::int64_t batch, torch::Generator& generator, const TpsOptions& options,
                                        torch::TensorOptions tensor_options) {
    const auto side = options.control_points_per_side;
    auto control = identity_grid(side, side, tensor_options).reshape({-1, 2});
    auto probe = identity_grid(9, 9, tensor_options).reshape({1, -1, 2}).expand({batch, 81, 2});
    constexpr int kMaxAttempts = 16;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        auto angle = (torch::rand({batch}, generator, tensor_options) * 2 - 1) *
                     (options.max_rotation_degrees * std::numbers::pi / 180.0);
        auto scale = 1 + (torch::rand({batch}, generator, tensor_options) * 2 - 1) * options.max_scale_jitter;
        auto cos = torch::cos(angle) * scale;
        auto sin = torch::sin(angle) * scale;
        auto affine = assemble(cos, -sin, sin, cos);
        auto weights = torch::randn({batch, control.size(0), 2}, generator, tensor_options) * options.control_sigma;
        ThinPlateSpline tps(affine, torch::zeros({batch, 2}, tensor_options), control, weights, false);
        auto jac = tps.jacobian(probe);
        auto det = entry(jac, 0, 0) * entry(jac, 1, 1) - entry(jac, 0, 1) * entry(jac, 1, 0);
        if (det.min().item<double>() > 1e-2) {
            return tps;
        }
    }
    throw NumericalError("could not sample an invertible thin-plate-spline transform");
}

torch::Tensor ThinPlateSpline::apply(const torch::Tensor& points) const {
    if (identity_) {
        return points;
    }
    auto affine = affine_.to(points.dtype());
    auto x = points.select(-1, 0);
    auto y = points.select(-1, 1);
    auto a = affine.unsqueeze(1);
    auto out_x = entry(a, 0, 0) * x + entry(a, 0, 1) * y;
    auto out_y = entry(a, 1, 0) * x + entry(a, 1, 1) * y;
    auto out = torch::stack({out_x, out_y}, -1) + translation_.to(points.dtype()).unsqueeze(1);

    auto diff = points.unsqueeze(2) - control_.to(points.dtype()); // [B,N,P,2]
    auto r2 = diff.square().sum(-1);
    auto radial = 0.5 * r2 * torch::log(r2.clamp_min(1e-12));
    return out + torch::einsum("bnp,bpc->bnc", {radial, weights_.to(points.dtype())});
}

torch::Tensor ThinPlateSpline::jacobian(const torch::Tensor& points) const {
    auto eye = torch::eye(2, points.options()).expand({points.size(0), points.size(1), 2, 2});
    if (identity_) {
        return eye.clone();
    }
    auto diff = points.unsqueeze(2) - control_.to(points.dtype());
    auto r2 = diff.square().sum(-1, true);
    auto grad = (torch::log(r2.clamp_min(1e-12)) + 1) * diff;
    grad = torch::where(r2 > 0, grad, torch::zeros_like(grad)); // [B,N,P,2]
    auto radial = torch::einsum("bpi,bnpj->bnij", {weights_.to(points.dtype()), grad});
    return affine_.to(points.dtype()).unsqueeze(1) + radial;
}

torch::Tensor ThinPlateSpline::warp_image(const torch::Tensor& images) const {
    if (identity_) {
        return images;
    }
    const auto height = images.size(2);
    const auto width = images.size(3);
    auto grid = identity_grid(height, width, images.options().requires_grad(false))
                    .reshape({1, height * width, 2})
                    .expand({images.size(0), height * width, 2});
    auto targets = apply(grid).reshape({images.size(0), height, width, 2});
    return backward_warp(images, targets);
}

EquivarianceTerms equivariance_loss(const torch::Tensor& images, const KeypointSet& original,
                                    const KeypointFn& detect, const ThinPlateSpline& transform, bool with_jacobians,
                                    double eps) {
    auto transformed = detect(transform.warp_image(images));
    require_finite(transformed.positions, "keypoints of the transformed image");

    EquivarianceTerms terms;
    auto mapped = transform.apply(transformed.positions);
    terms.position = (original.positions - mapped).abs().mean();
    if (with_jacobians) {
        auto local = transform.jacobian(transformed.positions);
        auto composed = matmul2(local, transformed.jacobians);
        auto relative = solve_jacobians(original.jacobians, composed, eps);
        auto eye = torch::eye(2, relative.options());
        terms.jacobian = (eye - relative).abs().mean();
    } else {
        terms.jacobian = torch::zeros({}, images.options());
    }
    terms.total = terms.position + terms.jacobian;
    return terms;
}

} // namespace reenact::motion
