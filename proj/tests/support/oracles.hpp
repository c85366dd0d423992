// SPDX-License-Identifier: Apache-2.0
// Reference implementations written independently of the library code paths: plain
// loops over accessors, no shared helpers. Used as test oracles only.
#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace reenact::support {

/// Per-pixel, per-sample front-to-back compositing in double precision.
/// density [B, D, H, W], color [B, D, C, H, W] -> [B, C, H, W].
torch::Tensor naive_volume_render(const torch::Tensor& density, const torch::Tensor& color);

/// Per-pixel transmittance after all samples: exp(-sum_j sigma_j) -> [B, H, W].
torch::Tensor naive_final_transmittance(const torch::Tensor& density);

/// Bilinear gather with border clamping and align_corners=true coordinates:
/// features [B, C, H, W], flow [B, H, W, 2] in [-1, 1] (x, y).
torch::Tensor naive_backward_warp(const torch::Tensor& features, const torch::Tensor& flow);

struct GradCheckResult {
    double max_abs_error = 0.0;
    double max_rel_error = 0.0;
    bool passed = false;
};

/// Compares autograd gradients of sum(f(inputs) * probe) with central differences.
/// A component passes when |a - n| <= rtol * max(|a|, |n|) + atol.
GradCheckResult gradcheck(const std::function<torch::Tensor(const std::vector<torch::Tensor>&)>& f,
                          std::vector<torch::Tensor> inputs, double h = 1e-5, double rtol = 1e-4,
                          double atol = 1e-8, std::uint64_t probe_seed = 7);

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag);
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
};

/// Hex SHA-free digest: CRC32 of a file's bytes (enough to compare artifacts).
std::uint32_t file_crc(const std::filesystem::path& path);
bool files_identical(const std::filesystem::path& a, const std::filesystem::path& b);

} // namespace reenact::support
