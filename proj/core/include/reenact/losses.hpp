// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <torch/types.h>

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace reenact::losses {

/// Frozen feature pyramid used by the perceptual loss. Implementations return one
/// tensor per stage; stages are compared with mean absolute difference.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::string id() const = 0;
    virtual std::vector<torch::Tensor> features(const torch::Tensor& images) const = 0;
};

/// Single stage returning the input unchanged: the perceptual loss degenerates to a
/// multi-scale L1.
class IdentityExtractor final : public FeatureExtractor {
public:
    std::string id() const override { return "identity"; }
    std::vector<torch::Tensor> features(const torch::Tensor& images) const override { return {images}; }
};

inline constexpr int kPyramidScales = 3;

/// sum over scales {1, 1/2, 1/4} and extractor stages of mean |phi(x) - phi(x_hat)|.
torch::Tensor perceptual_loss(const torch::Tensor& target, const torch::Tensor& prediction,
                              const FeatureExtractor& extractor);

struct LossWeights {
    double perceptual = 10.0;
    double adversarial = 1.0;
    double equivariance = 10.0;

    static LossWeights unit() { return {1.0, 1.0, 1.0}; }
};

/// Per-step loss breakdown. Scalars are plain doubles for logging; `total_tensor` keeps
/// the graph for backpropagation.
struct LossReport {
    double perceptual = 0.0;
    double adversarial_g = 0.0;
    double equivariance = 0.0;
    double total = 0.0;
    double discriminator = 0.0;
    /// mean |x_hat - x_driving| of the step's forward pass (monitoring only).
    double reconstruction_l1 = 0.0;
    std::map<std::string, double> real_scores;
    std::map<std::string, double> fake_scores;
    torch::Tensor total_tensor;

    /// One JSON object (no trailing newline).
    std::string to_json(std::int64_t step) const;
};

struct LossTerms {
    torch::Tensor perceptual;
    torch::Tensor adversarial_g;
    torch::Tensor equivariance;
};

/// w_P * perceptual + w_G * adversarial + w_E * equivariance. Throws ValidationError on
/// negative weights.
LossReport total_loss(const LossTerms& terms, const LossWeights& weights);

} // namespace reenact::losses
