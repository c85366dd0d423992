// SPDX-License-Identifier: Apache-2.0
#include "reenact/losses.hpp"

#include "reenact/errors.hpp"

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace reenact::losses {

namespace F = torch::nn::functional;

torch::Tensor perceptual_loss(const torch::Tensor& target, const torch::Tensor& prediction,
                              const FeatureExtractor& extractor) {
    if (target.sizes() != prediction.sizes()) {
        throw ValidationError("perceptual loss inputs differ in shape");
    }
    torch::Tensor total = torch::zeros({}, prediction.options());
    auto x = target;
    auto y = prediction;
    for (int scale = 0; scale < kPyramidScales; ++scale) {
        if (scale > 0) {
            x = F::avg_pool2d(x, F::AvgPool2dFuncOptions(2));
            y = F::avg_pool2d(y, F::AvgPool2dFuncOptions(2));
        }
        auto fx = extractor.features(x);
        auto fy = extractor.features(y);
        for (std::size_t stage = 0; stage < fx.size(); ++stage) {
            total = total + (fx[stage] - fy[stage]).abs().mean();
        }
    }
    return total;
}

LossReport total_loss(const LossTerms& terms, const LossWeights& weights) {
    if (weights.perceptual < 0 || weights.adversarial < 0 || weights.equivariance < 0) {
        throw ValidationError("loss weights must be non-negative");
    }
    LossReport report;
    torch::Tensor total;
    auto add = [&](const torch::Tensor& term, double weight, double& slot) {
        if (!term.defined()) {
            return;
        }
        slot = term.item<double>();
        if (weight == 0.0) {
            return;
        }
        auto weighted = weight * term;
        total = total.defined() ? total + weighted : weighted;
    };
    add(terms.perceptual, weights.perceptual, report.perceptual);
    add(terms.adversarial_g, weights.adversarial, report.adversarial_g);
    add(terms.equivariance, weights.equivariance, report.equivariance);
    report.total_tensor = total.defined() ? total : torch::zeros({});
    report.total = 0.0;
    for (auto [w, v] : {std::pair{weights.perceptual, report.perceptual},
                        std::pair{weights.adversarial, report.adversarial_g},
                        std::pair{weights.equivariance, report.equivariance}}) {
        if (w != 0.0) {
            report.total += w * v;
        }
    }
    return report;
}

std::string LossReport::to_json(std::int64_t step) const {
    nlohmann::json doc;
    doc["step"] = step;
    doc["perceptual"] = perceptual;
    doc["adversarial_g"] = adversarial_g;
    doc["equivariance"] = equivariance;
    doc["total"] = total;
    doc["discriminator"] = discriminator;
    doc["reconstruction_l1"] = reconstruction_l1;
    doc["real_scores"] = real_scores;
    doc["fake_scores"] = fake_scores;
    return doc.dump();
}

} // namespace reenact::losses
