// SPDX-License-Identifier: Apache-2.0
#include "oracles.hpp"
#include "reenact/errors.hpp"
#include "reenact/losses.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>
#include <torch/torch.h>

using namespace reenact;
using namespace reenact::losses;

TEST(PerceptualLoss, IdentityExtractorIsMultiScaleL1) {
    auto x = torch::rand({2, 3, 8, 8}, torch::kFloat64);
    auto y = torch::rand({2, 3, 8, 8}, torch::kFloat64);
    // Hand-computed pyramid: 2x2 block means.
    auto pool = [](const torch::Tensor& t) {
        auto n = t.size(2) / 2;
        return t.reshape({t.size(0), t.size(1), n, 2, n, 2}).mean({3, 5});
    };
    double expected = (x - y).abs().mean().item<double>();
    expected += (pool(x) - pool(y)).abs().mean().item<double>();
    expected += (pool(pool(x)) - pool(pool(y))).abs().mean().item<double>();
    EXPECT_NEAR(perceptual_loss(x, y, IdentityExtractor{}).item<double>(), expected, 1e-12);
}

TEST(PerceptualLoss, ZeroForIdenticalImages) {
    auto x = torch::rand({1, 3, 16, 16});
    EXPECT_EQ(perceptual_loss(x, x, IdentityExtractor{}).item<double>(), 0.0);
}

TEST(PerceptualLoss, ShapeMismatchRejected) {
    EXPECT_THROW(perceptual_loss(torch::rand({1, 3, 8, 8}), torch::rand({1, 3, 4, 4}), IdentityExtractor{}),
                 ValidationError);
}

TEST(PerceptualLoss, GradientMatchesFiniteDifferences) {
    auto target = torch::rand({1, 3, 4, 4}, torch::kFloat64);
    // Keep prediction away from the target so |.| is differentiable at every component.
    auto prediction = target + (torch::rand({1, 3, 4, 4}, torch::kFloat64) * 0.5 + 0.1) *
                                   torch::where(torch::rand({1, 3, 4, 4}) > 0.5, 1.0, -1.0).to(torch::kFloat64);
    auto r = support::gradcheck(
        [&](const std::vector<torch::Tensor>& in) { return perceptual_loss(target, in[0], IdentityExtractor{}); },
        {prediction});
    EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(TotalLoss, WeightedSum) {
    LossTerms terms{torch::tensor(0.5), torch::tensor(2.0), torch::tensor(0.25)};
    auto report = total_loss(terms, {10.0, 1.0, 4.0});
    EXPECT_DOUBLE_EQ(report.total, 5.0 + 2.0 + 1.0);
    EXPECT_NEAR(report.total_tensor.item<double>(), 8.0, 1e-6);
    EXPECT_DOUBLE_EQ(report.perceptual, 0.5);
    EXPECT_DOUBLE_EQ(report.adversarial_g, 2.0);
    EXPECT_DOUBLE_EQ(report.equivariance, 0.25);
}

TEST(TotalLoss, ZeroWeightTermsAreReportedButExcluded) {
    auto adv = torch::tensor(3.0, torch::requires_grad());
    auto perc = torch::tensor(1.0, torch::requires_grad());
    auto report = total_loss({perc, adv, {}}, {1.0, 0.0, 1.0});
    EXPECT_DOUBLE_EQ(report.adversarial_g, 3.0);
    EXPECT_DOUBLE_EQ(report.total, 1.0);
    report.total_tensor.backward();
    EXPECT_FALSE(adv.grad().defined());
    EXPECT_TRUE(perc.grad().defined());
}

TEST(TotalLoss, NegativeWeightsRejected) {
    EXPECT_THROW(total_loss({torch::tensor(1.0), {}, {}}, {-1.0, 1.0, 1.0}), ValidationError);
}

TEST(LossReport, JsonLine) {
    LossReport report;
    report.perceptual = 1.5;
    report.total = 2.0;
    report.real_scores["rgb"] = 0.75;
    auto line = report.to_json(12);
    EXPECT_EQ(line.find('\n'), std::string::npos);
    auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("step").get<int>(), 12);
    EXPECT_DOUBLE_EQ(j.at("perceptual").get<double>(), 1.5);
    EXPECT_DOUBLE_EQ(j.at("total").get<double>(), 2.0);
    EXPECT_TRUE(j.contains("reconstruction_l1"));
}
