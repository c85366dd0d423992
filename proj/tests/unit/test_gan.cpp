// SPDX-License-Identifier: Apache-2.0
#include "reenact/errors.hpp"
#include "reenact/gan.hpp"

#include <gtest/gtest.h>
#include <torch/torch.h>

#include <cmath>

using namespace reenact;
using namespace reenact::gan;

namespace {

double top_singular_value(const torch::Tensor& m) {
    return torch::linalg_svdvals(m.to(torch::kFloat64)).max().item<double>();
}

EnsembleInput random_views(std::int64_t batch, std::int64_t size) {
    return {torch::rand({batch, 3, size, size}), torch::rand({batch, 1, size, size}) + 1.0,
            torch::rand({batch, 3, size, size})};
}

} // namespace

TEST(SpectralNorm, ConvergesToTopSingularValue) {
    torch::manual_seed(21);
    for (int trial = 0; trial < 5; ++trial) {
        auto w = torch::randn({8, 12}, torch::kFloat64);
        auto u = torch::randn({8}, torch::kFloat64);
        auto r = spectral_normalize(w, u, 100);
        EXPECT_NEAR(r.sigma.item<double>(), top_singular_value(w), 1e-6 * top_singular_value(w));
        EXPECT_NEAR(top_singular_value(r.weight), 1.0, 1e-6);
    }
}

TEST(SpectralNorm, StateAdvancesInPlace) {
    auto w = torch::randn({4, 6});
    auto u = torch::randn({4});
    auto before = u.clone();
    spectral_normalize(w, u, 1);
    EXPECT_FALSE(torch::equal(before, u));
    EXPECT_NEAR(u.norm().item<double>(), 1.0, 1e-6);
}

TEST(SpectralNorm, ZeroWeightGivesZeros) {
    auto w = torch::zeros({3, 5});
    auto u = torch::randn({3});
    auto r = spectral_normalize(w, u, 3);
    EXPECT_EQ(r.weight.abs().max().item<double>(), 0.0);
    EXPECT_TRUE(std::isfinite(u.sum().item<double>()));
}

TEST(SpectralNorm, ShapeMismatchRejected) {
    auto u = torch::randn({4});
    EXPECT_THROW(spectral_normalize(torch::randn({3, 5}), u), ValidationError);
}

TEST(SNConv2d, EvalModeDoesNotAdvanceState) {
    torch::manual_seed(22);
    SNConv2d conv(3, 4, 3, 1, 1);
    conv->eval();
    auto before = conv->u.clone();
    conv->forward(torch::randn({1, 3, 5, 5}));
    EXPECT_TRUE(torch::equal(before, conv->u));
    conv->train();
    conv->forward(torch::randn({1, 3, 5, 5}));
    EXPECT_FALSE(torch::equal(before, conv->u));
}

TEST(SNConv2d, RepeatedTrainingForwardsKeepGraphValid) {
    torch::manual_seed(23);
    SNConv2d conv(2, 2, 3, 1, 1);
    auto x = torch::randn({1, 2, 4, 4});
    auto a = conv->forward(x).sum();
    auto b = conv->forward(x).sum();
    EXPECT_NO_THROW((a + b).backward());
    EXPECT_TRUE(conv->weight.grad().defined());
}

TEST(SNConv2d, WeightNormApproachesOneAfterIterations) {
    torch::manual_seed(24);
    SNConv2d conv(3, 6, 4, 2, 1);
    torch::NoGradGuard no_grad;
    for (int i = 0; i < 60; ++i) {
        conv->forward(torch::randn({1, 3, 8, 8}));
    }
    auto w = conv->normalized_weight().reshape({6, -1});
    EXPECT_NEAR(top_singular_value(w), 1.0, 1e-3);
}

TEST(MultiScaleDiscriminator, ProbabilitiesPerImage) {
    torch::manual_seed(25);
    MultiScaleDiscriminator d(3, 2, 8);
    auto p = d->forward(torch::rand({3, 3, 32, 32}));
    EXPECT_EQ(p.sizes(), (std::vector<std::int64_t>{3}));
    EXPECT_GT(p.min().item<double>(), 0.0);
    EXPECT_LT(p.max().item<double>(), 1.0);
    EXPECT_EQ(d->patch_logits(torch::rand({1, 3, 32, 32})).size(), 2u);
}

TEST(Simplex, Validation) {
    EXPECT_NO_THROW(validate_simplex({{Modality::rgb, 0.5}, {Modality::depth, 0.25}, {Modality::normal, 0.25}}));
    EXPECT_THROW(validate_simplex({}), ValidationError);
    EXPECT_THROW(validate_simplex({{Modality::rgb, 0.5}, {Modality::depth, 0.4}}), ValidationError);
    EXPECT_THROW(validate_simplex({{Modality::rgb, 1.2}, {Modality::depth, -0.2}}), ValidationError);
    EXPECT_THROW(validate_simplex({{Modality::rgb, 0.5}, {Modality::rgb, 0.5}}), ValidationError);
}

TEST(Simplex, ErrorMessageNamesViolation) {
    try {
        validate_simplex({{Modality::rgb, 0.3}});
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("simplex"), std::string::npos);
    }
}

TEST(WeightedTotal, IndependentOfMemberOrder) {
    std::map<std::string, torch::Tensor> scores{{"rgb", torch::tensor({0.3f, 0.6f})},
                                                {"depth", torch::tensor({0.7f, 0.1f})},
                                                {"normal", torch::tensor({0.2f, 0.9f})}};
    auto a = weighted_total({{Modality::rgb, 0.1}, {Modality::depth, 0.3}, {Modality::normal, 0.6}}, scores);
    auto b = weighted_total({{Modality::normal, 0.6}, {Modality::rgb, 0.1}, {Modality::depth, 0.3}}, scores);
    EXPECT_TRUE(torch::equal(a, b));
    auto expected = 0.1 * scores["rgb"] + 0.3 * scores["depth"] + 0.6 * scores["normal"];
    EXPECT_TRUE(torch::allclose(a, expected));
}

TEST(Ensemble, ZeroWeightMembersAreSkipped) {
    torch::manual_seed(26);
    DiscriminatorEnsemble ens(std::vector<MemberSpec>{{Modality::rgb, 1.0}, {Modality::depth, 0.0}, {Modality::normal, 0.0}},
                              2, 8, 9);
    EXPECT_FALSE(ens->needs_geometry());
    EnsembleInput rgb_only{torch::rand({2, 3, 32, 32}), {}, {}};
    auto scores = ens->forward(rgb_only);
    EXPECT_EQ(scores.members.size(), 1u);
    EXPECT_TRUE(torch::equal(scores.total, 1.0 * scores.members.at("rgb")));
}

TEST(Ensemble, MemberInitDependsOnlyOnSeedAndName) {
    DiscriminatorEnsemble full(std::vector<MemberSpec>{{Modality::rgb, 0.5}, {Modality::depth, 0.25}, {Modality::normal, 0.25}},
                               2, 8, 42);
    DiscriminatorEnsemble single(std::vector<MemberSpec>{{Modality::rgb, 1.0}}, 2, 8, 42);
    auto a = full->member(Modality::rgb)->named_parameters();
    auto b = single->member(Modality::rgb)->named_parameters();
    ASSERT_EQ(a.size(), b.size());
    for (const auto& item : a) {
        EXPECT_TRUE(torch::equal(item.value(), b[item.key()])) << item.key();
    }
}

TEST(Ensemble, MissingModalityForWeightedMemberRejected) {
    DiscriminatorEnsemble ens(std::vector<MemberSpec>{{Modality::rgb, 0.5}, {Modality::depth, 0.5}}, 2, 8, 1);
    EXPECT_TRUE(ens->needs_geometry());
    EXPECT_THROW(ens->forward({torch::rand({1, 3, 32, 32}), {}, {}}), ValidationError);
}

TEST(Ensemble, SetWeightsValidates) {
    DiscriminatorEnsemble ens(std::vector<MemberSpec>{{Modality::rgb, 0.5}, {Modality::depth, 0.5}}, 2, 8, 1);
    EXPECT_THROW(ens->set_weights({0.9, 0.9}), ValidationError);
    EXPECT_THROW(ens->set_weights({1.0}), ValidationError);
    ens->set_weights({0.25, 0.75});
    EXPECT_EQ(ens->weights(), (std::vector<double>{0.25, 0.75}));
}

TEST(NormalizeDepth, PerImageMinMax) {
    auto d = torch::tensor({1.0, 3.0, 2.0, 5.0}, torch::kFloat64).reshape({1, 1, 2, 2});
    auto n = normalize_depth(d);
    EXPECT_NEAR(n.min().item<double>(), 0.0, 1e-12);
    EXPECT_NEAR(n.max().item<double>(), 1.0, 1e-8);
    EXPECT_NEAR(n[0][0][0][1].item<double>(), 0.5, 1e-8);
}

TEST(GanLosses, ClosedForms) {
    auto real = torch::tensor({0.8, 0.6}, torch::kFloat64);
    auto fake = torch::tensor({0.3, 0.1}, torch::kFloat64);
    const double d = -0.5 * (std::log(0.8) + std::log(0.7) + std::log(0.6) + std::log(0.9));
    EXPECT_NEAR(discriminator_loss(real, fake).item<double>(), d, 1e-12);
    EXPECT_NEAR(generator_loss(fake).item<double>(), -0.5 * (std::log(0.3) + std::log(0.1)), 1e-12);
    EXPECT_NEAR(discriminator_loss(real, fake, LossKind::least_squares).item<double>(),
                0.5 * (0.04 + 0.09 + 0.16 + 0.01), 1e-12);
    EXPECT_NEAR(generator_loss(fake, LossKind::least_squares).item<double>(), 0.5 * (0.49 + 0.81), 1e-12);
    EXPECT_TRUE(std::isfinite(generator_loss(torch::zeros({1}, torch::kFloat64)).item<double>()));
}

TEST(GanLosses, DiscriminatorStepDetachesFakes) {
    torch::manual_seed(27);
    DiscriminatorEnsemble ens(std::vector<MemberSpec>{{Modality::rgb, 1.0}}, 2, 8, 3);
    auto fake_rgb = torch::rand({1, 3, 32, 32}).requires_grad_(true);
    auto step = gan_loss_discriminator(ens, random_views(1, 32), {fake_rgb, {}, {}});
    step.loss.backward();
    EXPECT_FALSE(fake_rgb.grad().defined());

    auto g = gan_loss_generator(ens, {fake_rgb, {}, {}});
    g.loss.backward();
    EXPECT_TRUE(fake_rgb.grad().defined());
}
