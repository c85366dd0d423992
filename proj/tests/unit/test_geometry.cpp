// SPDX-License-Identifier: Apache-2.0
#include "oracles.hpp"
#include "reenact/errors.hpp"
#include "reenact/geometry.hpp"

#include <gtest/gtest.h>
#include <torch/torch.h>

#include <cmath>

using namespace reenact;
using namespace reenact::geometry;

namespace {

torch::Tensor interior(const torch::Tensor& maps) {
    return maps.slice(2, 1, maps.size(2) - 1).slice(3, 1, maps.size(3) - 1);
}

} // namespace

TEST(NormalFromDepth, ConstantDepthFacesCamera) {
    auto n = normal_from_depth(torch::full({2, 1, 6, 5}, 3.0, torch::kFloat64));
    auto expected = torch::tensor({0.0, 0.0, 1.0}, torch::kFloat64).reshape({1, 3, 1, 1});
    EXPECT_LE((n - expected).abs().max().item<double>(), 1e-12);
}

TEST(NormalFromDepth, UnitSlopePlane) {
    auto cols = torch::arange(7, torch::kFloat64).reshape({1, 1, 1, 7}).expand({1, 1, 5, 7});
    auto n = normal_from_depth(10.0 + cols);
    auto expected = torch::tensor({-1.0, 0.0, 1.0}, torch::kFloat64).reshape({1, 3, 1, 1}) / std::sqrt(2.0);
    EXPECT_LE((n - expected).abs().max().item<double>(), 1e-12); // exact on borders too for a plane
}

TEST(NormalFromDepth, RowSlopeAndPixelSpacing) {
    auto rows = torch::arange(5, torch::kFloat64).reshape({1, 1, 5, 1}).expand({1, 1, 5, 4});
    auto n = normal_from_depth(1.0 + 2.0 * rows, 2.0); // dd/dy = 1 in spacing units
    auto expected = torch::tensor({0.0, -1.0, 1.0}, torch::kFloat64).reshape({1, 3, 1, 1}) / std::sqrt(2.0);
    EXPECT_LE((n - expected).abs().max().item<double>(), 1e-12);
}

TEST(NormalFromDepth, UnitLengthAndPositiveZ) {
    auto n = normal_from_depth(torch::rand({2, 1, 8, 8}, torch::kFloat64) * 5 + 1);
    EXPECT_LE((n.square().sum(1) - 1.0).abs().max().item<double>(), 1e-12);
    EXPECT_GT(n.select(1, 2).min().item<double>(), 0.0);
}

TEST(NormalFromDepth, RejectsBadInput) {
    EXPECT_THROW(normal_from_depth(torch::ones({1, 2, 4, 4})), ValidationError);
    EXPECT_THROW(normal_from_depth(torch::ones({1, 1, 1, 4})), ValidationError);
    EXPECT_THROW(normal_from_depth(torch::ones({1, 1, 4, 4}), 0.0), ValidationError);
}

TEST(SyntheticScene, SphereCapNormalsFromDepthAgreeInInterior) {
    SceneSpec spec;
    spec.size = 64;
    spec.radius = 24.0;
    auto scene = render_synthetic_scene(spec);
    auto estimated = normal_from_depth(scene.truth.depth);
    auto coords = torch::arange(64, torch::kFloat64) - 31.5;
    auto grid = torch::meshgrid({coords, coords}, "ij");
    auto r = torch::sqrt(grid[0].square() + grid[1].square());
    auto mask = (r <= 0.8 * spec.radius);
    auto err = (estimated[0] - scene.truth.normal[0]).abs().amax(0);
    EXPECT_LE(err.masked_select(mask).max().item<double>(), 2e-2);
}

TEST(SyntheticScene, ShadingFollowsLight) {
    SceneSpec spec;
    spec.kind = SurfaceKind::plane;
    spec.size = 8;
    auto scene = render_synthetic_scene(spec);
    EXPECT_NEAR(scene.image.tensor().max().item<double>(), 0.9, 1e-6);
    EXPECT_NEAR(scene.image.tensor().min().item<double>(), 0.9, 1e-6);
}

TEST(SyntheticScene, InvalidSpecsRejected) {
    SceneSpec spec;
    spec.light = {1.0, 1.0, 0.0};
    EXPECT_THROW(render_synthetic_scene(spec), ValidationError);
    spec = {};
    spec.radius = -1.0;
    EXPECT_THROW(render_synthetic_scene(spec), ValidationError);
    spec = {};
    spec.base_depth = 5.0; // sphere of radius 24 pokes through the camera plane
    EXPECT_THROW(render_synthetic_scene(spec), ValidationError);
}

TEST(OracleExtractor, ExactOnOwnScene) {
    SceneSpec spec;
    spec.size = 16;
    spec.radius = 6.0;
    SyntheticOracleExtractor oracle(spec);
    auto maps = extract_geometry(oracle.scene().image.batched().to(torch::kFloat64), oracle);
    EXPECT_LE((maps.depth - oracle.scene().truth.depth).abs().max().item<double>(), 1e-12);
    EXPECT_THROW(oracle.depth(torch::rand({1, 3, 8, 8})), ValidationError);
}

TEST(LuminanceDepth, BrightIsNearAndPositive) {
    LuminanceDepthExtractor extractor;
    auto images = torch::zeros({1, 3, 8, 8});
    images.slice(3, 4, 8).fill_(1.0);
    auto depth = extractor.depth(images);
    EXPECT_GT(depth.min().item<double>(), 0.0);
    EXPECT_LT(depth[0][0][4][7].item<double>(), depth[0][0][4][0].item<double>());
    EXPECT_NEAR(depth[0][0][0][0].item<double>(), 2.0, 1e-6); // 1 / (0.5 + 0)
}

TEST(LuminanceDepth, ParametersAreFrozenAndGradientsReachImage) {
    LuminanceDepthExtractor extractor;
    for (const auto& p : extractor.parameters()) {
        EXPECT_FALSE(p.requires_grad());
    }
    auto images = torch::rand({1, 3, 8, 8}, torch::kFloat64).requires_grad_(true);
    auto maps = extract_geometry(images, extractor);
    (maps.depth.sum() + maps.normal.sum()).backward();
    EXPECT_GT(images.grad().abs().sum().item<double>(), 0.0);
    for (const auto& p : extractor.parameters()) {
        EXPECT_FALSE(p.grad().defined());
    }
}

TEST(LuminanceDepth, GradientMatchesFiniteDifferences) {
    LuminanceDepthExtractor extractor;
    auto images = torch::rand({1, 3, 5, 5}, torch::kFloat64);
    auto r = support::gradcheck(
        [&](const std::vector<torch::Tensor>& in) { return extract_geometry(in[0], extractor).normal; }, {images});
    EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(ExtractGeometry, RejectsNonPositiveDepth) {
    class Broken final : public GeometryExtractor {
    public:
        std::string id() const override { return "broken"; }
        torch::Tensor depth(const torch::Tensor& images) const override {
            return torch::zeros({images.size(0), 1, images.size(2), images.size(3)});
        }
        std::vector<torch::Tensor> parameters() const override { return {}; }
    };
    EXPECT_THROW(extract_geometry(torch::rand({1, 3, 4, 4}), Broken{}), NumericalError);
}

TEST(MakeExtractor, BackendsAndErrors) {
    EXPECT_EQ(make_extractor("baseline", 64)->id(), "baseline");
    EXPECT_EQ(make_extractor("oracle", 32)->id(), "oracle");
    EXPECT_THROW(make_extractor("external", 64, "/nonexistent/depth.pt"), IoError);
    EXPECT_THROW(make_extractor("midas", 64), ValidationError);
}

TEST(Luminance, Rec601Weights) {
    auto img = torch::tensor({1.0, 0.0, 0.0}, torch::kFloat64).reshape({1, 3, 1, 1});
    EXPECT_NEAR(luminance(img).item<double>(), 0.299, 1e-15);
}
