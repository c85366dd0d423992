// SPDX-License-Identifier: Apache-2.0
// Property-based acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any selected criterion fails.
//
//   reenact_acceptance [--only N]... [--skip N]...
#include "fixtures.hpp"
#include "oracles.hpp"
#include "reenact/checkpoint.hpp"
#include "reenact/config.hpp"
#include "reenact/fvr.hpp"
#include "reenact/gan.hpp"
#include "reenact/geometry.hpp"
#include "reenact/losses.hpp"
#include "reenact/metrics.hpp"
#include "reenact/motion.hpp"
#include "reenact/synthetic.hpp"
#include "reenact/trainer.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace reenact;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool passed = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    std::function<Verdict()> check;
};

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(4) << v;
    return s.str();
}

bool bit_identical(torch::nn::Module& a, torch::nn::Module& b) {
    auto pa = a.named_parameters();
    auto pb = b.named_parameters();
    if (pa.size() != pb.size()) {
        return false;
    }
    for (const auto& item : pa) {
        const auto* other = pb.find(item.key());
        if (other == nullptr || !torch::equal(item.value(), *other)) {
            return false;
        }
    }
    return true;
}

std::vector<std::pair<Image, Image>> corpus_pairs(int count, std::int64_t size, std::uint64_t seed) {
    CorpusPairSource source(synthetic::make_blob_corpus(10, 8, size, seed), seed);
    std::vector<std::pair<Image, Image>> pairs;
    for (int i = 0; i < count; ++i) {
        pairs.push_back(source.pair(static_cast<std::uint64_t>(i)));
    }
    return pairs;
}

// ---------------------------------------------------------------------------------------

Verdict volume_render_oracle() {
    Stopwatch clock;
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> samples(1, 4), channels(1, 3), pixels(1, 8);
    torch::manual_seed(2024);
    double max_render = 0.0;
    double max_budget = 0.0;
    for (int i = 0; i < 100; ++i) {
        const int d = samples(rng);
        const int c = channels(rng);
        const int n = pixels(rng);
        // Production dtype (float32) against the double-precision per-sample loop.
        auto density = torch::rand({1, d, 1, n}) * 4.0;
        auto color = torch::rand({1, d, c, 1, n});
        auto fast = fvr::volume_render({density, color}).to(torch::kFloat64);
        auto slow = support::naive_volume_render(density.to(torch::kFloat64), color.to(torch::kFloat64));
        max_render = std::max(max_render, (fast - slow).abs().max().item<double>());

        auto weights = fvr::render_weights(density).to(torch::kFloat64).sum(1);
        auto final_t = support::naive_final_transmittance(density.to(torch::kFloat64));
        max_budget = std::max(max_budget, (weights - (1.0 - final_t)).abs().max().item<double>());
    }
    const double elapsed = clock.seconds();
    return {max_render <= 1e-6 && max_budget <= 1e-6 && elapsed < 10.0,
            "100 instances, max |render - oracle| = " + fmt(max_render) + ", max budget error = " +
                fmt(max_budget) + ", " + fmt(elapsed) + " s"};
}

Verdict gradient_checks() {
    Stopwatch clock;
    torch::manual_seed(7);
    std::ostringstream detail;
    bool ok = true;
    auto record = [&](const std::string& name, const support::GradCheckResult& r) {
        ok = ok && r.passed;
        detail << name << " rel " << fmt(r.max_rel_error) << (r.passed ? "" : " (FAILED)") << "; ";
    };

    auto density = torch::rand({1, 4, 2, 2}, torch::kFloat64) * 2.0 + 0.05;
    auto color = torch::rand({1, 4, 3, 2, 2}, torch::kFloat64);
    record("volume_render", support::gradcheck(
                                [](const std::vector<torch::Tensor>& in) { return fvr::volume_render({in[0], in[1]}); },
                                {density, color}));

    auto features = torch::rand({1, 2, 5, 5}, torch::kFloat64);
    auto flow = torch::rand({1, 5, 5, 2}, torch::kFloat64) * 1.6 - 0.8;
    auto occlusion = torch::rand({1, 1, 5, 5}, torch::kFloat64);
    record("warp_features", support::gradcheck(
                                [&](const std::vector<torch::Tensor>& in) {
                                    motion::DenseMotion dm;
                                    dm.flow = in[1];
                                    dm.occlusion = occlusion;
                                    return motion::warp_features(in[0], dm);
                                },
                                {features, flow}));

    auto target = torch::rand({1, 3, 8, 8}, torch::kFloat64);
    auto sign = torch::where(torch::rand({1, 3, 8, 8}) > 0.5, 1.0, -1.0).to(torch::kFloat64);
    auto prediction = target + sign * (torch::rand({1, 3, 8, 8}, torch::kFloat64) * 0.4 + 0.1);
    record("perceptual_loss", support::gradcheck(
                                  [&](const std::vector<torch::Tensor>& in) {
                                      return losses::perceptual_loss(target, in[0], losses::IdentityExtractor{});
                                  },
                                  {prediction}));
    const double elapsed = clock.seconds();
    detail << fmt(elapsed) << " s";
    return {ok && elapsed < 60.0, detail.str()};
}

Verdict motion_identity() {
    torch::manual_seed(4);
    const std::int64_t b = 2, k = 10, h = 16, w = 16;
    motion::KeypointSet kp{torch::rand({b, k, 2}) * 2 - 1, torch::eye(2).expand({b, k, 2, 2}).contiguous()};
    auto grid = motion::identity_grid(h, w);
    auto sparse = motion::sparse_motion(kp, kp, grid);

    auto background = torch::zeros({b, k + 1, h, w});
    background.select(1, 0).fill_(1.0);
    const double forced = (motion::compose_dense_flow(background, sparse) - grid).abs().max().item<double>();
    auto soft = torch::softmax(torch::randn({b, k + 1, h, w}), 1);
    const double mixed = (motion::compose_dense_flow(soft, sparse) - grid).abs().max().item<double>();

    motion::DenseMotion dm;
    dm.masks = background;
    dm.flow = motion::compose_dense_flow(background, sparse);
    dm.occlusion = torch::ones({b, 1, h, w});
    auto features = torch::rand({b, 8, h, w});
    const double warped = (motion::warp_features(features, dm) - features).abs().max().item<double>();
    return {forced <= 1e-6 && mixed <= 1e-6 && warped <= 1e-6,
            "flow deviation " + fmt(forced) + " (background masks), " + fmt(mixed) +
                " (random masks); warped feature deviation " + fmt(warped)};
}

Verdict ensemble_degeneracy() {
    Stopwatch clock;
    auto base = support::tiny_config(11);
    base.batch_size = 2;
    FixedPairSource source(corpus_pairs(8, base.model.image_size, 11));

    auto full = base;
    full.discriminators = {{gan::Modality::rgb, 1.0}, {gan::Modality::depth, 0.0}, {gan::Modality::normal, 0.0}};
    auto single = base;
    single.discriminators = {{gan::Modality::rgb, 1.0}};

    auto a = make_train_state(full);
    auto b = make_train_state(single);
    train(a, source, 200);
    train(b, source, 200);
    const bool generator_same = bit_identical(*a.generator, *b.generator);
    const bool rgb_same = bit_identical(*a.ensemble->member(gan::Modality::rgb), *b.ensemble->member(gan::Modality::rgb));
    return {generator_same && rgb_same,
            std::string("200 steps; generator parameters ") + (generator_same ? "bit-identical" : "DIFFER") +
                ", RGB discriminator " + (rgb_same ? "bit-identical" : "DIFFERS") + ", " + fmt(clock.seconds()) +
                " s"};
}

Verdict geometry_oracle() {
    using geometry::normal_from_depth;
    const std::int64_t n = 64;
    auto constant = normal_from_depth(torch::full({1, 1, n, n}, 5.0, torch::kFloat64));
    auto up = torch::tensor({0.0, 0.0, 1.0}, torch::kFloat64).reshape({1, 3, 1, 1});
    const double constant_err = (constant - up).abs().max().item<double>();

    auto cols = torch::arange(n, torch::kFloat64).reshape({1, 1, 1, n}).expand({1, 1, n, n});
    auto plane = normal_from_depth(50.0 + cols);
    auto tilt = torch::tensor({-1.0, 0.0, 1.0}, torch::kFloat64).reshape({1, 3, 1, 1}) / std::sqrt(2.0);
    auto interior = [&](const torch::Tensor& t) { return t.slice(2, 1, n - 1).slice(3, 1, n - 1); };
    const double plane_err = (interior(plane) - tilt).abs().max().item<double>();

    geometry::SceneSpec spec;
    spec.size = n;
    spec.radius = 24.0;
    auto scene = geometry::render_synthetic_scene(spec);
    auto estimated = normal_from_depth(scene.truth.depth);
    auto coords = torch::arange(n, torch::kFloat64) - (n - 1) / 2.0;
    auto mesh = torch::meshgrid({coords, coords}, "ij");
    auto radius = torch::sqrt(mesh[0].square() + mesh[1].square());
    // Interior: the central 80 % of the cap radius, away from the silhouette where the
    // surface slope diverges and the stencil straddles the rim.
    auto mask = radius <= 0.8 * spec.radius;
    auto err = (estimated[0] - scene.truth.normal[0]).abs().amax(0);
    const double sphere_err = err.masked_select(mask).max().item<double>();
    return {constant_err <= 1e-6 && plane_err <= 1e-6 && sphere_err <= 2e-2,
            "constant " + fmt(constant_err) + ", unit-slope plane " + fmt(plane_err) + ", sphere cap interior " +
                fmt(sphere_err) + " over " + std::to_string(mask.sum().item<std::int64_t>()) + " px"};
}

Verdict frozen_extractor() {
    std::ostringstream detail;
    bool ok = true;
    for (const std::string backend : {"baseline", "oracle"}) {
        auto config = support::tiny_config(5);
        config.geometry_backend = backend;
        auto state = make_train_state(config);
        std::vector<torch::Tensor> before;
        for (const auto& p : state.geometry->parameters()) {
            before.push_back(p.clone());
        }
        const auto lambda_before = state.ensemble->weights();
        const auto config_lambda = std::vector<double>{config.lambda(gan::Modality::rgb),
                                                       config.lambda(gan::Modality::depth),
                                                       config.lambda(gan::Modality::normal)};
        FixedPairSource source(corpus_pairs(4, config.model.image_size, 5));
        train(state, source, 5);

        bool same = true;
        auto after = state.geometry->parameters();
        same = same && after.size() == before.size();
        for (std::size_t i = 0; same && i < after.size(); ++i) {
            same = torch::equal(after[i], before[i]) && !after[i].requires_grad();
        }
        const bool lambda_same = state.ensemble->weights() == lambda_before &&
                                 std::vector<double>{state.config.lambda(gan::Modality::rgb),
                                                     state.config.lambda(gan::Modality::depth),
                                                     state.config.lambda(gan::Modality::normal)} == config_lambda;
        const bool fingerprint_same = geometry_fingerprint(*state.geometry) == state.geometry_fingerprint;
        ok = ok && same && lambda_same && fingerprint_same;
        detail << backend << ": geometry " << (same && fingerprint_same ? "unchanged" : "CHANGED") << ", lambda "
               << (lambda_same ? "unchanged" : "CHANGED") << "; ";
    }
    detail << "5 training steps each";
    return {ok, detail.str()};
}

Verdict overfit_smoke() {
    Stopwatch clock;
    TrainConfig config;
    config.model.image_size = 64;
    config.batch_size = 4;
    config.seed = 8;
    config.geometry_backend = "baseline";
    const std::int64_t steps = 2000;
    config.total_steps = steps;

    auto pairs = corpus_pairs(50, 64, 8);
    auto all = stack_pairs(pairs);
    FixedPairSource source(pairs);
    auto state = make_train_state(config);
    const double initial = reconstruction_l1(state.generator, all);

    bool finite = true;
    std::int64_t first_bad = -1;
    train(state, source, steps, [&](const TrainState& s, const losses::LossReport& r) {
        const bool ok = std::isfinite(r.total) && std::isfinite(r.perceptual) && std::isfinite(r.adversarial_g) &&
                        std::isfinite(r.equivariance) && std::isfinite(r.discriminator);
        if (!ok && finite) {
            finite = false;
            first_bad = s.step;
        }
        if (s.step % 250 == 0) {
            std::cerr << "  [overfit] step " << s.step << " batch l1 " << fmt(r.reconstruction_l1) << " ("
                      << fmt(clock.seconds()) << " s)\n";
        }
    });
    const double final_l1 = reconstruction_l1(state.generator, all);
    const double elapsed = clock.seconds();
    const double ratio = final_l1 / initial;
    return {finite && ratio <= 0.5 && elapsed <= 1800.0,
            "L1 " + fmt(initial) + " -> " + fmt(final_l1) + " (ratio " + fmt(ratio) + "), losses " +
                (finite ? "finite" : "NON-FINITE at step " + std::to_string(first_bad)) + ", " + fmt(elapsed) +
                " s for " + std::to_string(steps) + " steps"};
}

Verdict metric_sanity() {
    torch::manual_seed(9);
    std::ostringstream detail;
    bool ok = true;
    auto x = torch::rand({3, 32, 32});
    const double s = metrics::ssim(x, x);
    const double l = metrics::l1(x, x);
    ok = ok && std::abs(s - 1.0) <= 1e-9 && l == 0.0;
    detail << "ssim(x,x)=" << fmt(s) << " l1(x,x)=" << l;

    metrics::CentroidLandmarks landmarks;
    std::vector<Image> frames;
    for (int i = 0; i < 4; ++i) {
        frames.emplace_back(torch::rand({3, 32, 32}) * 0.8 + 0.1);
    }
    const double same = metrics::akd(frames, frames, landmarks).value;
    ok = ok && same == 0.0;
    detail << " akd(identical)=" << same;

    // One landmark each; the predicted landmark sits at offset (3, 4).
    class FixedLandmark final : public metrics::LandmarkPlugin {
    public:
        std::string id() const override { return "fixed"; }
        std::optional<torch::Tensor> detect(const Image& frame) const override {
            const bool shifted = frame.tensor()[0][0][0].item<float>() > 0.5f;
            return shifted ? torch::tensor({{13.0, 24.0}}, torch::kFloat64)
                           : torch::tensor({{10.0, 20.0}}, torch::kFloat64);
        }
    } fixed;
    const double offset = metrics::akd({Image::constant(4, 4, 1.0f)}, {Image::constant(4, 4, 0.0f)}, fixed).value;
    ok = ok && std::abs(offset - 5.0) <= 1e-9;
    detail << " akd(offset 3,4)=" << std::setprecision(12) << offset;

    auto feats = torch::randn({100, 8}, torch::kFloat64);
    const double fid_same = metrics::fid(feats, feats);
    ok = ok && fid_same <= 1e-6;
    detail << " fid(identical)=" << fmt(fid_same);

    auto gen = at::make_generator<at::CPUGeneratorImpl>(99);
    const std::int64_t samples = 50000;
    auto a = torch::randn({samples, 4}, gen, torch::kFloat64);
    auto b = torch::randn({samples, 4}, gen, torch::kFloat64);
    b.select(1, 0).add_(1.0);
    const double gaussian = metrics::fid(a, b);
    ok = ok && std::abs(gaussian - 1.0) <= 0.1;
    detail << " fid(N(0,I), N(e1,I))=" << fmt(gaussian);
    return {ok, detail.str()};
}

Verdict spectral_normalization() {
    torch::manual_seed(10);
    double worst = 0.0;
    std::mt19937_64 rng(10);
    std::uniform_int_distribution<int> width(2, 24), kernel(1, 4);
    for (int i = 0; i < 20; ++i) {
        const int in = width(rng);
        const int out = width(rng);
        const int k = kernel(rng);
        gan::SNConv2d conv(in, out, k, 1, 0);
        conv->train();
        {
            torch::NoGradGuard no_grad;
            for (int it = 0; it < 50; ++it) {
                conv->forward(torch::randn({1, in, k, k}));
            }
        }
        auto w = conv->normalized_weight().reshape({out, -1}).to(torch::kFloat64);
        const double top = torch::linalg_svdvals(w).max().item<double>();
        worst = std::max(worst, std::abs(top - 1.0));
    }
    return {worst <= 1e-3, "20 kernels, 50 power iterations, max |sigma_max - 1| = " + fmt(worst)};
}

int run_cli_command(const std::string& args) {
    const std::string command = std::string("\"") + REENACT_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
    return std::system(command.c_str());
}

Verdict determinism() {
    Stopwatch clock;
    support::TempDir dir("acceptance_determinism");
    const auto a = dir.path() / "a";
    const auto b = dir.path() / "b";
    const std::string common = " --seed 13 --steps 6 --batch-size 2 --synthetic-clips 4 --synthetic-frames 4";
    const int code_a = run_cli_command("train --output \"" + a.string() + "\"" + common);
    const int code_b = run_cli_command("train --output \"" + b.string() + "\"" + common);
    if (code_a != 0 || code_b != 0) {
        return {false, "train invocation failed (exit " + std::to_string(code_a) + ", " + std::to_string(code_b) + ")"};
    }
    const auto crc_a = support::file_crc(a / "final.ckpt");
    const auto crc_b = support::file_crc(b / "final.ckpt");
    const bool runs_same = crc_a == crc_b && support::files_identical(a / "final.ckpt", b / "final.ckpt");

    auto loaded = load_checkpoint(a / "final.ckpt");
    save_checkpoint(loaded, dir.path() / "resaved.ckpt");
    const bool resave_same = support::files_identical(a / "final.ckpt", dir.path() / "resaved.ckpt");

    std::ostringstream crc;
    crc << std::hex << crc_a << "/" << crc_b;
    return {runs_same && resave_same, std::string("two CLI runs ") + (runs_same ? "hash-identical" : "DIFFER") +
                                          " (crc32 " + crc.str() + "), save->load->save " +
                                          (resave_same ? "byte-identical" : "DIFFERS") + ", " +
                                          fmt(clock.seconds()) + " s"};
}

} // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    std::set<int> skip;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if ((arg == "--only" || arg == "--skip") && i + 1 < argc) {
            (arg == "--only" ? only : skip).insert(std::atoi(argv[++i]));
        } else {
            std::cerr << "usage: reenact_acceptance [--only N]... [--skip N]...\n";
            return 2;
        }
    }
    torch::set_num_threads(1);

    const std::vector<Criterion> criteria{
        {2, "volume-render oracle", volume_render_oracle},
        {3, "gradient checks", gradient_checks},
        {4, "motion identity", motion_identity},
        {5, "ensemble degeneracy", ensemble_degeneracy},
        {6, "geometry oracle", geometry_oracle},
        {7, "frozen extractor and lambda constancy", frozen_extractor},
        {8, "overfit smoke test", overfit_smoke},
        {9, "metric sanity", metric_sanity},
        {10, "spectral normalization", spectral_normalization},
        {11, "determinism", determinism},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        if ((!only.empty() && !only.count(c.id)) || skip.count(c.id)) {
            continue;
        }
        Verdict v;
        try {
            v = c.check();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        failures += v.passed ? 0 : 1;
        std::cout << (v.passed ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << v.detail
                  << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
