// SPDX-License-Identifier: Apache-2.0
#include "reenact/metrics.hpp"

#include "reenact/errors.hpp"

#include <nlohmann/json.hpp>
#include <c10/util/Exception.h>
#include <torch/torch.h>

#include <cmath>

namespace reenact::metrics {

namespace F = torch::nn::functional;

namespace {

void require_same(const torch::Tensor& x, const torch::Tensor& y, const char* what) {
    if (!x.defined() || !y.defined() || x.sizes() != y.sizes()) {
        throw ValidationError(std::string(what) + ": inputs must have identical shapes");
    }
}

torch::Tensor as_double(const torch::Tensor& t) { return t.detach().to(torch::kFloat64); }

torch::Tensor gaussian_window(std::int64_t size, double sigma) {
    auto axis = torch::arange(size, torch::kFloat64) - static_cast<double>(size / 2);
    auto g = torch::exp(-axis.square() / (2.0 * sigma * sigma));
    g = g / g.sum();
    return torch::outer(g, g);
}

void require_paired(const std::vector<Image>& a, const std::vector<Image>& b, const char* what) {
    if (a.size() != b.size()) {
        throw ValidationError(std::string(what) + ": sequences must have equal length");
    }
    if (a.empty()) {
        throw ValidationError(std::string(what) + ": sequences are empty");
    }
}

torch::Tensor covariance(const torch::Tensor& x, const torch::Tensor& mean) {
    auto centered = x - mean;
    return centered.t().mm(centered) / static_cast<double>(x.size(0) - 1);
}

torch::Tensor sym_sqrt(const torch::Tensor& m) {
    auto [values, vectors] = torch::linalg_eigh(m);
    const double most_negative = values.min().item<double>();
    if (most_negative < -1e-6) {
        TORCH_WARN("fid: clipping negative eigenvalue ", most_negative, " in the covariance square root");
    }
    auto root = values.clamp_min(0.0).sqrt();
    return vectors.mm(torch::diag(root)).mm(vectors.t());
}

} // namespace

double l1(const torch::Tensor& x, const torch::Tensor& y) {
    require_same(x, y, "l1");
    return (as_double(x) - as_double(y)).abs().mean().item<double>();
}

double psnr(const torch::Tensor& x, const torch::Tensor& y) {
    require_same(x, y, "psnr");
    const double mse = (as_double(x) - as_double(y)).square().mean().item<double>();
    if (mse <= 0.0) {
        return kPsnrCap;
    }
    return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

double ssim(const torch::Tensor& x, const torch::Tensor& y) {
    require_same(x, y, "ssim");
    auto a = as_double(x);
    auto b = as_double(y);
    if (a.dim() == 3) {
        a = a.unsqueeze(0);
        b = b.unsqueeze(0);
    }
    if (a.dim() != 4 || a.size(2) < 11 || a.size(3) < 11) {
        throw ValidationError("ssim expects [C, H, W] or [B, C, H, W] images of at least 11x11");
    }
    const auto channels = a.size(1);
    auto window = gaussian_window(11, 1.5).expand({channels, 1, 11, 11}).contiguous();
    auto filter = [&](const torch::Tensor& t) {
        return F::conv2d(t, window, F::Conv2dFuncOptions().groups(channels));
    };
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    auto mu_a = filter(a);
    auto mu_b = filter(b);
    auto var_a = filter(a * a) - mu_a.square();
    auto var_b = filter(b * b) - mu_b.square();
    auto cov = filter(a * b) - mu_a * mu_b;
    auto map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a.square() + mu_b.square() + c1) * (var_a + var_b + c2));
    return map.mean().item<double>();
}

std::optional<torch::Tensor> CentroidLandmarks::detect(const Image& frame) const {
    const auto& t = frame.tensor().to(torch::kFloat64);
    auto luma = 0.299 * t[0] + 0.587 * t[1] + 0.114 * t[2];
    const auto h = luma.size(0);
    const auto w = luma.size(1);
    auto centroid = [&](std::int64_t r0, std::int64_t r1, std::int64_t c0, std::int64_t c1) -> std::optional<std::array<double, 2>> {
        auto patch = luma.slice(0, r0, r1).slice(1, c0, c1);
        const double mass = patch.sum().item<double>();
        if (!(mass > 1e-12)) {
            return std::nullopt;
        }
        auto rows = torch::arange(r0, r1, torch::kFloat64).unsqueeze(1);
        auto cols = torch::arange(c0, c1, torch::kFloat64).unsqueeze(0);
        return std::array<double, 2>{(patch * cols).sum().item<double>() / mass,
                                     (patch * rows).sum().item<double>() / mass};
    };
    const std::array<std::array<std::int64_t, 4>, 5> regions{{{0, h, 0, w},
                                                              {0, h / 2, 0, w / 2},
                                                              {0, h / 2, w / 2, w},
                                                              {h / 2, h, 0, w / 2},
                                                              {h / 2, h, w / 2, w}}};
    auto out = torch::empty({5, 2}, torch::kFloat64);
    for (std::size_t i = 0; i < regions.size(); ++i) {
        auto c = centroid(regions[i][0], regions[i][1], regions[i][2], regions[i][3]);
        if (!c) {
            return std::nullopt;
        }
        out[static_cast<std::int64_t>(i)][0] = (*c)[0];
        out[static_cast<std::int64_t>(i)][1] = (*c)[1];
    }
    return out;
}

AkdResult akd(const std::vector<Image>& predicted, const std::vector<Image>& ground_truth,
              const LandmarkPlugin& plugin) {
    require_paired(predicted, ground_truth, "akd");
    AkdResult result;
    double sum = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        auto p = plugin.detect(predicted[i]);
        auto g = plugin.detect(ground_truth[i]);
        if (!p || !g) {
            ++result.frames_skipped;
            continue;
        }
        if (p->sizes() != g->sizes() || p->dim() != 2 || p->size(1) != 2) {
            throw ValidationError("landmark plugin '" + plugin.id() + "' returned inconsistent landmark sets");
        }
        sum += (as_double(*p) - as_double(*g)).square().sum(1).sqrt().mean().item<double>();
        ++result.frames_used;
    }
    if (result.frames_used == 0) {
        throw Error("no detectable faces");
    }
    result.value = sum / static_cast<double>(result.frames_used);
    return result;
}

double fid(const torch::Tensor& set_a, const torch::Tensor& set_b) {
    if (set_a.dim() != 2 || set_b.dim() != 2 || set_a.size(1) != set_b.size(1)) {
        throw ValidationError("fid expects feature sets [N, d] with a common d");
    }
    const auto d = set_a.size(1);
    if (set_a.size(0) < d + 1 || set_b.size(0) < d + 1) {
        throw ValidationError("fid needs at least " + std::to_string(d + 1) + " samples per set");
    }
    auto a = as_double(set_a);
    auto b = as_double(set_b);
    auto mu_a = a.mean(0);
    auto mu_b = b.mean(0);
    auto cov_a = covariance(a, mu_a);
    auto cov_b = covariance(b, mu_b);
    // tr sqrt(A B) = tr sqrt(A^1/2 B A^1/2), which is symmetric PSD.
    auto root_a = sym_sqrt(cov_a);
    auto middle = root_a.mm(cov_b).mm(root_a);
    middle = 0.5 * (middle + middle.t());
    auto cross = sym_sqrt(middle).trace();
    const double value =
        (mu_a - mu_b).square().sum().item<double>() + (cov_a.trace() + cov_b.trace() - 2.0 * cross).item<double>();
    return std::max(0.0, value);
}

torch::Tensor PooledStatsEmbedder::embed(const torch::Tensor& images) const {
    if (images.dim() != 4 || images.size(1) != 3) {
        throw ValidationError("embedder expects images [B, 3, H, W]");
    }
    auto x = as_double(images);
    auto pooled = F::adaptive_avg_pool2d(x, F::AdaptiveAvgPool2dFuncOptions({2, 2})).flatten(1);
    auto spread = x.flatten(2).std(2, /*unbiased=*/false);
    return torch::cat({pooled, spread}, 1);
}

std::optional<double> csim(const std::vector<Image>& predicted, const std::vector<Image>& identity_frames,
                           const IdentityPlugin* plugin) {
    if (plugin == nullptr) {
        return std::nullopt;
    }
    require_paired(predicted, identity_frames, "csim");
    auto a = as_double(plugin->embed(stack_images(predicted)));
    auto b = as_double(plugin->embed(stack_images(identity_frames)));
    auto cos = (a * b).sum(1) / (a.norm(2, 1) * b.norm(2, 1)).clamp_min(1e-12);
    return cos.mean().item<double>();
}

std::string MetricReport::to_json() const {
    nlohmann::json doc = nlohmann::json::object();
    for (const auto& [name, m] : metrics) {
        nlohmann::json entry;
        entry["value"] = m.value ? nlohmann::json(*m.value) : nlohmann::json("unavailable");
        entry["backend"] = m.backend;
        entry["count"] = m.count;
        if (!m.note.empty()) {
            entry["note"] = m.note;
        }
        doc[name] = entry;
    }
    return doc.dump(2);
}

MetricReport evaluate(const std::vector<Image>& predicted, const std::vector<Image>& ground_truth,
                      const EvaluationPlugins& plugins) {
    require_paired(predicted, ground_truth, "evaluate");
    const auto n = static_cast<std::int64_t>(predicted.size());
    MetricReport report;
    double l1_sum = 0.0;
    double psnr_sum = 0.0;
    double ssim_sum = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const auto& p = predicted[i].tensor();
        const auto& g = ground_truth[i].tensor();
        l1_sum += l1(p, g);
        psnr_sum += psnr(p, g);
        ssim_sum += ssim(p, g);
    }
    const double nd = static_cast<double>(n);
    report.metrics["l1"] = {l1_sum / nd, "analytic", n, "[0,1] scale"};
    report.metrics["l1_255"] = {255.0 * l1_sum / nd, "analytic", n, "[0,255] scale"};
    report.metrics["psnr"] = {psnr_sum / nd, "analytic", n, "dB, capped at 100"};
    report.metrics["ssim"] = {ssim_sum / nd, "gaussian-11x11", n, ""};

    if (plugins.landmarks != nullptr) {
        try {
            auto r = akd(predicted, ground_truth, *plugins.landmarks);
            report.metrics["akd"] = {r.value, plugins.landmarks->id(), r.frames_used,
                                     std::to_string(r.frames_skipped) + " frames skipped"};
        } catch (const Error& e) {
            report.metrics["akd"] = {std::nullopt, plugins.landmarks->id(), 0, e.what()};
        }
    } else {
        report.metrics["akd"] = {std::nullopt, "none", 0, "no landmark plugin"};
    }

    if (plugins.embedder != nullptr) {
        if (n >= plugins.embedder->dimension() + 1) {
            auto a = plugins.embedder->embed(stack_images(predicted));
            auto b = plugins.embedder->embed(stack_images(ground_truth));
            report.metrics["fid"] = {fid(a, b), plugins.embedder->id(), n, ""};
        } else {
            report.metrics["fid"] = {std::nullopt, plugins.embedder->id(), n,
                                     "needs at least " + std::to_string(plugins.embedder->dimension() + 1) +
                                         " frames"};
        }
    } else {
        report.metrics["fid"] = {std::nullopt, "none", 0, "no embedder plugin"};
    }

    auto c = csim(predicted, ground_truth, plugins.identity);
    report.metrics["csim"] = {c, plugins.identity ? plugins.identity->id() : "none", c ? n : 0,
                              c ? "" : "no identity plugin"};

    if (plugins.lpips != nullptr) {
        double sum = 0.0;
        for (std::size_t i = 0; i < predicted.size(); ++i) {
            sum += plugins.lpips->distance(predicted[i].tensor(), ground_truth[i].tensor());
        }
        report.metrics["lpips"] = {sum / nd, plugins.lpips->id(), n, ""};
    } else {
        report.metrics["lpips"] = {std::nullopt, "none", 0, "no LPIPS plugin"};
    }
    return report;
}

} // namespace reenact::metrics
