// SPDX-License-Identifier: Apache-2.0
#include "reenact/gan.hpp"

#include "reenact/errors.hpp"
#include "reenact/seeding.hpp"

#include <torch/torch.h>

#include <array>
#include <cmath>
#include <set>

namespace reenact::gan {

namespace F = torch::nn::functional;

namespace {

constexpr std::array<Modality, 3> kCanonicalOrder{Modality::rgb, Modality::depth, Modality::normal};

torch::Tensor unit(const torch::Tensor& x) { return x / x.norm().clamp_min(1e-12); }

void reset_state(torch::Tensor& u) { u.fill_(1.0 / std::sqrt(static_cast<double>(u.numel()))); }

} // namespace

SpectralResult spectral_normalize(const torch::Tensor& weight, torch::Tensor& u, int iterations) {
    if (weight.dim() != 2 || u.dim() != 1 || u.size(0) != weight.size(0)) {
        throw ValidationError("spectral_normalize expects weight [out, in] and state [out]");
    }
    {
        torch::NoGradGuard no_grad;
        if (weight.abs().max().item<double>() == 0.0) {
            reset_state(u);
            return {torch::zeros_like(weight), torch::zeros({}, weight.options())};
        }
    }
    torch::Tensor v;
    {
        torch::NoGradGuard no_grad;
        auto w = weight.detach();
        for (int i = 0; i < iterations; ++i) {
            v = unit(torch::mv(w.t(), u));
            u.copy_(unit(torch::mv(w, v)));
        }
        if (iterations <= 0) {
            v = unit(torch::mv(w.t(), u));
        }
    }
    // Snapshot the vectors: later forwards update `u` in place while this graph is alive.
    auto sigma = torch::dot(u.clone(), torch::mv(weight, v.clone()));
    return {weight / sigma, sigma};
}

SNConv2dImpl::SNConv2dImpl(std::int64_t in_channels, std::int64_t out_channels, std::int64_t kernel,
                           std::int64_t stride, std::int64_t padding)
    : stride_(stride), padding_(padding) {
    // Same initialisation as torch::nn::Conv2d.
    torch::nn::Conv2d reference(torch::nn::Conv2dOptions(in_channels, out_channels, kernel));
    weight = register_parameter("weight", reference->weight.detach().clone());
    bias = register_parameter("bias", reference->bias.detach().clone());
    auto state = torch::randn({out_channels});
    u = register_buffer("u", unit(state));
}

torch::Tensor SNConv2dImpl::forward(const torch::Tensor& x) {
    auto matrix = weight.reshape({weight.size(0), -1});
    auto result = spectral_normalize(matrix, u, is_training() ? 1 : 0);
    return F::conv2d(x, result.weight.reshape(weight.sizes()),
                     F::Conv2dFuncOptions().bias(bias).stride(stride_).padding(padding_));
}

torch::Tensor SNConv2dImpl::normalized_weight() const {
    auto state = u.clone();
    return spectral_normalize(weight.reshape({weight.size(0), -1}), state, 0).weight.reshape(weight.sizes());
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(std::int64_t in_channels, std::int64_t base_channels) {
    std::int64_t channels = in_channels;
    for (int i = 0; i < 3; ++i) {
        const auto out = base_channels << i;
        layers_->push_back(SNConv2d(channels, out, 4, 2, 1));
        channels = out;
    }
    layers_->push_back(SNConv2d(channels, 1, 3, 1, 1));
    register_module("layers", layers_);
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& x) {
    auto h = x;
    const auto last = layers_->size() - 1;
    for (std::size_t i = 0; i < layers_->size(); ++i) {
        h = layers_[i]->as<SNConv2d>()->forward(h);
        if (i != last) {
            h = F::leaky_relu(h, F::LeakyReLUFuncOptions().negative_slope(0.2));
        }
    }
    return h;
}

MultiScaleDiscriminatorImpl::MultiScaleDiscriminatorImpl(std::int64_t in_channels, std::int64_t scales,
                                                         std::int64_t base_channels) {
    if (scales < 1) {
        throw ValidationError("a discriminator needs at least one scale");
    }
    for (std::int64_t s = 0; s < scales; ++s) {
        scales_->push_back(PatchDiscriminator(in_channels, base_channels));
    }
    register_module("scales", scales_);
}

std::vector<torch::Tensor> MultiScaleDiscriminatorImpl::patch_logits(const torch::Tensor& x) {
    std::vector<torch::Tensor> out;
    auto level = x;
    for (std::size_t s = 0; s < scales_->size(); ++s) {
        if (s > 0) {
            level = F::avg_pool2d(level, F::AvgPool2dFuncOptions(2));
        }
        out.push_back(scales_[s]->as<PatchDiscriminator>()->forward(level));
    }
    return out;
}

torch::Tensor MultiScaleDiscriminatorImpl::forward(const torch::Tensor& x) {
    auto logits = patch_logits(x);
    torch::Tensor total;
    for (const auto& map : logits) {
        auto p = torch::sigmoid(map).mean({1, 2, 3});
        total = total.defined() ? total + p : p;
    }
    return total / static_cast<double>(logits.size());
}

std::string to_string(Modality m) {
    switch (m) {
    case Modality::rgb:
        return "rgb";
    case Modality::depth:
        return "depth";
    case Modality::normal:
        return "normal";
    }
    return "unknown";
}

Modality parse_modality(const std::string& name) {
    for (auto m : kCanonicalOrder) {
        if (to_string(m) == name) {
            return m;
        }
    }
    throw ValidationError("unknown discriminator modality '" + name + "'");
}

std::int64_t input_channels(Modality m) { return m == Modality::depth ? 1 : 3; }

const torch::Tensor& EnsembleInput::get(Modality m) const {
    switch (m) {
    case Modality::rgb:
        return rgb;
    case Modality::depth:
        return depth;
    case Modality::normal:
        return normal;
    }
    throw ValidationError("bad modality");
}

EnsembleInput EnsembleInput::detach() const {
    EnsembleInput out;
    out.rgb = rgb.defined() ? rgb.detach() : rgb;
    out.depth = depth.defined() ? depth.detach() : depth;
    out.normal = normal.defined() ? normal.detach() : normal;
    return out;
}

void validate_simplex(const std::vector<MemberSpec>& members) {
    if (members.empty()) {
        throw ValidationError("discriminator ensemble needs at least one member");
    }
    std::set<Modality> seen;
    double sum = 0.0;
    for (const auto& m : members) {
        if (!seen.insert(m.modality).second) {
            throw ValidationError("duplicate discriminator member '" + to_string(m.modality) + "'");
        }
        if (!(m.weight >= 0.0) || !std::isfinite(m.weight)) {
            throw ValidationError("discriminator weight for '" + to_string(m.modality) + "' must be non-negative");
        }
        sum += m.weight;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw ValidationError("discriminator weights must sum to 1 (simplex violation: sum = " + std::to_string(sum) +
                              ")");
    }
}

torch::Tensor weighted_total(const std::vector<MemberSpec>& members,
                             const std::map<std::string, torch::Tensor>& scores) {
    torch::Tensor total;
    for (auto modality : kCanonicalOrder) {
        for (const auto& m : members) {
            if (m.modality != modality || m.weight == 0.0) {
                continue;
            }
            auto it = scores.find(to_string(modality));
            if (it == scores.end()) {
                throw ValidationError("missing score for member '" + to_string(modality) + "'");
            }
            auto term = m.weight * it->second;
            total = total.defined() ? total + term : term;
        }
    }
    if (!total.defined()) {
        throw ValidationError("ensemble has no member with positive weight");
    }
    return total;
}

torch::Tensor normalize_depth(const torch::Tensor& depth) {
    auto flat = depth.flatten(1);
    auto lo = std::get<0>(flat.min(1, true));
    auto hi = std::get<0>(flat.max(1, true));
    return ((flat - lo) / (hi - lo + 1e-8)).reshape(depth.sizes());
}

DiscriminatorEnsembleImpl::DiscriminatorEnsembleImpl(std::vector<MemberSpec> members, std::int64_t scales,
                                                     std::int64_t base_channels, std::optional<std::uint64_t> seed)
    : specs_(std::move(members)) {
    validate_simplex(specs_);
    for (const auto& spec : specs_) {
        const auto name = to_string(spec.modality);
        if (seed) {
            torch::manual_seed(derive_seed(*seed, "discriminator/" + name));
        }
        nets_.emplace(name, register_module(name, MultiScaleDiscriminator(input_channels(spec.modality), scales,
                                                                          base_channels)));
    }
}

EnsembleScores DiscriminatorEnsembleImpl::forward(const EnsembleInput& input) {
    EnsembleScores scores;
    for (const auto& spec : specs_) {
        if (spec.weight == 0.0) {
            continue;
        }
        const auto& x = input.get(spec.modality);
        const auto name = to_string(spec.modality);
        if (!x.defined()) {
            throw ValidationError("ensemble input lacks the '" + name + "' modality required by a weighted member");
        }
        auto view = spec.modality == Modality::depth ? normalize_depth(x) : x;
        scores.members[name] = nets_.at(name)->forward(view);
    }
    scores.total = weighted_total(specs_, scores.members);
    return scores;
}

std::vector<double> DiscriminatorEnsembleImpl::weights() const {
    std::vector<double> out;
    for (const auto& s : specs_) {
        out.push_back(s.weight);
    }
    return out;
}

void DiscriminatorEnsembleImpl::set_weights(const std::vector<double>& weights) {
    if (weights.size() != specs_.size()) {
        throw ValidationError("weight count does not match the member count");
    }
    auto updated = specs_;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        updated[i].weight = weights[i];
    }
    validate_simplex(updated);
    specs_ = std::move(updated);
}

bool DiscriminatorEnsembleImpl::needs_geometry() const {
    for (const auto& s : specs_) {
        if (s.modality != Modality::rgb && s.weight > 0.0) {
            return true;
        }
    }
    return false;
}

MultiScaleDiscriminator DiscriminatorEnsembleImpl::member(Modality m) const { return nets_.at(to_string(m)); }

torch::Tensor discriminator_loss(const torch::Tensor& real_total, const torch::Tensor& fake_total, LossKind kind) {
    if (kind == LossKind::least_squares) {
        return ((real_total - 1).square() + fake_total.square()).mean();
    }
    return -(torch::log(real_total.clamp_min(kLogClamp)) + torch::log((1 - fake_total).clamp_min(kLogClamp))).mean();
}

torch::Tensor generator_loss(const torch::Tensor& fake_total, LossKind kind) {
    if (kind == LossKind::least_squares) {
        return (fake_total - 1).square().mean();
    }
    return -torch::log(fake_total.clamp_min(kLogClamp)).mean();
}

DiscriminatorStep gan_loss_discriminator(DiscriminatorEnsemble& ensemble, const EnsembleInput& real,
                                         const EnsembleInput& fake, LossKind kind) {
    DiscriminatorStep step;
    step.real = ensemble->forward(real);
    step.fake = ensemble->forward(fake.detach());
    step.loss = discriminator_loss(step.real.total, step.fake.total, kind);
    return step;
}

GeneratorStep gan_loss_generator(DiscriminatorEnsemble& ensemble, const EnsembleInput& fake, LossKind kind) {
    GeneratorStep step;
    step.fake = ensemble->forward(fake);
    step.loss = generator_loss(step.fake.total, kind);
    return step;
}

} // namespace reenact::gan
