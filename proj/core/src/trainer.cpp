// SPDX-License-Identifier: Apache-2.0
#include "reenact/trainer.hpp"

#include "reenact/errors.hpp"
#include "reenact/seeding.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>
#include <zlib.h>

#include <cmath>
#include <sstream>

namespace reenact {

namespace {

torch::optim::AdamOptions adam_options(const TrainConfig& config) {
    return torch::optim::AdamOptions(config.learning_rate).betas({config.beta1, config.beta2});
}

bool finite(double v) { return std::isfinite(v); }

std::string describe(const losses::LossReport& r, std::int64_t step) {
    std::ostringstream out;
    out << "non-finite loss at step " << step << ": perceptual=" << r.perceptual
        << " adversarial_g=" << r.adversarial_g << " equivariance=" << r.equivariance << " total=" << r.total
        << " discriminator=" << r.discriminator;
    return out.str();
}

double mean_of(const torch::Tensor& t) { return t.detach().mean().item<double>(); }

} // namespace

std::uint32_t geometry_fingerprint(const geometry::GeometryExtractor& extractor) {
    uLong crc = crc32(0L, Z_NULL, 0);
    for (const auto& p : extractor.parameters()) {
        auto c = p.detach().contiguous().cpu();
        crc = crc32(crc, reinterpret_cast<const Bytef*>(c.data_ptr()), static_cast<uInt>(c.nbytes()));
    }
    return static_cast<std::uint32_t>(crc);
}

TrainState make_train_state(const TrainConfig& config) {
    config.validate();
    torch::set_num_threads(config.threads);

    TrainState state;
    state.config = config;
    state.generator = Generator(config.model, config.seed);
    state.ensemble = gan::DiscriminatorEnsemble(config.discriminators, config.discriminator_scales,
                                                config.discriminator_channels, config.seed);
    state.geometry = geometry::make_extractor(config.geometry_backend, config.model.image_size, config.geometry_weights);
    state.generator_optimizer =
        std::make_unique<torch::optim::Adam>(state.generator->parameters(), adam_options(config));
    state.discriminator_optimizer =
        std::make_unique<torch::optim::Adam>(state.ensemble->parameters(), adam_options(config));
    state.geometry_fingerprint = geometry_fingerprint(*state.geometry);
    state.initial_lambda = state.ensemble->weights();
    return state;
}

void check_frozen(const TrainState& state) {
    if (geometry_fingerprint(*state.geometry) != state.geometry_fingerprint) {
        throw Error("geometry backend '" + state.geometry->id() + "' parameters changed during training");
    }
    for (const auto& p : state.geometry->parameters()) {
        if (p.requires_grad()) {
            throw Error("geometry backend '" + state.geometry->id() + "' exposes a trainable tensor");
        }
    }
    if (state.ensemble->weights() != state.initial_lambda) {
        throw Error("discriminator ensemble weights changed during training");
    }
}

DatasetPairSource::DatasetPairSource(dataio::DatasetManifest manifest, std::uint64_t seed, std::int64_t image_size)
    : manifest_(std::move(manifest)), seed_(seed), cache_(std::make_unique<dataio::FrameCache>(image_size)) {
    if (manifest_.empty()) {
        throw ValidationError("no clips found");
    }
}

std::pair<Image, Image> DatasetPairSource::pair(std::uint64_t index) const {
    const auto idx = dataio::sample_pair_index(manifest_, seed_, index);
    const auto& clip = manifest_.clips[idx.clip];
    return {cache_->get(clip.frames[static_cast<std::size_t>(idx.source_index)]),
            cache_->get(clip.frames[static_cast<std::size_t>(idx.driving_index)])};
}

CorpusPairSource::CorpusPairSource(synthetic::BlobCorpus corpus, std::uint64_t seed)
    : corpus_(std::move(corpus)), manifest_(corpus_.manifest()), seed_(seed) {}

std::pair<Image, Image> CorpusPairSource::pair(std::uint64_t index) const {
    const auto idx = dataio::sample_pair_index(manifest_, seed_, index);
    const auto& frames = corpus_.frames[idx.clip];
    return {frames[static_cast<std::size_t>(idx.source_index)], frames[static_cast<std::size_t>(idx.driving_index)]};
}

FixedPairSource::FixedPairSource(std::vector<std::pair<Image, Image>> pairs) : pairs_(std::move(pairs)) {
    if (pairs_.empty()) {
        throw ValidationError("fixed pair source needs at least one pair");
    }
}

std::pair<Image, Image> FixedPairSource::pair(std::uint64_t index) const { return pairs_[index % pairs_.size()]; }

FramePairs stack_pairs(const std::vector<std::pair<Image, Image>>& pairs) {
    std::vector<Image> sources;
    std::vector<Image> drivings;
    for (const auto& [s, d] : pairs) {
        sources.push_back(s);
        drivings.push_back(d);
    }
    return {stack_images(sources), stack_images(drivings)};
}

FramePairs make_batch(const PairSource& source, std::int64_t step, std::int64_t batch_size) {
    if (batch_size < 1 || step < 0) {
        throw ValidationError("make_batch needs batch_size >= 1 and step >= 0");
    }
    std::vector<std::pair<Image, Image>> pairs;
    for (std::int64_t b = 0; b < batch_size; ++b) {
        pairs.push_back(source.pair(static_cast<std::uint64_t>(step * batch_size + b)));
    }
    return stack_pairs(pairs);
}

losses::LossReport train_step(TrainState& state, const FramePairs& batch) {
    const auto& config = state.config;
    if (!batch.source.defined() || !batch.driving.defined() || batch.source.sizes() != batch.driving.sizes()) {
        throw ValidationError("batch needs source and driving tensors of equal shape");
    }
    state.generator->train();
    state.ensemble->train();
    losses::LossReport report;

    // (1) forward
    auto out = state.generator->forward(batch.source, batch.driving);
    report.reconstruction_l1 = mean_of((out.prediction - batch.driving).abs());

    // (2) geometry for the real driving frame and the prediction
    gan::EnsembleInput real{batch.driving, {}, {}};
    gan::EnsembleInput fake{out.prediction, {}, {}};
    if (state.ensemble->needs_geometry()) {
        {
            torch::NoGradGuard no_grad;
            auto g = geometry::extract_geometry(batch.driving, *state.geometry, config.pixel_spacing);
            real.depth = g.depth;
            real.normal = g.normal;
        }
        auto g = geometry::extract_geometry(out.prediction, *state.geometry, config.pixel_spacing);
        fake.depth = g.depth;
        fake.normal = g.normal;
    }

    // (3) discriminator update; fakes are detached inside
    state.discriminator_optimizer->zero_grad();
    auto d_step = gan::gan_loss_discriminator(state.ensemble, real, fake, config.gan_loss);
    report.discriminator = d_step.loss.item<double>();
    for (const auto& [name, score] : d_step.real.members) {
        report.real_scores[name] = mean_of(score);
    }
    for (const auto& [name, score] : d_step.fake.members) {
        report.fake_scores[name] = mean_of(score);
    }
    if (!finite(report.discriminator)) {
        throw NumericalError(describe(report, state.step));
    }
    d_step.loss.backward();
    state.discriminator_optimizer->step();

    // (4) generator update
    state.generator_optimizer->zero_grad();
    losses::LossTerms terms;
    terms.adversarial_g = gan::gan_loss_generator(state.ensemble, fake, config.gan_loss).loss;
    terms.perceptual = losses::perceptual_loss(batch.driving, out.prediction, losses::IdentityExtractor{});
    if (config.loss_weights.equivariance != 0.0) {
        auto rng = at::make_generator<at::CPUGeneratorImpl>(
            derive_seed(derive_seed(config.seed, "equivariance"), static_cast<std::uint64_t>(state.step)));
        auto tps = motion::ThinPlateSpline::sample(batch.driving.size(0), rng, config.equivariance,
                                                   batch.driving.options());
        auto detect = [&](const torch::Tensor& images) { return state.generator->detect(images); };
        terms.equivariance = motion::equivariance_loss(batch.driving, out.driving_keypoints, detect, tps,
                                                       !config.model.freeze_jacobians, config.model.jacobian_eps)
                                 .total;
    } else {
        terms.equivariance = torch::zeros({}, batch.driving.options());
    }
    auto g_report = losses::total_loss(terms, config.loss_weights);
    report.perceptual = g_report.perceptual;
    report.adversarial_g = g_report.adversarial_g;
    report.equivariance = g_report.equivariance;
    report.total = g_report.total;
    report.total_tensor = g_report.total_tensor;
    if (!finite(report.perceptual) || !finite(report.adversarial_g) || !finite(report.equivariance) ||
        !finite(report.total)) {
        throw NumericalError(describe(report, state.step));
    }
    report.total_tensor.backward();
    state.generator_optimizer->step();

    ++state.step;
    report.total_tensor = report.total_tensor.detach();
    return report;
}

void train(TrainState& state, const PairSource& source, std::int64_t steps,
           const std::function<void(const TrainState&, const losses::LossReport&)>& on_step) {
    while (state.step < steps) {
        auto batch = make_batch(source, state.step, state.config.batch_size);
        auto report = train_step(state, batch);
        if (on_step) {
            on_step(state, report);
        }
    }
    check_frozen(state);
}

double reconstruction_l1(Generator& generator, const FramePairs& pairs, std::int64_t chunk) {
    torch::NoGradGuard no_grad;
    const bool was_training = generator->is_training();
    generator->eval();
    const auto n = pairs.source.size(0);
    double sum = 0.0;
    for (std::int64_t start = 0; start < n; start += chunk) {
        const auto len = std::min(chunk, n - start);
        auto s = pairs.source.narrow(0, start, len);
        auto d = pairs.driving.narrow(0, start, len);
        auto pred = generator->forward(s, d).prediction;
        sum += (pred - d).abs().sum().item<double>();
    }
    generator->train(was_training);
    return sum / static_cast<double>(pairs.driving.numel());
}

TransferMode parse_transfer_mode(const std::string& name) {
    if (name == "relative") {
        return TransferMode::relative;
    }
    if (name == "absolute") {
        return TransferMode::absolute;
    }
    throw ValidationError("unknown keypoint transfer mode '" + name + "' (expected absolute or relative)");
}

AnimationResult animate(Generator& generator, const AnimationRequest& request) {
    if (request.driving.empty()) {
        throw ValidationError("empty driving sequence");
    }
    if (request.source.empty()) {
        throw ValidationError("animation needs a source image");
    }
    torch::NoGradGuard no_grad;
    const bool was_training = generator->is_training();
    generator->eval();

    const auto source = request.source.batched();
    const auto kp_source = generator->detect(source);
    const auto kp_initial = generator->detect(request.driving.front().batched());
    AnimationResult result;
    for (const auto& frame : request.driving) {
        if (frame.height() != request.source.height() || frame.width() != request.source.width()) {
            throw ValidationError("driving frames must match the source size");
        }
        auto kp_driving = generator->detect(frame.batched());
        auto kp = request.mode == TransferMode::relative
                      ? motion::transfer_relative(kp_source, kp_driving, kp_initial, generator->config().jacobian_eps)
                      : kp_driving;
        auto out = generator->generate(source, kp_source, kp);
        result.frames.emplace_back(out.prediction[0].clamp(0.0, 1.0).contiguous());
        result.keypoints.push_back(kp.detach());
        result.transmittance.push_back(fvr::transmittance(out.rays.density));
    }
    generator->train(was_training);
    return result;
}

} // namespace reenact
