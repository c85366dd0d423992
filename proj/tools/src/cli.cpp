// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include "reenact/checkpoint.hpp"
#include "reenact/config.hpp"
#include "reenact/dataio.hpp"
#include "reenact/errors.hpp"
#include "reenact/geometry.hpp"
#include "reenact/metrics.hpp"
#include "reenact/synthetic.hpp"
#include "reenact/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

namespace reenact::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kEchoName = "config.toml";

/// Keys that describe a run rather than the model; stored in the echo alongside the
/// training configuration.
struct RunSettings {
    std::string data_root;
    std::int64_t synthetic_clips = 0;
    std::int64_t synthetic_frames = 8;
    std::int64_t checkpoint_every = 0;
};

struct TrainFlags {
    std::string config_path;
    std::string output;
    std::string resume;
    std::optional<std::uint64_t> seed;
    std::optional<std::int64_t> size;
    std::optional<std::int64_t> steps;
    std::optional<std::int64_t> batch_size;
    std::optional<double> lambda_rgb;
    std::optional<double> lambda_depth;
    std::optional<double> lambda_normal;
    std::optional<std::string> geometry_backend;
    std::optional<std::string> geometry_weights;
    std::optional<std::string> data_root;
    std::optional<std::int64_t> synthetic_clips;
    std::optional<std::int64_t> synthetic_frames;
    std::optional<std::int64_t> checkpoint_every;
};

std::int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        auto n = std::stoll(v, &pos);
        if (pos != v.size()) {
            throw std::invalid_argument(v);
        }
        return n;
    } catch (const std::exception&) {
        throw ValidationError("config key '" + key + "' expects an integer, got '" + v + "'");
    }
}

/// Splits run-level keys out of a parsed file, leaving the training keys.
RunSettings take_run_settings(ConfigValues& values) {
    RunSettings run;
    auto take = [&](const char* key) -> std::optional<std::string> {
        auto it = values.find(key);
        if (it == values.end()) {
            return std::nullopt;
        }
        auto v = it->second;
        values.erase(it);
        return v;
    };
    if (auto v = take("data_root")) {
        run.data_root = *v;
    }
    if (auto v = take("synthetic_clips")) {
        run.synthetic_clips = parse_int("synthetic_clips", *v);
    }
    if (auto v = take("synthetic_frames")) {
        run.synthetic_frames = parse_int("synthetic_frames", *v);
    }
    if (auto v = take("checkpoint_every")) {
        run.checkpoint_every = parse_int("checkpoint_every", *v);
    }
    return run;
}

std::string echo_text(const TrainConfig& config, const RunSettings* run) {
    std::string text = config_to_text(config);
    if (run != nullptr) {
        text += "\n# --- run settings ---\n";
        text += "\n# dataset root (empty when training on the synthetic corpus)\ndata_root = \"" + run->data_root + "\"\n";
        text += "\n# synthetic moving-blob clips (0 = use data_root)\nsynthetic_clips = " +
                std::to_string(run->synthetic_clips) + "\n";
        text += "\n# frames per synthetic clip\nsynthetic_frames = " + std::to_string(run->synthetic_frames) + "\n";
        text += "\n# checkpoint interval in steps (0 = final only)\ncheckpoint_every = " +
                std::to_string(run->checkpoint_every) + "\n";
    }
    return text;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write '" + path.string() + "'");
    }
    out << text;
}

void prepare_output(const fs::path& dir) {
    if (dir.empty()) {
        throw ValidationError("an output directory is required (--output)");
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) {
        throw ValidationError("cannot create output directory '" + dir.string() + "'");
    }
}

void require_file(const fs::path& path, const std::string& what) {
    if (!fs::is_regular_file(path)) {
        throw ValidationError(what + " '" + path.string() + "' does not exist");
    }
}

void require_dir(const fs::path& path, const std::string& what) {
    if (!fs::is_directory(path)) {
        throw ValidationError(what + " '" + path.string() + "' is not a directory");
    }
}

std::string frame_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%06zu.png", index);
    return buf;
}

std::vector<fs::path> list_frames(const fs::path& dir) {
    std::vector<fs::path> frames;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && is_decodable_image(entry.path())) {
            frames.push_back(entry.path());
        }
    }
    std::sort(frames.begin(), frames.end());
    return frames;
}

std::vector<Image> load_frames(const fs::path& dir) {
    std::vector<Image> out;
    for (const auto& f : list_frames(dir)) {
        out.push_back(load_image(f));
    }
    return out;
}

/// Adds the command-independent training flags to a subcommand.
void add_train_flags(CLI::App* cmd, TrainFlags& f) {
    cmd->add_option("--config", f.config_path, "flat key = value configuration file");
    cmd->add_option("--output", f.output, "output directory")->required();
    cmd->add_option("--seed", f.seed, "master seed");
    cmd->add_option("--size", f.size, "frame size (64, 128 or 256)");
    cmd->add_option("--steps", f.steps, "total training steps");
    cmd->add_option("--batch-size", f.batch_size, "pairs per step");
    cmd->add_option("--lambda-rgb", f.lambda_rgb, "RGB discriminator weight");
    cmd->add_option("--lambda-depth", f.lambda_depth, "depth discriminator weight");
    cmd->add_option("--lambda-normal", f.lambda_normal, "normal discriminator weight");
    cmd->add_option("--geometry-backend", f.geometry_backend, "baseline, oracle or external")
        ->check(CLI::IsMember({"baseline", "oracle", "external"}));
    cmd->add_option("--geometry-weights", f.geometry_weights, "TorchScript depth network (external backend)");
    cmd->add_option("--data", f.data_root, "dataset root: <root>/<clip_id>/<frames>");
    cmd->add_option("--synthetic-clips", f.synthetic_clips, "train on N generated moving-blob clips instead");
    cmd->add_option("--synthetic-frames", f.synthetic_frames, "frames per generated clip");
    cmd->add_option("--checkpoint-every", f.checkpoint_every, "write a checkpoint every N steps");
    cmd->add_option("--resume", f.resume, "continue from a checkpoint");
}

std::pair<TrainConfig, RunSettings> resolve_train(const TrainFlags& f) {
    TrainConfig config;
    RunSettings run;
    if (!f.config_path.empty()) {
        require_file(f.config_path, "config file");
        auto values = read_config_file(f.config_path);
        run = take_run_settings(values);
        apply_config(config, values);
    }
    if (f.seed) {
        config.seed = *f.seed;
    }
    if (f.size) {
        config.model.image_size = *f.size;
    }
    if (f.steps) {
        config.total_steps = *f.steps;
    }
    if (f.batch_size) {
        config.batch_size = *f.batch_size;
    }
    if (f.lambda_rgb) {
        config.set_lambda(gan::Modality::rgb, *f.lambda_rgb);
    }
    if (f.lambda_depth) {
        config.set_lambda(gan::Modality::depth, *f.lambda_depth);
    }
    if (f.lambda_normal) {
        config.set_lambda(gan::Modality::normal, *f.lambda_normal);
    }
    if (f.geometry_backend) {
        config.geometry_backend = *f.geometry_backend;
    }
    if (f.geometry_weights) {
        config.geometry_weights = *f.geometry_weights;
    }
    if (f.data_root) {
        run.data_root = *f.data_root;
    }
    if (f.synthetic_clips) {
        run.synthetic_clips = *f.synthetic_clips;
    }
    if (f.synthetic_frames) {
        run.synthetic_frames = *f.synthetic_frames;
    }
    if (f.checkpoint_every) {
        run.checkpoint_every = *f.checkpoint_every;
    }
    config.validate();
    if (config.geometry_backend == "external") {
        require_file(config.geometry_weights, "geometry weights (--geometry-weights)");
    }
    if (run.synthetic_clips < 0 || run.synthetic_frames < 2 || run.checkpoint_every < 0) {
        throw ValidationError("synthetic clips must be >= 0, synthetic frames >= 2, checkpoint interval >= 0");
    }
    if (run.synthetic_clips == 0) {
        if (run.data_root.empty()) {
            throw ValidationError("training needs --data <root> or --synthetic-clips N");
        }
        if (!fs::exists(run.data_root)) {
            throw ValidationError("dataset root '" + run.data_root + "' does not exist");
        }
    }
    return {config, run};
}

int cmd_scan(const std::string& root, const std::string& manifest_path, std::ostream& out) {
    if (!fs::exists(root)) {
        throw ValidationError("dataset root '" + root + "' does not exist");
    }
    auto manifest = dataio::scan_dataset(root);
    std::int64_t frames = 0;
    for (const auto& c : manifest.clips) {
        out << c.clip_id << "\t" << c.frame_count << "\n";
        frames += c.frame_count;
    }
    out << "clips: " << manifest.clips.size() << " frames: " << frames << "\n";
    if (!manifest_path.empty()) {
        dataio::write_manifest_json(manifest, manifest_path);
    }
    return kSuccess;
}

int cmd_train(const TrainFlags& flags, std::ostream& out, std::ostream& err) {
    auto [config, run] = resolve_train(flags);
    const fs::path output = flags.output;
    prepare_output(output);
    write_text(output / kEchoName, echo_text(config, &run));

    std::unique_ptr<PairSource> source;
    if (run.synthetic_clips > 0) {
        source = std::make_unique<CorpusPairSource>(
            synthetic::make_blob_corpus(static_cast<int>(run.synthetic_clips), static_cast<int>(run.synthetic_frames),
                                        config.model.image_size, config.seed),
            config.seed);
    } else {
        source = std::make_unique<DatasetPairSource>(dataio::scan_dataset(run.data_root), config.seed,
                                                     config.model.image_size);
    }

    TrainState state = [&] {
        if (!flags.resume.empty()) {
            require_file(flags.resume, "checkpoint");
            auto resumed = load_checkpoint(flags.resume);
            if (config_values(resumed.config) != config_values(config)) {
                err << "warning: resuming with a configuration that differs from the checkpoint's; using the "
                       "checkpoint's\n";
            }
            return resumed;
        }
        return make_train_state(config);
    }();

    std::ofstream log(output / "train_log.jsonl", flags.resume.empty() ? std::ios::trunc : std::ios::app);
    auto on_step = [&](const TrainState& s, const losses::LossReport& report) {
        log << report.to_json(s.step) << "\n";
        if (s.step % 50 == 0 || s.step == s.config.total_steps) {
            err << "step " << s.step << "/" << s.config.total_steps << " total=" << report.total
                << " perceptual=" << report.perceptual << " l1=" << report.reconstruction_l1
                << " D=" << report.discriminator << "\n";
        }
        if (run.checkpoint_every > 0 && s.step % run.checkpoint_every == 0) {
            char name[48];
            std::snprintf(name, sizeof(name), "checkpoint_%06lld.ckpt", static_cast<long long>(s.step));
            save_checkpoint(s, output / name);
        }
    };
    train(state, *source, config.total_steps, on_step);
    save_checkpoint(state, output / "final.ckpt");
    out << (output / "final.ckpt").string() << "\n";
    return kSuccess;
}

struct AnimateFlags {
    std::string checkpoint;
    std::string source;
    std::string driving;
    std::string output;
    std::string mode = "relative";
    bool dump_keypoints = false;
    bool dump_transmittance = false;
};

int cmd_animate(const AnimateFlags& f, std::ostream& out) {
    require_file(f.checkpoint, "checkpoint");
    require_file(f.source, "source image");
    require_dir(f.driving, "driving directory");
    const auto mode = parse_transfer_mode(f.mode);
    auto frames = list_frames(f.driving);
    if (frames.empty()) {
        throw ValidationError("empty driving sequence");
    }
    const fs::path output = f.output;
    prepare_output(output);

    auto state = load_checkpoint(f.checkpoint);
    const auto size = state.config.model.image_size;
    write_text(output / kEchoName, echo_text(state.config, nullptr) + "\n# --- animate ---\n# mode = " + f.mode + "\n");

    AnimationRequest request;
    request.source = dataio::load_frame(f.source, size);
    request.mode = mode;
    for (const auto& p : frames) {
        request.driving.push_back(dataio::load_frame(p, size));
    }
    auto result = animate(state.generator, request);
    for (std::size_t i = 0; i < result.frames.size(); ++i) {
        save_png(result.frames[i], output / frame_name(i));
    }
    if (f.dump_keypoints) {
        nlohmann::json doc = nlohmann::json::array();
        for (std::size_t i = 0; i < result.keypoints.size(); ++i) {
            const auto& kp = result.keypoints[i];
            auto pos = kp.positions[0].to(torch::kFloat64).contiguous();
            auto jac = kp.jacobians[0].to(torch::kFloat64).contiguous();
            nlohmann::json frame;
            frame["frame"] = i;
            frame["positions"] = std::vector<double>(pos.data_ptr<double>(), pos.data_ptr<double>() + pos.numel());
            frame["jacobians"] = std::vector<double>(jac.data_ptr<double>(), jac.data_ptr<double>() + jac.numel());
            doc.push_back(frame);
        }
        write_text(output / "keypoints.json", doc.dump(1));
    }
    if (f.dump_transmittance) {
        nlohmann::json doc = nlohmann::json::array();
        for (std::size_t i = 0; i < result.transmittance.size(); ++i) {
            auto tau = result.transmittance[i][0].to(torch::kFloat64);
            auto profile = tau.mean({1, 2}).contiguous();
            doc.push_back({{"frame", i},
                           {"mean_transmittance",
                            std::vector<double>(profile.data_ptr<double>(),
                                                profile.data_ptr<double>() + profile.numel())}});
            char name[48];
            std::snprintf(name, sizeof(name), "transmittance_%06zu.png", i);
            save_png16(tau[tau.size(0) - 1].clamp(0.0, 1.0).to(torch::kFloat32), output / name);
        }
        write_text(output / "transmittance.json", doc.dump(1));
    }
    out << "wrote " << result.frames.size() << " frames to " << output.string() << "\n";
    return kSuccess;
}

struct EvaluateFlags {
    std::string predicted;
    std::string ground_truth;
    std::string output;
    std::string landmarks = "centroid";
    std::string embedder = "pooled-stats";
};

int cmd_evaluate(const EvaluateFlags& f, std::ostream& out) {
    require_dir(f.predicted, "prediction directory");
    require_dir(f.ground_truth, "ground-truth directory");
    const fs::path output = f.output;
    prepare_output(output);
    write_text(output / kEchoName, "# reenact evaluate\npredicted = \"" + f.predicted + "\"\nground_truth = \"" +
                                       f.ground_truth + "\"\nlandmarks = \"" + f.landmarks + "\"\nembedder = \"" +
                                       f.embedder + "\"\n");
    auto predicted = load_frames(f.predicted);
    auto truth = load_frames(f.ground_truth);
    if (predicted.empty() || predicted.size() != truth.size()) {
        throw ValidationError("prediction and ground-truth directories must hold the same non-zero number of frames");
    }
    metrics::CentroidLandmarks landmarks;
    metrics::PooledStatsEmbedder embedder;
    metrics::EvaluationPlugins plugins;
    plugins.landmarks = f.landmarks == "centroid" ? &landmarks : nullptr;
    plugins.embedder = f.embedder == "pooled-stats" ? &embedder : nullptr;
    auto report = metrics::evaluate(predicted, truth, plugins);
    const auto json = report.to_json();
    write_text(output / "report.json", json + "\n");
    out << json << "\n";
    return kSuccess;
}

struct GeometryFlags {
    std::string image;
    std::string output;
    std::string backend = "baseline";
    std::string weights;
    double pixel_spacing = 1.0;
};

int cmd_geometry(const GeometryFlags& f, std::ostream& out) {
    require_file(f.image, "input image");
    if (f.backend == "external") {
        require_file(f.weights, "geometry weights (--geometry-weights)");
    }
    const fs::path output = f.output;
    prepare_output(output);
    write_text(output / kEchoName, "# reenact geometry\nimage = \"" + f.image + "\"\ngeometry_backend = \"" +
                                       f.backend + "\"\ngeometry_weights = \"" + f.weights + "\"\n");
    auto image = load_image(f.image);
    if (image.height() != image.width()) {
        image = dataio::preprocess(image, 64);
    }
    auto extractor = geometry::make_extractor(f.backend, image.height(), f.weights);
    torch::NoGradGuard no_grad;
    auto maps = geometry::extract_geometry(image.batched(), *extractor, f.pixel_spacing);
    auto depth = maps.depth[0][0].to(torch::kFloat64);
    const double lo = depth.min().item<double>();
    const double hi = depth.max().item<double>();
    auto normalized = hi > lo ? (depth - lo) / (hi - lo) : torch::zeros_like(depth);
    save_png16(normalized.to(torch::kFloat32), output / "depth.png");
    save_png(Image(((maps.normal[0] + 1.0) / 2.0).clamp(0.0, 1.0).to(torch::kFloat32).contiguous()),
             output / "normal.png");
    out << "depth range [" << lo << ", " << hi << "] written to " << output.string() << "\n";
    return kSuccess;
}

int cmd_render_test(unsigned long long seed, std::ostream& out) {
    auto r = render_self_test(seed);
    out << "render-test: " << r.instances << " instances, oracle max-error " << r.max_render_error
        << ", weight-budget max-error " << r.max_budget_error << " -> " << (r.passed ? "PASS" : "FAIL") << "\n";
    return r.passed ? kSuccess : kRuntime;
}

struct SynthFlags {
    std::string output;
    int clips = 10;
    int frames = 8;
    std::int64_t size = 64;
    std::uint64_t seed = 0;
};

int cmd_synth(const SynthFlags& f, std::ostream& out) {
    if (f.clips < 1 || f.frames < 2) {
        throw ValidationError("synth needs at least one clip of two frames");
    }
    const fs::path output = f.output;
    prepare_output(output);
    auto corpus = synthetic::make_blob_corpus(f.clips, f.frames, f.size, f.seed);
    synthetic::write_blob_corpus(corpus, output);
    out << "wrote " << f.clips << " clips of " << f.frames << " frames to " << output.string() << "\n";
    return kSuccess;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"reenact: one-shot face reenactment with a volumetric feature renderer"};
    app.name("reenact");
    app.require_subcommand(1);

    std::string scan_root;
    std::string scan_manifest;
    auto* scan = app.add_subcommand("scan", "list clips under a dataset root");
    scan->add_option("root", scan_root, "dataset root")->required();
    scan->add_option("--manifest", scan_manifest, "write the manifest cache as JSON");

    TrainFlags train_flags;
    auto* train_cmd = app.add_subcommand("train", "train generator and discriminator ensemble");
    add_train_flags(train_cmd, train_flags);

    AnimateFlags animate_flags;
    auto* animate_cmd = app.add_subcommand("animate", "animate a source image with a driving sequence");
    animate_cmd->add_option("--checkpoint", animate_flags.checkpoint, "trained checkpoint")->required();
    animate_cmd->add_option("--source", animate_flags.source, "source image")->required();
    animate_cmd->add_option("--driving", animate_flags.driving, "directory of driving frames")->required();
    animate_cmd->add_option("--output", animate_flags.output, "output directory")->required();
    animate_cmd->add_option("--mode", animate_flags.mode, "keypoint transfer: absolute or relative")
        ->check(CLI::IsMember({"absolute", "relative"}));
    animate_cmd->add_flag("--dump-keypoints", animate_flags.dump_keypoints, "write keypoints.json");
    animate_cmd->add_flag("--dump-transmittance", animate_flags.dump_transmittance,
                          "write per-frame transmittance maps and profiles");

    EvaluateFlags evaluate_flags;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "compare predicted frames with ground truth");
    evaluate_cmd->add_option("--pred", evaluate_flags.predicted, "directory of predicted frames")->required();
    evaluate_cmd->add_option("--gt", evaluate_flags.ground_truth, "directory of ground-truth frames")->required();
    evaluate_cmd->add_option("--output", evaluate_flags.output, "output directory")->required();
    evaluate_cmd->add_option("--landmarks", evaluate_flags.landmarks, "landmark plugin for AKD: centroid or none")
        ->check(CLI::IsMember({"centroid", "none"}));
    evaluate_cmd->add_option("--embedder", evaluate_flags.embedder, "embedder for FID: pooled-stats or none")
        ->check(CLI::IsMember({"pooled-stats", "none"}));

    GeometryFlags geometry_flags;
    auto* geometry_cmd = app.add_subcommand("geometry", "write depth and normal maps for one image");
    geometry_cmd->add_option("--image", geometry_flags.image, "input image")->required();
    geometry_cmd->add_option("--output", geometry_flags.output, "output directory")->required();
    geometry_cmd->add_option("--geometry-backend", geometry_flags.backend, "baseline, oracle or external")
        ->check(CLI::IsMember({"baseline", "oracle", "external"}));
    geometry_cmd->add_option("--geometry-weights", geometry_flags.weights, "TorchScript depth network");
    geometry_cmd->add_option("--pixel-spacing", geometry_flags.pixel_spacing, "pixel pitch for derivatives");

    unsigned long long render_seed = 0;
    auto* render_cmd = app.add_subcommand("render-test", "check the volume renderer against a per-sample loop");
    render_cmd->add_option("--seed", render_seed, "instance seed");

    SynthFlags synth_flags;
    auto* synth_cmd = app.add_subcommand("synth", "write a synthetic moving-blob corpus");
    synth_cmd->add_option("--output", synth_flags.output, "corpus root")->required();
    synth_cmd->add_option("--clips", synth_flags.clips, "number of clips");
    synth_cmd->add_option("--frames", synth_flags.frames, "frames per clip");
    synth_cmd->add_option("--size", synth_flags.size, "frame size");
    synth_cmd->add_option("--seed", synth_flags.seed, "corpus seed");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kSuccess;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kSuccess;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    }

    try {
        if (scan->parsed()) {
            return cmd_scan(scan_root, scan_manifest, out);
        }
        if (train_cmd->parsed()) {
            return cmd_train(train_flags, out, err);
        }
        if (animate_cmd->parsed()) {
            return cmd_animate(animate_flags, out);
        }
        if (evaluate_cmd->parsed()) {
            return cmd_evaluate(evaluate_flags, out);
        }
        if (geometry_cmd->parsed()) {
            return cmd_geometry(geometry_flags, out);
        }
        if (render_cmd->parsed()) {
            return cmd_render_test(render_seed, out);
        }
        if (synth_cmd->parsed()) {
            return cmd_synth(synth_flags, out);
        }
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const c10::Error& e) {
        err << "error: " << e.what_without_backtrace() << "\n";
        return kRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kRuntime;
    }
    err << "error: no command given\n";
    return kValidation;
}

} // namespace reenact::cli
