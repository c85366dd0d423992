// SPDX-License-Identifier: Apache-2.0
#include "reenact/checkpoint.hpp"

#include "reenact/errors.hpp"

#include <nlohmann/json.hpp>
#include <torch/torch.h>
#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are written in native little-endian order");

namespace reenact {

namespace {

using json = nlohmann::json;

struct Entry {
    std::string name;
    torch::Tensor tensor;
};

std::uint32_t crc_of(const char* data, std::size_t size) {
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(size));
    return static_cast<std::uint32_t>(crc);
}

void add_module(std::vector<Entry>& out, const std::string& prefix, const torch::nn::Module& module) {
    for (const auto& item : module.named_parameters()) {
        out.push_back({prefix + "." + item.key(), item.value()});
    }
    for (const auto& item : module.named_buffers()) {
        out.push_back({prefix + "." + item.key(), item.value()});
    }
}

torch::optim::AdamParamState* adam_state(torch::optim::Adam& opt, const torch::Tensor& param) {
    auto& states = opt.state();
    auto it = states.find(param.unsafeGetTensorImpl());
    if (it == states.end()) {
        return nullptr;
    }
    return static_cast<torch::optim::AdamParamState*>(it->second.get());
}

struct OptimizerView {
    std::string prefix;
    torch::optim::Adam* optimizer;
    const torch::nn::Module* module;
};

std::vector<OptimizerView> optimizers(const TrainState& state) {
    return {{"optim.generator", state.generator_optimizer.get(), state.generator.get()},
            {"optim.ensemble", state.discriminator_optimizer.get(), state.ensemble.get()}};
}

// Module tensors followed by Adam moments; fills `steps` with per-parameter Adam steps.
std::vector<Entry> collect(const TrainState& state, std::map<std::string, std::int64_t>& steps) {
    std::vector<Entry> entries;
    add_module(entries, "generator", *state.generator);
    add_module(entries, "ensemble", *state.ensemble);
    for (const auto& view : optimizers(state)) {
        for (const auto& item : view.module->named_parameters()) {
            auto* s = adam_state(*view.optimizer, item.value());
            if (s == nullptr) {
                continue;
            }
            const auto base = view.prefix + "." + item.key();
            steps[base] = s->step();
            entries.push_back({base + ".exp_avg", s->exp_avg()});
            entries.push_back({base + ".exp_avg_sq", s->exp_avg_sq()});
        }
    }
    return entries;
}

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
    throw CheckpointError("checkpoint '" + path.string() + "': " + what);
}

struct RawCheckpoint {
    json manifest;
    std::string blobs;
};

RawCheckpoint read_raw(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open checkpoint '" + path.string() + "'");
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
        fail(path, "not a checkpoint file (bad magic)");
    }
    std::uint64_t length = 0;
    std::memcpy(&length, bytes.data() + 8, 8);
    if (length > bytes.size() - 16) {
        fail(path, "truncated manifest");
    }
    RawCheckpoint raw;
    try {
        raw.manifest = json::parse(bytes.substr(16, length));
    } catch (const json::exception& e) {
        fail(path, std::string("corrupt manifest: ") + e.what());
    }
    raw.blobs = bytes.substr(16 + length);
    return raw;
}

} // namespace

std::map<std::string, std::int64_t> parameter_counts(const TrainState& state) {
    std::map<std::string, std::int64_t> counts;
    for (const auto& child : state.generator->named_children()) {
        std::int64_t n = 0;
        for (const auto& p : child.value()->parameters()) {
            n += p.numel();
        }
        counts["generator." + child.key()] = n;
    }
    for (const auto& child : state.ensemble->named_children()) {
        std::int64_t n = 0;
        for (const auto& p : child.value()->parameters()) {
            n += p.numel();
        }
        counts["ensemble." + child.key()] = n;
    }
    return counts;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
    check_frozen(state);
    std::map<std::string, std::int64_t> steps;
    const auto entries = collect(state, steps);

    json manifest;
    manifest["format_version"] = kCheckpointFormatVersion;
    manifest["step"] = state.step;
    manifest["config"] = config_values(state.config);
    manifest["geometry_backend"] = state.geometry->id();
    manifest["geometry_crc32"] = state.geometry_fingerprint;
    manifest["parameter_counts"] = parameter_counts(state);
    std::int64_t total = 0;
    for (const auto& [_, n] : manifest["parameter_counts"].get<std::map<std::string, std::int64_t>>()) {
        total += n;
    }
    manifest["parameter_total"] = total;
    manifest["optimizer_steps"] = steps;

    std::string blobs;
    json list = json::array();
    for (const auto& e : entries) {
        auto t = e.tensor.detach().to(torch::kFloat32).contiguous().cpu();
        const auto* data = static_cast<const char*>(t.data_ptr());
        const auto size = static_cast<std::size_t>(t.nbytes());
        list.push_back({{"name", e.name},
                        {"dtype", "f32"},
                        {"shape", t.sizes().vec()},
                        {"byte_offset", blobs.size()},
                        {"byte_length", size},
                        {"crc32", crc_of(data, size)}});
        blobs.append(data, size);
    }
    manifest["entries"] = std::move(list);
    manifest["blob_bytes"] = blobs.size();

    const auto text = manifest.dump(1);
    const std::uint64_t length = text.size();
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot write checkpoint '" + path.string() + "'");
        }
        out.write(kCheckpointMagic, 8);
        out.write(reinterpret_cast<const char*>(&length), 8);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        out.write(blobs.data(), static_cast<std::streamsize>(blobs.size()));
        if (!out) {
            throw IoError("short write to checkpoint '" + path.string() + "'");
        }
    }
    std::filesystem::rename(tmp, path);
}

std::string read_checkpoint_manifest(const std::filesystem::path& path) { return read_raw(path).manifest.dump(2); }

TrainState load_checkpoint(const std::filesystem::path& path) {
    auto raw = read_raw(path);
    const auto& m = raw.manifest;
    try {
        if (m.at("format_version").get<std::int64_t>() != kCheckpointFormatVersion) {
            fail(path, "format version " + m.at("format_version").dump() + " is not supported (expected " +
                           std::to_string(kCheckpointFormatVersion) + ")");
        }
        if (m.at("blob_bytes").get<std::size_t>() != raw.blobs.size()) {
            fail(path, "truncated or padded blob region (" + std::to_string(raw.blobs.size()) + " of " +
                           m.at("blob_bytes").dump() + " bytes)");
        }

        TrainConfig config;
        ConfigValues values;
        for (const auto& [k, v] : m.at("config").items()) {
            values[k] = v.get<std::string>();
        }
        apply_config(config, values);
        auto state = make_train_state(config);
        if (m.contains("geometry_crc32") && m.at("geometry_crc32").get<std::uint32_t>() != state.geometry_fingerprint) {
            fail(path, "geometry backend differs from the one used for training");
        }

        std::map<std::string, std::int64_t> steps;
        for (const auto& [k, v] : m.at("optimizer_steps").items()) {
            steps[k] = v.get<std::int64_t>();
        }

        std::map<std::string, const json*> by_name;
        for (const auto& e : m.at("entries")) {
            by_name[e.at("name").get<std::string>()] = &e;
        }
        auto read_entry = [&](const std::string& name, c10::IntArrayRef expected) {
            auto it = by_name.find(name);
            if (it == by_name.end()) {
                fail(path, "missing entry '" + name + "'");
            }
            const auto& e = *it->second;
            const auto offset = e.at("byte_offset").get<std::size_t>();
            const auto length = e.at("byte_length").get<std::size_t>();
            const auto shape = e.at("shape").get<std::vector<std::int64_t>>();
            if (e.at("dtype").get<std::string>() != "f32") {
                fail(path, "entry '" + name + "' has unsupported dtype");
            }
            if (offset > raw.blobs.size() || length > raw.blobs.size() - offset) {
                fail(path, "entry '" + name + "' lies outside the blob region (truncated file)");
            }
            if (crc_of(raw.blobs.data() + offset, length) != e.at("crc32").get<std::uint32_t>()) {
                fail(path, "checksum mismatch in entry '" + name + "'");
            }
            if (c10::IntArrayRef(shape) != expected ||
                static_cast<std::size_t>(c10::multiply_integers(shape)) * sizeof(float) != length) {
                fail(path, "entry '" + name + "' has an unexpected shape");
            }
            auto t = torch::empty(shape, torch::kFloat32);
            std::memcpy(t.data_ptr(), raw.blobs.data() + offset, length);
            by_name.erase(it);
            return t;
        };

        torch::NoGradGuard no_grad;
        std::map<std::string, std::int64_t> unused;
        std::vector<Entry> targets;
        add_module(targets, "generator", *state.generator);
        add_module(targets, "ensemble", *state.ensemble);
        for (auto& target : targets) {
            target.tensor.copy_(read_entry(target.name, target.tensor.sizes()));
        }
        for (const auto& view : optimizers(state)) {
            for (const auto& item : view.module->named_parameters()) {
                const auto base = view.prefix + "." + item.key();
                auto s = steps.find(base);
                if (s == steps.end()) {
                    continue;
                }
                auto param_state = std::make_unique<torch::optim::AdamParamState>();
                param_state->step(s->second);
                param_state->exp_avg(read_entry(base + ".exp_avg", item.value().sizes()));
                param_state->exp_avg_sq(read_entry(base + ".exp_avg_sq", item.value().sizes()));
                view.optimizer->state()[item.value().unsafeGetTensorImpl()] = std::move(param_state);
            }
        }
        if (!by_name.empty()) {
            fail(path, "unexpected entry '" + by_name.begin()->first + "'");
        }
        state.step = m.at("step").get<std::int64_t>();
        return state;
    } catch (const json::exception& e) {
        fail(path, std::string("malformed manifest: ") + e.what());
    }
}

} // namespace reenact
