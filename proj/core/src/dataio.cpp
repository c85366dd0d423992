// SPDX-License-Identifier: Apache-2.0
#include "reenact/dataio.hpp"

#include "reenact/errors.hpp"
#include "reenact/seeding.hpp"

#include <nlohmann/json.hpp>
#include <c10/util/Exception.h>
#include <torch/torch.h>

#include <algorithm>
#include <fstream>
#include <random>

namespace reenact::dataio {

namespace fs = std::filesystem;

namespace {

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

bool valid_target(std::int64_t size) { return size == 64 || size == 128 || size == 256; }

} // namespace

DatasetManifest scan_dataset(const fs::path& root) {
    if (!fs::is_directory(root)) {
        throw IoError("dataset root does not exist: " + root.string());
    }
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) {
            dirs.push_back(entry.path());
        }
    }
    std::sort(dirs.begin(), dirs.end());

    DatasetManifest manifest;
    manifest.root = root;
    for (const auto& dir : dirs) {
        auto frames = list_frames(dir);
        if (frames.size() < 2) {
            TORCH_WARN("skipping clip '", dir.filename().string(), "': ", frames.size(),
                       " decodable frame(s), need at least 2");
            continue;
        }
        ClipRecord record;
        record.clip_id = dir.filename().string();
        record.frame_dir = dir;
        record.frame_count = static_cast<std::int64_t>(frames.size());
        record.frames = std::move(frames);
        manifest.clips.push_back(std::move(record));
    }
    if (manifest.clips.empty()) {
        throw ValidationError("no clips found under " + root.string());
    }
    return manifest;
}

PairIndex sample_pair_index(const DatasetManifest& manifest, std::uint64_t seed, std::uint64_t step) {
    if (manifest.empty()) {
        throw ValidationError("cannot sample from an empty manifest");
    }
    std::mt19937_64 rng(derive_seed(seed, step));
    PairIndex pair;
    pair.clip = std::uniform_int_distribution<std::size_t>(0, manifest.clips.size() - 1)(rng);
    const auto count = manifest.clips[pair.clip].frame_count;
    if (count < 2) {
        throw ValidationError("clip '" + manifest.clips[pair.clip].clip_id + "' has fewer than 2 frames");
    }
    pair.source_index = std::uniform_int_distribution<std::int64_t>(0, count - 1)(rng);
    // Draw from the remaining count-1 frames so the pair is always distinct.
    pair.driving_index = std::uniform_int_distribution<std::int64_t>(0, count - 2)(rng);
    if (pair.driving_index >= pair.source_index) {
        ++pair.driving_index;
    }
    return pair;
}

FramePair sample_pair(const DatasetManifest& manifest, std::uint64_t seed, std::uint64_t step,
                      std::int64_t target_size) {
    const auto index = sample_pair_index(manifest, seed, step);
    const auto& clip = manifest.clips[index.clip];
    FramePair pair;
    pair.clip_id = clip.clip_id;
    pair.source_index = index.source_index;
    pair.driving_index = index.driving_index;
    pair.source = load_frame(clip.frames.at(static_cast<std::size_t>(index.source_index)), target_size);
    pair.driving = load_frame(clip.frames.at(static_cast<std::size_t>(index.driving_index)), target_size);
    return pair;
}

Image preprocess(const Image& raw, std::int64_t target_size) {
    if (!valid_target(target_size)) {
        throw ValidationError("target size must be one of 64, 128, 256; got " + std::to_string(target_size));
    }
    if (raw.empty()) {
        throw ValidationError("cannot preprocess an empty image");
    }
    const auto height = raw.height();
    const auto width = raw.width();
    if (height == width && height == target_size) {
        return raw;
    }
    const auto side = std::min(height, width);
    const auto top = (height - side) / 2;
    const auto left = (width - side) / 2;
    auto crop = raw.tensor().slice(1, top, top + side).slice(2, left, left + side);
    if (side == target_size) {
        return Image(crop.contiguous());
    }
    namespace F = torch::nn::functional;
    auto resized = F::interpolate(crop.unsqueeze(0),
                                  F::InterpolateFuncOptions()
                                      .size(std::vector<std::int64_t>{target_size, target_size})
                                      .mode(torch::kBilinear)
                                      .align_corners(false));
    return Image(resized.squeeze(0).clamp(0.0, 1.0));
}

Image load_frame(const fs::path& path, std::int64_t target_size) {
    return preprocess(load_image(path), target_size);
}

void write_manifest_json(const DatasetManifest& manifest, const fs::path& path) {
    nlohmann::json doc;
    doc["root"] = manifest.root.string();
    doc["clips"] = nlohmann::json::array();
    for (const auto& clip : manifest.clips) {
        doc["clips"].push_back({{"clip_id", clip.clip_id},
                                {"frame_count", clip.frame_count},
                                {"path", fs::relative(clip.frame_dir, manifest.root).generic_string()}});
    }
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write manifest " + path.string());
    }
    out << doc.dump(2) << '\n';
}

DatasetManifest read_manifest_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read manifest " + path.string());
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed manifest " + path.string() + ": " + e.what());
    }
    DatasetManifest manifest;
    manifest.root = doc.at("root").get<std::string>();
    for (const auto& item : doc.at("clips")) {
        ClipRecord record;
        record.clip_id = item.at("clip_id").get<std::string>();
        record.frame_dir = manifest.root / item.at("path").get<std::string>();
        record.frame_count = item.at("frame_count").get<std::int64_t>();
        record.frames = list_frames(record.frame_dir);
        if (static_cast<std::int64_t>(record.frames.size()) != record.frame_count) {
            throw ValidationError("manifest is stale for clip '" + record.clip_id + "'");
        }
        manifest.clips.push_back(std::move(record));
    }
    return manifest;
}

Image FrameCache::get(const fs::path& path) {
    {
        std::lock_guard lock(mutex_);
        if (auto it = frames_.find(path); it != frames_.end()) {
            return it->second;
        }
    }
    auto frame = load_frame(path, target_size_);
    std::lock_guard lock(mutex_);
    return frames_.emplace(path, std::move(frame)).first->second;
}

} // namespace reenact::dataio
