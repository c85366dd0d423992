// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "reenact/image.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <vector>

namespace reenact::dataio {

struct ClipRecord {
    std::string clip_id;
    std::filesystem::path frame_dir;
    std::int64_t frame_count = 0;
    /// Frame files in temporal (lexicographic) order.
    std::vector<std::filesystem::path> frames;
};

struct DatasetManifest {
    std::filesystem::path root;
    std::vector<ClipRecord> clips;

    bool empty() const noexcept { return clips.empty(); }
};

/// Indices of one sampled pair; cheap to compute and independent of any I/O.
struct PairIndex {
    std::size_t clip = 0;
    std::int64_t source_index = 0;
    std::int64_t driving_index = 0;

    friend bool operator==(const PairIndex&, const PairIndex&) = default;
};

struct FramePair {
    Image source;
    Image driving;
    std::string clip_id;
    std::int64_t source_index = 0;
    std::int64_t driving_index = 0;
};

/// Lists `root/<clip_id>/<frames>`. Clips with fewer than two decodable frames are
/// skipped with a warning. Throws IoError when root is missing and ValidationError
/// ("no clips found") when nothing usable remains.
DatasetManifest scan_dataset(const std::filesystem::path& root);

/// Pure function of (manifest shape, seed, step): uniform clip, then two distinct
/// uniform frame indices.
PairIndex sample_pair_index(const DatasetManifest& manifest, std::uint64_t seed, std::uint64_t step);

/// sample_pair_index followed by decode + preprocess of both frames.
FramePair sample_pair(const DatasetManifest& manifest, std::uint64_t seed, std::uint64_t step,
                      std::int64_t target_size = 64);

/// Center-crops to a square and bilinearly resizes to target_size (64, 128 or 256).
/// Square inputs already at target size are returned unchanged.
Image preprocess(const Image& raw, std::int64_t target_size);

/// Loads and preprocesses a frame.
Image load_frame(const std::filesystem::path& path, std::int64_t target_size);

/// Manifest cache: {"root", "clips": [{clip_id, frame_count, path}]} with paths relative to root.
void write_manifest_json(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest_json(const std::filesystem::path& path);

/// Thread-safe memo of preprocessed frames keyed by path.
class FrameCache {
public:
    explicit FrameCache(std::int64_t target_size) : target_size_(target_size) {}
    Image get(const std::filesystem::path& path);
    std::int64_t target_size() const noexcept { return target_size_; }

private:
    std::int64_t target_size_;
    std::mutex mutex_;
    std::map<std::filesystem::path, Image> frames_;
};

} // namespace reenact::dataio
