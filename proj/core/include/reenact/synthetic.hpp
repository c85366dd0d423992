// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "reenact/dataio.hpp"
#include "reenact/image.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace reenact::synthetic {

/// Two soft disks over a flat background: a large "head" disk and a small satellite,
/// both translating linearly over the clip.
struct BlobClip {
    float background[3] = {0.1f, 0.1f, 0.1f};
    float head_color[3] = {0.8f, 0.6f, 0.5f};
    float spot_color[3] = {0.2f, 0.3f, 0.9f};
    float head_start[2] = {0.0f, 0.0f};
    float head_velocity[2] = {0.0f, 0.0f};
    float head_radius = 0.45f;
    float spot_offset[2] = {0.2f, -0.15f};
    float spot_velocity[2] = {0.0f, 0.0f};
    float spot_radius = 0.12f;
};

/// Renders the clip at time t in [0, 1] on a size×size grid.
Image render_blob_frame(const BlobClip& clip, double t, std::int64_t size);

struct BlobCorpus {
    std::vector<BlobClip> scenes;
    std::vector<std::vector<Image>> frames;

    /// Manifest view (no files) so the regular pair sampler can drive it.
    dataio::DatasetManifest manifest() const;
};

BlobCorpus make_blob_corpus(int clip_count, int frames_per_clip, std::int64_t size, std::uint64_t seed);

/// Writes `root/clip_%03d/frame_%06d.png`.
void write_blob_corpus(const BlobCorpus& corpus, const std::filesystem::path& root);

} // namespace reenact::synthetic
