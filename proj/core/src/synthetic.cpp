// SPDX-License-Identifier: Apache-2.0
#include "reenact/synthetic.hpp"

#include "reenact/errors.hpp"
#include "reenact/seeding.hpp"

#include <torch/torch.h>

#include <cstdio>
#include <random>

namespace reenact::synthetic {

namespace {

constexpr float kEdgeSoftness = 0.04f;

torch::Tensor soft_disk(const torch::Tensor& xs, const torch::Tensor& ys, float cx, float cy, float radius) {
    auto dist = ((xs - cx).square() + (ys - cy).square()).sqrt();
    return torch::sigmoid((radius - dist) / kEdgeSoftness);
}

} // namespace

Image render_blob_frame(const BlobClip& clip, double t, std::int64_t size) {
    if (size < 2) {
        throw ValidationError("blob frame size must be at least 2");
    }
    auto axis = torch::linspace(-1.0, 1.0, size);
    auto grids = torch::meshgrid({axis, axis}, "ij");
    const auto& ys = grids[0];
    const auto& xs = grids[1];

    const float tf = static_cast<float>(t);
    const float hx = clip.head_start[0] + tf * clip.head_velocity[0];
    const float hy = clip.head_start[1] + tf * clip.head_velocity[1];
    const float sx = hx + clip.spot_offset[0] + tf * clip.spot_velocity[0];
    const float sy = hy + clip.spot_offset[1] + tf * clip.spot_velocity[1];

    auto head = soft_disk(xs, ys, hx, hy, clip.head_radius);
    auto spot = soft_disk(xs, ys, sx, sy, clip.spot_radius) * head;

    std::vector<torch::Tensor> channels;
    for (int c = 0; c < 3; ++c) {
        auto value = clip.background[c] * (1 - head) + clip.head_color[c] * head;
        value = value * (1 - spot) + clip.spot_color[c] * spot;
        channels.push_back(value);
    }
    return Image(torch::stack(channels).clamp(0.0, 1.0));
}

dataio::DatasetManifest BlobCorpus::manifest() const {
    dataio::DatasetManifest manifest;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        dataio::ClipRecord record;
        char name[32];
        std::snprintf(name, sizeof(name), "clip_%03zu", i);
        record.clip_id = name;
        record.frame_count = static_cast<std::int64_t>(frames[i].size());
        manifest.clips.push_back(std::move(record));
    }
    return manifest;
}

BlobCorpus make_blob_corpus(int clip_count, int frames_per_clip, std::int64_t size, std::uint64_t seed) {
    if (clip_count < 1 || frames_per_clip < 2) {
        throw ValidationError("blob corpus needs at least one clip of two frames");
    }
    std::mt19937_64 rng(derive_seed(seed, "blob-corpus"));
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    auto between = [&](float lo, float hi) { return lo + (hi - lo) * unit(rng); };

    BlobCorpus corpus;
    for (int i = 0; i < clip_count; ++i) {
        BlobClip clip;
        const float bg = between(0.02f, 0.2f);
        for (int c = 0; c < 3; ++c) {
            clip.background[c] = bg;
            clip.head_color[c] = between(0.45f, 0.95f);
            clip.spot_color[c] = between(0.0f, 0.4f);
        }
        clip.head_radius = between(0.35f, 0.5f);
        clip.spot_radius = between(0.08f, 0.15f);
        for (int a = 0; a < 2; ++a) {
            clip.head_start[a] = between(-0.15f, 0.15f);
            clip.head_velocity[a] = between(-0.25f, 0.25f);
            clip.spot_offset[a] = between(-0.2f, 0.2f);
            clip.spot_velocity[a] = between(-0.15f, 0.15f);
        }
        std::vector<Image> frames;
        for (int f = 0; f < frames_per_clip; ++f) {
            frames.push_back(render_blob_frame(clip, static_cast<double>(f) / (frames_per_clip - 1), size));
        }
        corpus.scenes.push_back(clip);
        corpus.frames.push_back(std::move(frames));
    }
    return corpus;
}

void write_blob_corpus(const BlobCorpus& corpus, const std::filesystem::path& root) {
    for (std::size_t i = 0; i < corpus.frames.size(); ++i) {
        char clip_name[32];
        std::snprintf(clip_name, sizeof(clip_name), "clip_%03zu", i);
        for (std::size_t f = 0; f < corpus.frames[i].size(); ++f) {
            char frame_name[32];
            std::snprintf(frame_name, sizeof(frame_name), "frame_%06zu.png", f);
            save_png(corpus.frames[i][f], root / clip_name / frame_name);
        }
    }
}

} // namespace reenact::synthetic
