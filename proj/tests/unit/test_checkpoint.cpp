// SPDX-License-Identifier: Apache-2.0
#include "fixtures.hpp"
#include "oracles.hpp"
#include "reenact/checkpoint.hpp"
#include "reenact/errors.hpp"
#include "reenact/synthetic.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <fstream>
#include <iterator>

using namespace reenact;

namespace {

std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary);
    out << bytes;
}

TrainState trained_state(std::int64_t steps) {
    auto corpus = synthetic::make_blob_corpus(2, 3, 32, 4);
    CorpusPairSource source(std::move(corpus), 4);
    auto state = make_train_state(support::tiny_config());
    train(state, source, steps);
    return state;
}

} // namespace

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
    support::TempDir dir("ckpt");
    auto state = trained_state(2);
    save_checkpoint(state, dir.path() / "a.ckpt");
    auto loaded = load_checkpoint(dir.path() / "a.ckpt");
    EXPECT_EQ(loaded.step, 2);
    save_checkpoint(loaded, dir.path() / "b.ckpt");
    EXPECT_TRUE(support::files_identical(dir.path() / "a.ckpt", dir.path() / "b.ckpt"));
    EXPECT_FALSE(std::filesystem::exists(dir.path() / "a.ckpt.tmp"));
}

TEST(Checkpoint, ResumedTrainingMatchesUninterruptedRun) {
    support::TempDir dir("resume");
    auto corpus = synthetic::make_blob_corpus(2, 3, 32, 4);
    CorpusPairSource source(corpus, 4);
    auto straight = make_train_state(support::tiny_config());
    train(straight, source, 3);

    auto first = make_train_state(support::tiny_config());
    train(first, source, 1);
    save_checkpoint(first, dir.path() / "mid.ckpt");
    auto resumed = load_checkpoint(dir.path() / "mid.ckpt");
    train(resumed, source, 3);

    save_checkpoint(straight, dir.path() / "straight.ckpt");
    save_checkpoint(resumed, dir.path() / "resumed.ckpt");
    EXPECT_TRUE(support::files_identical(dir.path() / "straight.ckpt", dir.path() / "resumed.ckpt"));
}

TEST(Checkpoint, ManifestDescribesEveryTensor) {
    support::TempDir dir("manifest");
    auto state = trained_state(1);
    save_checkpoint(state, dir.path() / "m.ckpt");
    auto manifest = nlohmann::json::parse(read_checkpoint_manifest(dir.path() / "m.ckpt"));
    EXPECT_EQ(manifest.at("format_version").get<int>(), kCheckpointFormatVersion);
    EXPECT_EQ(manifest.at("step").get<int>(), 1);
    EXPECT_EQ(manifest.at("config").at("image_size").get<std::string>(), "32");

    std::int64_t expected_total = 0;
    for (const auto& [name, count] : parameter_counts(state)) {
        EXPECT_EQ(manifest.at("parameter_counts").at(name).get<std::int64_t>(), count) << name;
        expected_total += count;
    }
    EXPECT_EQ(manifest.at("parameter_total").get<std::int64_t>(), expected_total);
    EXPECT_TRUE(manifest.at("parameter_counts").contains("generator.keypoint_detector"));
    EXPECT_TRUE(manifest.at("parameter_counts").contains("ensemble.rgb"));

    std::int64_t offset = 0;
    bool has_moments = false;
    for (const auto& e : manifest.at("entries")) {
        EXPECT_EQ(e.at("byte_offset").get<std::int64_t>(), offset);
        EXPECT_EQ(e.at("dtype").get<std::string>(), "f32");
        offset += e.at("byte_length").get<std::int64_t>();
        has_moments |= e.at("name").get<std::string>().ends_with(".exp_avg_sq");
    }
    EXPECT_TRUE(has_moments);
    EXPECT_EQ(manifest.at("blob_bytes").get<std::int64_t>(), offset);
}

TEST(Checkpoint, CorruptionIsDetected) {
    support::TempDir dir("corrupt");
    auto state = make_train_state(support::tiny_config());
    const auto path = dir.path() / "c.ckpt";
    save_checkpoint(state, path);
    const auto bytes = read_bytes(path);

    auto flipped = bytes;
    flipped[flipped.size() - 3] ^= 0x40;
    write_bytes(dir.path() / "flip.ckpt", flipped);
    EXPECT_THROW(load_checkpoint(dir.path() / "flip.ckpt"), CheckpointError);

    write_bytes(dir.path() / "trunc.ckpt", bytes.substr(0, bytes.size() - 100));
    EXPECT_THROW(load_checkpoint(dir.path() / "trunc.ckpt"), CheckpointError);

    auto magic = bytes;
    magic[0] = 'X';
    write_bytes(dir.path() / "magic.ckpt", magic);
    EXPECT_THROW(load_checkpoint(dir.path() / "magic.ckpt"), CheckpointError);

    EXPECT_THROW(load_checkpoint(dir.path() / "absent.ckpt"), Error);
}

TEST(Checkpoint, VersionMismatchIsRejected) {
    support::TempDir dir("version");
    auto state = make_train_state(support::tiny_config());
    const auto path = dir.path() / "v.ckpt";
    save_checkpoint(state, path);
    auto bytes = read_bytes(path);
    const std::string needle = "\"format_version\": 1";
    auto pos = bytes.find(needle);
    ASSERT_NE(pos, std::string::npos);
    bytes[pos + needle.size() - 1] = '9';
    write_bytes(path, bytes);
    try {
        load_checkpoint(path);
        FAIL() << "expected CheckpointError";
    } catch (const CheckpointError& e) {
        EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
    }
}

TEST(Checkpoint, RefusesToSaveWithTamperedGeometry) {
    support::TempDir dir("tamper");
    auto state = make_train_state(support::tiny_config());
    {
        torch::NoGradGuard no_grad;
        state.geometry->parameters().front().mul_(2.0);
    }
    EXPECT_THROW(save_checkpoint(state, dir.path() / "t.ckpt"), Error);
}
