// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "reenact/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace reenact {

inline constexpr std::int64_t kCheckpointFormatVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'R', 'E', 'N', 'A', 'C', 'T', 'C', 'K'};

/// Layout: 8-byte magic | u64 LE manifest length | manifest JSON | raw LE float32 blobs.
/// The manifest holds {format_version, step, config echo, parameter_counts, entries:
/// [{name, dtype, shape, byte_offset, byte_length, crc32}], optimizer_steps}. Offsets are
/// relative to the first blob byte. Output is a pure function of the state.
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);

/// Rebuilds the state from the config echo and restores every tensor and Adam moment.
/// Throws CheckpointError on bad magic, version mismatch, truncation or CRC failure.
TrainState load_checkpoint(const std::filesystem::path& path);

/// Trainable parameter counts keyed by "generator.<sub-network>" / "ensemble.<member>".
std::map<std::string, std::int64_t> parameter_counts(const TrainState& state);

/// Parsed manifest of a checkpoint file (pretty JSON) without loading tensors.
std::string read_checkpoint_manifest(const std::filesystem::path& path);

} // namespace reenact
