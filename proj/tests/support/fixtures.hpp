// SPDX-License-Identifier: Apache-2.0
// Small configurations that keep network-level tests fast on one CPU core.
#pragma once

#include "reenact/config.hpp"

namespace reenact::support {

inline TrainConfig tiny_config(std::uint64_t seed = 3) {
    TrainConfig c;
    c.seed = seed;
    c.model.image_size = 32;
    c.model.keypoints = 4;
    c.model.feature_channels = 8;
    c.model.depth_samples = 4;
    c.model.color_channels = 4;
    c.model.ray_hidden = 8;
    c.model.block_expansion = 8;
    c.model.hourglass_blocks = 2;
    c.model.max_features = 32;
    c.batch_size = 2;
    c.total_steps = 4;
    c.discriminator_channels = 8;
    return c;
}

} // namespace reenact::support
