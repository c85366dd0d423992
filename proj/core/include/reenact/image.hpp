// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <torch/types.h>

#include <filesystem>

namespace reenact {

/// RGB image stored channel-first as a float32 tensor [3, H, W] with values in [0, 1].
class Image {
public:
    Image() = default;
    /// Validates layout and range; throws ValidationError otherwise.
    explicit Image(torch::Tensor pixels);

    const torch::Tensor& tensor() const noexcept { return pixels_; }
    std::int64_t height() const { return pixels_.size(1); }
    std::int64_t width() const { return pixels_.size(2); }
    bool empty() const noexcept { return !pixels_.defined(); }

    /// [1, 3, H, W] view for batched network input.
    torch::Tensor batched() const { return pixels_.unsqueeze(0); }

    static Image constant(std::int64_t height, std::int64_t width, float value);

private:
    torch::Tensor pixels_;
};

/// Decodes an 8/16-bit PNG or JPEG into an RGB image. Throws IoError naming the path.
Image load_image(const std::filesystem::path& path);

/// True when the file header is recognised by an available decoder.
bool is_decodable_image(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG (values rounded from [0, 1]).
void save_png(const Image& image, const std::filesystem::path& path);

/// Writes a single-channel 16-bit PNG; `gray` is [H, W] in [0, 1].
void save_png16(const torch::Tensor& gray, const std::filesystem::path& path);

/// Reads an 8/16-bit single-channel PNG back into [H, W] floats in [0, 1].
torch::Tensor load_gray(const std::filesystem::path& path);

/// Stacks images into a [B, 3, H, W] batch. All images must share a size.
torch::Tensor stack_images(const std::vector<Image>& images);

} // namespace reenact
