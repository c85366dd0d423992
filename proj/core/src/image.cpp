// SPDX-License-Identifier: Apache-2.0
#include "reenact/image.hpp"

#include "reenact/errors.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <torch/torch.h>

namespace reenact {

Image::Image(torch::Tensor pixels) : pixels_(std::move(pixels)) {
    if (!pixels_.defined() || pixels_.dim() != 3 || pixels_.size(0) != 3) {
        throw ValidationError("image tensor must have shape [3, H, W]");
    }
    if (pixels_.scalar_type() != torch::kFloat32) {
        pixels_ = pixels_.to(torch::kFloat32);
    }
    pixels_ = pixels_.contiguous();
    if (pixels_.numel() > 0) {
        const auto lo = pixels_.min().item<float>();
        const auto hi = pixels_.max().item<float>();
        if (!(lo >= 0.0f && hi <= 1.0f)) {
            throw ValidationError("image values must lie in [0, 1]");
        }
    }
}

Image Image::constant(std::int64_t height, std::int64_t width, float value) {
    return Image(torch::full({3, height, width}, value));
}

Image load_image(const std::filesystem::path& path) {
    if (!std::filesystem::is_regular_file(path)) {
        throw IoError("image not found: " + path.string());
    }
    cv::Mat raw = cv::imread(path.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_COLOR);
    if (raw.empty()) {
        throw IoError("cannot decode image: " + path.string());
    }
    double scale = 1.0 / 255.0;
    if (raw.depth() == CV_16U) {
        scale = 1.0 / 65535.0;
    } else if (raw.depth() != CV_8U) {
        throw IoError("unsupported bit depth in " + path.string());
    }
    cv::Mat as_float;
    raw.convertTo(as_float, CV_32FC3, scale);
    auto bgr = torch::from_blob(as_float.data, {as_float.rows, as_float.cols, 3}, torch::kFloat32);
    return Image(bgr.flip({2}).permute({2, 0, 1}).contiguous().clamp(0.0, 1.0));
}

bool is_decodable_image(const std::filesystem::path& path) {
    return std::filesystem::is_regular_file(path) && cv::haveImageReader(path.string());
}

void save_png(const Image& image, const std::filesystem::path& path) {
    if (image.empty()) {
        throw ValidationError("cannot write an empty image");
    }
    auto hwc = (image.tensor() * 255.0).round().clamp(0, 255).to(torch::kUInt8).permute({1, 2, 0}).flip({2}).contiguous();
    cv::Mat bgr(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3, hwc.data_ptr());
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    if (!cv::imwrite(path.string(), bgr)) {
        throw IoError("failed to write " + path.string());
    }
}

void save_png16(const torch::Tensor& gray, const std::filesystem::path& path) {
    if (gray.dim() != 2) {
        throw ValidationError("16-bit export expects an [H, W] tensor");
    }
    auto data = (gray.to(torch::kFloat64).clamp(0.0, 1.0) * 65535.0).round().to(torch::kInt32).contiguous();
    cv::Mat out(static_cast<int>(data.size(0)), static_cast<int>(data.size(1)), CV_16UC1);
    const auto* src = data.data_ptr<std::int32_t>();
    for (int r = 0; r < out.rows; ++r) {
        for (int c = 0; c < out.cols; ++c) {
            out.at<std::uint16_t>(r, c) = static_cast<std::uint16_t>(src[r * out.cols + c]);
        }
    }
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    if (!cv::imwrite(path.string(), out)) {
        throw IoError("failed to write " + path.string());
    }
}

torch::Tensor load_gray(const std::filesystem::path& path) {
    cv::Mat raw = cv::imread(path.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_GRAYSCALE);
    if (raw.empty()) {
        throw IoError("cannot decode image: " + path.string());
    }
    const double scale = raw.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0;
    cv::Mat as_float;
    raw.convertTo(as_float, CV_32FC1, scale);
    return torch::from_blob(as_float.data, {as_float.rows, as_float.cols}, torch::kFloat32).clone();
}

torch::Tensor stack_images(const std::vector<Image>& images) {
    if (images.empty()) {
        throw ValidationError("cannot stack an empty image list");
    }
    std::vector<torch::Tensor> parts;
    parts.reserve(images.size());
    for (const auto& image : images) {
        parts.push_back(image.tensor());
    }
    return torch::stack(parts);
}

} // namespace reenact
