// SPDX-License-Identifier: Apache-2.0
#include "reenact/generator.hpp"

#include "reenact/errors.hpp"
#include "reenact/seeding.hpp"

#include <torch/torch.h>

namespace reenact {

namespace F = torch::nn::functional;

namespace {

template <typename Module, typename... Args>
Module seeded(std::uint64_t seed, std::string_view name, Args&&... args) {
    torch::manual_seed(derive_seed(seed, name));
    return Module(std::forward<Args>(args)...);
}

} // namespace

GeneratorImpl::GeneratorImpl(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    keypoint_detector = register_module("keypoint_detector", seeded<KeypointDetector>(seed, "keypoint_detector", config_));
    dense_motion = register_module("dense_motion", seeded<DenseMotionNetwork>(seed, "dense_motion", config_));
    encoder = register_module("encoder", seeded<SourceEncoder>(seed, "encoder", config_));
    shape_field = register_module(
        "shape_field", seeded<fvr::FieldExtractor>(seed, "shape_field", config_.feature_channels, config_.depth_samples));
    color_field = register_module(
        "color_field", seeded<fvr::FieldExtractor>(seed, "color_field", config_.feature_channels, config_.color_channels));
    ray_sampler = register_module(
        "ray_sampler", seeded<fvr::RaySampler>(seed, "ray_sampler", config_.depth_samples, config_.color_channels,
                                               config_.depth_samples, config_.color_channels, config_.ray_hidden));
    decoder = register_module("decoder", seeded<fvr::SpadeDecoder>(seed, "decoder", config_));
}

motion::KeypointSet GeneratorImpl::detect(const torch::Tensor& images) { return keypoint_detector->forward(images); }

GeneratorOutput GeneratorImpl::generate(const torch::Tensor& source, const motion::KeypointSet& source_keypoints,
                                        const motion::KeypointSet& driving_keypoints) {
    if (source.dim() != 4 || source.size(1) != 3 || source.size(2) != config_.image_size ||
        source.size(3) != config_.image_size) {
        throw ValidationError("generator expects source images [B, 3, " + std::to_string(config_.image_size) + ", " +
                              std::to_string(config_.image_size) + "]");
    }
    GeneratorOutput out;
    out.source_keypoints = source_keypoints;
    out.driving_keypoints = driving_keypoints;
    out.source_features = encoder->forward(source);

    const auto h = config_.feature_size();
    auto grid = motion::identity_grid(h, h, source.options());
    auto sparse = motion::sparse_motion(source_keypoints, driving_keypoints, grid, config_.jacobian_eps);
    auto source_small = F::avg_pool2d(source, F::AvgPool2dFuncOptions(config_.feature_stride));
    out.motion = dense_motion->forward(source_small, sparse, source_keypoints, driving_keypoints);

    out.warped = motion::warp_features(out.source_features, out.motion);
    out.rays = ray_sampler->forward(shape_field->forward(out.warped), color_field->forward(out.warped));
    out.rendered = fvr::volume_render(out.rays);
    out.prediction = decoder->forward(out.rendered, out.source_features);
    return out;
}

GeneratorOutput GeneratorImpl::forward(const torch::Tensor& source, const torch::Tensor& driving) {
    auto kp_source = detect(source);
    auto kp_driving = detect(driving);
    return generate(source, kp_source, kp_driving);
}

} // namespace reenact
