// SPDX-License-Identifier: Apache-2.0
#include "reenact/fvr.hpp"
#include "reenact/motion.hpp"
#include "reenact/synthetic.hpp"
#include "reenact/trainer.hpp"

#include <benchmark/benchmark.h>
#include <torch/torch.h>

using namespace reenact;

namespace {

void BM_VolumeRender(benchmark::State& state) {
    torch::set_num_threads(1);
    const auto size = state.range(0);
    const auto samples = state.range(1);
    torch::manual_seed(1);
    fvr::RaySamples rays{torch::rand({4, samples, size, size}), torch::rand({4, samples, 16, size, size})};
    for (auto _ : state) {
        benchmark::DoNotOptimize(fvr::volume_render(rays));
    }
    state.SetItemsProcessed(state.iterations() * 4 * size * size);
}
BENCHMARK(BM_VolumeRender)->Args({16, 16})->Args({32, 16})->Args({64, 32})->Unit(benchmark::kMicrosecond);

void BM_VolumeRenderBackward(benchmark::State& state) {
    torch::set_num_threads(1);
    torch::manual_seed(1);
    auto density = torch::rand({4, 16, 16, 16}).requires_grad_(true);
    auto color = torch::rand({4, 16, 16, 16, 16}).requires_grad_(true);
    for (auto _ : state) {
        fvr::volume_render({density, color}).sum().backward();
    }
}
BENCHMARK(BM_VolumeRenderBackward)->Unit(benchmark::kMicrosecond);

void BM_WarpFeatures(benchmark::State& state) {
    torch::set_num_threads(1);
    const auto size = state.range(0);
    torch::manual_seed(2);
    motion::DenseMotion dm;
    dm.flow = torch::rand({4, size, size, 2}) * 2 - 1;
    dm.occlusion = torch::rand({4, 1, size, size});
    auto features = torch::rand({4, 32, size, size});
    for (auto _ : state) {
        benchmark::DoNotOptimize(motion::warp_features(features, dm));
    }
}
BENCHMARK(BM_WarpFeatures)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_SparseMotion(benchmark::State& state) {
    torch::set_num_threads(1);
    torch::manual_seed(3);
    auto make = [] {
        return motion::KeypointSet{torch::rand({4, 15, 2}) * 2 - 1,
                                   torch::eye(2).expand({4, 15, 2, 2}) + 0.1 * torch::randn({4, 15, 2, 2})};
    };
    auto source = make();
    auto driving = make();
    auto grid = motion::identity_grid(16, 16);
    for (auto _ : state) {
        benchmark::DoNotOptimize(motion::sparse_motion(source, driving, grid).flows);
    }
}
BENCHMARK(BM_SparseMotion)->Unit(benchmark::kMicrosecond);

void BM_TrainStep(benchmark::State& state) {
    TrainConfig config;
    config.model.image_size = 64;
    config.batch_size = 4;
    torch::set_num_threads(config.threads);
    auto train_state = make_train_state(config);
    CorpusPairSource source(synthetic::make_blob_corpus(4, 6, 64, 1), 1);
    std::int64_t step = 0;
    for (auto _ : state) {
        auto batch = make_batch(source, step++, config.batch_size);
        benchmark::DoNotOptimize(train_step(train_state, batch).total);
    }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond)->Iterations(5);

} // namespace
BENCHMARK_MAIN();
