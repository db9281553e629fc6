// Hot paths at desk scale: conv layers, the two encoders, one stage-1 step,
// augmentation and the scalar losses.

#include <benchmark/benchmark.h>

#include <vector>

#include "cda/augment.hpp"
#include "cda/datagen.hpp"
#include "cda/losses.hpp"
#include "cda/models.hpp"
#include "cda/nn.hpp"
#include "cda/rng.hpp"

namespace {

using namespace cda;

Volume phantom(int index = 0) { return generate_phantom(index % 3, default_source_spec(), index, Domain::source); }

// args: input side, in channels, out channels, stride
void bm_conv_forward(benchmark::State& state) {
    const int side = static_cast<int>(state.range(0));
    const int cin = static_cast<int>(state.range(1));
    const int cout = static_cast<int>(state.range(2));
    const int stride = static_cast<int>(state.range(3));
    Rng rng(1);
    nn::Conv3d<float> conv("c", cin, cout, 3, stride);
    conv.init(rng, 0.1);
    nn::Matrix<float> x = nn::Matrix<float>::Random(cin, side * side * side);
    const std::array<int, 3> dims{side, side, side};
    for (auto _ : state) benchmark::DoNotOptimize(conv.forward(x, dims, nullptr));
}
BENCHMARK(bm_conv_forward)->Args({32, 1, 16, 2})->Args({16, 16, 16, 1})->Args({8, 32, 32, 1})->Unit(benchmark::kMicrosecond);

void bm_conv_backward(benchmark::State& state) {
    const int side = static_cast<int>(state.range(0));
    const int cin = static_cast<int>(state.range(1));
    const int cout = static_cast<int>(state.range(2));
    Rng rng(1);
    nn::Conv3d<float> conv("c", cin, cout, 3, 1);
    conv.init(rng, 0.1);
    nn::Matrix<float> x = nn::Matrix<float>::Random(cin, side * side * side);
    const std::array<int, 3> dims{side, side, side};
    nn::Conv3d<float>::Cache cache;
    const nn::Matrix<float> y = conv.forward(x, dims, &cache);
    const nn::Matrix<float> dy = nn::Matrix<float>::Ones(y.rows(), y.cols());
    for (auto _ : state) benchmark::DoNotOptimize(conv.backward(cache, dy, true, true));
}
BENCHMARK(bm_conv_backward)->Args({16, 16, 16})->Args({8, 32, 32})->Unit(benchmark::kMicrosecond);

void bm_encode(benchmark::State& state) {
    const bool vit = state.range(0) == 0;
    ModelConfig cfg;
    const auto model = init_params<float>(cfg, 3);
    const Volume v = phantom();
    const Branch<float>& b = vit ? model.v : model.c;
    for (auto _ : state) benchmark::DoNotOptimize(b.encode(v));
    state.SetLabel(vit ? "vit" : "cnn");
}
BENCHMARK(bm_encode)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

// Forward plus backward of the focal objective on a batch of 4.
void bm_stage1_batch(benchmark::State& state) {
    const bool vit = state.range(0) == 0;
    ModelConfig cfg;
    auto model = init_params<float>(cfg, 3);
    std::vector<Volume> volumes;
    for (int i = 0; i < 4; ++i) volumes.push_back(phantom(i));
    std::vector<LabeledItem> batch;
    for (int i = 0; i < 4; ++i) batch.push_back({&volumes[i], i % 3});
    const std::vector<int> labels{0, 1, 2, 0};
    const auto fp = FocalParams::inverse_frequency(labels, 3);
    Branch<float>& b = vit ? model.v : model.c;
    for (auto _ : state) {
        model.zero_grad();
        benchmark::DoNotOptimize(stage1_loss<float>(b, batch, fp, true));
    }
    state.SetLabel(vit ? "vit" : "cnn");
}
BENCHMARK(bm_stage1_batch)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void bm_augment(benchmark::State& state) {
    const Volume v = phantom();
    std::uint64_t seed = 0;
    if (state.range(0) == 0) {
        for (auto _ : state) benchmark::DoNotOptimize(weak_augment(v, ++seed));
        state.SetLabel("weak");
    } else {
        for (auto _ : state) benchmark::DoNotOptimize(strong_augment(v, ++seed));
        state.SetLabel("strong");
    }
}
BENCHMARK(bm_augment)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);

void bm_phantom(benchmark::State& state) {
    int i = 0;
    for (auto _ : state) benchmark::DoNotOptimize(phantom(i++));
}
BENCHMARK(bm_phantom)->Unit(benchmark::kMicrosecond);

void bm_losses(benchmark::State& state) {
    const std::vector<double> p{0.7, 0.2, 0.1}, q{0.3, 0.3, 0.4};
    const std::vector<int> labels{0, 1, 2};
    const auto fp = FocalParams::inverse_frequency(labels, 3);
    for (auto _ : state) {
        benchmark::DoNotOptimize(jsd(p, q));
        benchmark::DoNotOptimize(discrepancy(p, q));
        benchmark::DoNotOptimize(soft_cross_entropy(p, q));
        benchmark::DoNotOptimize(focal_loss(p, 1, fp));
    }
}
BENCHMARK(bm_losses);

}  // namespace

BENCHMARK_MAIN();
