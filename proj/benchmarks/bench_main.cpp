#include <benchmark/benchmark.h>

#include "sanet/layers.hpp"
#include "sanet/network.hpp"
#include "sanet/rng.hpp"
#include "sanet/sam.hpp"

using namespace sanet;

// args: batch, channels, spatial size, stride
static void BM_ConvForward(benchmark::State& state) {
    Rng rng(1);
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto c = static_cast<std::size_t>(state.range(1));
    const auto hw = static_cast<std::size_t>(state.range(2));
    const auto s = static_cast<std::size_t>(state.range(3));
    const Tensor4 x = randn({n, c, hw, hw}, 0.0, 1.0, rng);
    const ConvParams p = ConvParams::he_normal(c, c, 3, rng);
    for (auto _ : state) benchmark::DoNotOptimize(conv2d_forward(x, p, s, 1).first);
    state.counters["MAC/s"] = benchmark::Counter(
        static_cast<double>(n * c * c * 9 * (hw / s) * (hw / s)), benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_ConvForward)->Args({4, 16, 64, 1})->Args({4, 64, 16, 1})->Args({4, 256, 4, 1})->Args({4, 256, 4, 2});

static void BM_ConvBackward(benchmark::State& state) {
    Rng rng(1);
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto c = static_cast<std::size_t>(state.range(1));
    const auto hw = static_cast<std::size_t>(state.range(2));
    const Tensor4 x = randn({n, c, hw, hw}, 0.0, 1.0, rng);
    ConvParams p = ConvParams::he_normal(c, c, 3, rng);
    auto [y, tape0] = conv2d_forward(x, p, 1, 1);
    const Tensor4 g = randn(y.shape(), 0.0, 1.0, rng);
    for (auto _ : state) {
        state.PauseTiming();
        ConvTape tape = tape0;
        state.ResumeTiming();
        benchmark::DoNotOptimize(conv2d_backward(g, tape, p));
    }
}
BENCHMARK(BM_ConvBackward)->Args({4, 16, 64})->Args({4, 64, 16})->Args({4, 256, 4});

static void BM_SamForwardBackward(benchmark::State& state) {
    Rng rng(1);
    const auto c = static_cast<std::size_t>(state.range(0));
    const auto hw = static_cast<std::size_t>(state.range(1));
    const Tensor4 x = randn({4, c, hw, hw}, 0.0, 1.0, rng);
    SamParams p = sam_init(c, hw, hw, rng);
    for (auto _ : state) {
        auto [y, tape] = sam_forward(x, p);
        benchmark::DoNotOptimize(sam_backward(y, tape, p));
    }
}
BENCHMARK(BM_SamForwardBackward)->Args({16, 32})->Args({256, 2});

static void BM_NetworkStep(benchmark::State& state) {
    Rng rng(1);
    NetworkConfig cfg;
    cfg.variant = static_cast<Variant>(state.range(0));
    Network net = Network::build(cfg, rng);
    const Tensor4 x = randn({4, 3, 64, 64}, 0.0, 1.0, rng);
    for (auto _ : state) {
        auto [y, tape] = net.forward(x);
        benchmark::DoNotOptimize(net.backward(y, tape));
    }
    state.SetLabel(std::string(to_string(cfg.variant)));
}
BENCHMARK(BM_NetworkStep)->Arg(static_cast<int>(Variant::baseline))->Arg(static_cast<int>(Variant::sam_multi))
    ->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
