#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "alprio/kernels.hpp"

namespace k = alprio::kernels;

namespace {

std::vector<float> random_values(std::size_t n, unsigned seed) {
    std::mt19937 gen(seed);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    std::vector<float> v(n);
    for (auto& x : v) x = dist(gen);
    return v;
}

k::ConvGeometry geometry(const benchmark::State& state) {
    k::ConvGeometry g;
    g.in_channels = static_cast<std::size_t>(state.range(0));
    g.out_channels = static_cast<std::size_t>(state.range(0));
    g.height = g.width = static_cast<std::size_t>(state.range(1));
    return g;
}

template <bool Reference>
void conv_forward(benchmark::State& state) {
    const k::ConvGeometry g = geometry(state);
    const auto in = random_values(g.in_size(), 1), w = random_values(g.weight_size(), 2),
               b = random_values(g.out_channels, 3);
    std::vector<float> out(g.out_size());
    for (auto _ : state) {
        if constexpr (Reference)
            k::reference::conv2d_forward<float>(g, in, w, b, out);
        else
            k::conv2d_forward<float>(g, in, w, b, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(g.out_size() * g.in_channels * 9));
}

template <bool Reference>
void conv_backward(benchmark::State& state) {
    const k::ConvGeometry g = geometry(state);
    const auto in = random_values(g.in_size(), 1), w = random_values(g.weight_size(), 2),
               dout = random_values(g.out_size(), 3);
    std::vector<float> din(g.in_size()), dw(g.weight_size()), db(g.out_channels);
    for (auto _ : state) {
        if constexpr (Reference)
            k::reference::conv2d_backward<float>(g, in, w, dout, din, dw, db);
        else
            k::conv2d_backward<float>(g, in, w, dout, din, dw, db);
        benchmark::DoNotOptimize(din.data());
    }
}

template <bool Reference>
void upconv_forward(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0)), s = static_cast<std::size_t>(state.range(1));
    const auto in = random_values(c * s * s, 1), w = random_values(c * c * 4, 2), b = random_values(c, 3);
    std::vector<float> out(c * 4 * s * s);
    for (auto _ : state) {
        if constexpr (Reference)
            k::reference::upconv2x2_forward<float>(c, c, s, s, in, w, b, out);
        else
            k::upconv2x2_forward<float>(c, c, s, s, in, w, b, out);
        benchmark::DoNotOptimize(out.data());
    }
}

}  // namespace

BENCHMARK(conv_forward<true>)->Name("conv2d_forward/reference")->Args({8, 32})->Args({16, 64});
BENCHMARK(conv_forward<false>)->Name("conv2d_forward/openmp")->Args({8, 32})->Args({16, 64});
BENCHMARK(conv_backward<true>)->Name("conv2d_backward/reference")->Args({8, 32})->Args({16, 64});
BENCHMARK(conv_backward<false>)->Name("conv2d_backward/openmp")->Args({8, 32})->Args({16, 64});
BENCHMARK(upconv_forward<true>)->Name("upconv2x2_forward/reference")->Args({8, 16})->Args({16, 32});
BENCHMARK(upconv_forward<false>)->Name("upconv2x2_forward/openmp")->Args({8, 16})->Args({16, 32});

BENCHMARK_MAIN();
