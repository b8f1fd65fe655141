#include <benchmark/benchmark.h>

#include "emednext/conv3d.hpp"

using emednext::Tensor;

namespace {

Tensor make_input(int channels, int n) {
    Tensor t(channels, {n, n, n});
    for (std::size_t i = 0; i < t.values.size(); ++i) {
        t.values[i] = static_cast<float>((i * 2654435761u % 1000) / 1000.0 - 0.5);
    }
    return t;
}

void BM_Conv3dDense(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const int c = 8;
    const Tensor x = make_input(c, n);
    std::vector<float> w(static_cast<std::size_t>(c) * c * 27, 0.01f);
    std::vector<float> b(c, 0.f);
    for (auto _ : state) {
        benchmark::DoNotOptimize(emednext::conv3d_direct(x, w, b, c, 3, 1, 1));
    }
    state.SetItemsProcessed(state.iterations() * x.spatial_size());
}
BENCHMARK(BM_Conv3dDense)->Arg(16)->Arg(32);

void BM_Conv3dDepthwise(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const int c = 16;
    const Tensor x = make_input(c, n);
    std::vector<float> w(static_cast<std::size_t>(c) * 27, 0.03f);
    std::vector<float> b(c, 0.f);
    for (auto _ : state) {
        benchmark::DoNotOptimize(emednext::conv3d_direct(x, w, b, c, 3, 1, c));
    }
    state.SetItemsProcessed(state.iterations() * x.spatial_size());
}
BENCHMARK(BM_Conv3dDepthwise)->Arg(16)->Arg(32)->Arg(48);

void BM_ConvTranspose2x2(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const int c = 16;
    const Tensor x = make_input(c, n);
    std::vector<float> w(static_cast<std::size_t>(c) * (c / 2) * 8, 0.05f);
    std::vector<float> b(c / 2, 0.f);
    for (auto _ : state) {
        benchmark::DoNotOptimize(emednext::conv_transpose3d_2x2(x, w, b, c / 2));
    }
}
BENCHMARK(BM_ConvTranspose2x2)->Arg(16)->Arg(32);

}  // namespace
