#include <benchmark/benchmark.h>

#include "emednext/postprocess.hpp"

using namespace emednext;

namespace {

ProbMaps noisy_probs(int n) {
    GridGeometry geom;
    geom.shape = {n, n, n};
    ProbMaps probs(geom);
    std::uint64_t s = 12345;
    auto next = [&s] {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        return static_cast<float>((s % 10000) / 10000.0);
    };
    for (auto* ch : {&probs.tc, &probs.wt, &probs.et}) {
        for (float& v : *ch) v = next();
    }
    return probs;
}

void BM_LabelComponents26(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    GridGeometry geom;
    geom.shape = {n, n, n};
    BinaryMask mask(geom);
    std::uint64_t s = 99;
    for (auto& v : mask.voxels) {
        s = s * 6364136223846793005ull + 1442695040888963407ull;
        v = (s >> 60) < 6 ? 1 : 0;
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(label_components_26(mask));
    }
    state.SetItemsProcessed(state.iterations() * mask.voxels.size());
}
BENCHMARK(BM_LabelComponents26)->Arg(32)->Arg(64)->Arg(128);

void BM_PostprocessPipeline(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const ProbMaps probs = noisy_probs(n);
    PostprocessConfig cfg;
    cfg.gamma_tc = 20;
    cfg.gamma_wt = 40;
    cfg.gamma_et = 10;
    for (auto _ : state) {
        benchmark::DoNotOptimize(postprocess_pipeline(probs, cfg));
    }
    state.SetItemsProcessed(state.iterations() * probs.tc.size());
}
BENCHMARK(BM_PostprocessPipeline)->Arg(32)->Arg(64);

}  // namespace
