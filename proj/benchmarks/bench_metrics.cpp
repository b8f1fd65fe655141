#include <benchmark/benchmark.h>

#include "emednext/metrics.hpp"

using namespace emednext;

namespace {

BinaryMask ball_mask(int n, double radius, double shift) {
    GridGeometry geom;
    geom.shape = {n, n, n};
    BinaryMask mask(geom);
    const double c = (n - 1) / 2.0;
    for (int z = 0; z < n; ++z) {
        for (int y = 0; y < n; ++y) {
            for (int x = 0; x < n; ++x) {
                const double dx = x - c - shift, dy = y - c, dz = z - c;
                if (dx * dx + dy * dy + dz * dz <= radius * radius) mask.set(x, y, z, 1);
            }
        }
    }
    return mask;
}

void BM_DistanceTransform(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const BinaryMask sites = surface_voxels(ball_mask(n, n / 3.0, 0.0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(squared_distance_transform(sites, {1.f, 1.f, 1.f}));
    }
    state.SetItemsProcessed(state.iterations() * sites.voxels.size());
}
BENCHMARK(BM_DistanceTransform)->Arg(64)->Arg(128);

void BM_Nsd(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const BinaryMask pred = ball_mask(n, n / 3.0, 1.5);
    const BinaryMask gt = ball_mask(n, n / 3.0, 0.0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(nsd(pred, gt, 1.0, {1.f, 1.f, 1.f}));
    }
}
BENCHMARK(BM_Nsd)->Arg(64)->Arg(128);

void BM_LesionwiseDice(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const BinaryMask pred = ball_mask(n, n / 4.0, 2.0);
    const BinaryMask gt = ball_mask(n, n / 4.0, 0.0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(lesionwise(pred, gt, LesionMetric::dice, {}, {1.f, 1.f, 1.f}));
    }
}
BENCHMARK(BM_LesionwiseDice)->Arg(64);

}  // namespace
