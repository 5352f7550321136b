#include <benchmark/benchmark.h>

#include "geossl/fusion.hpp"
#include "geossl/rng.hpp"

using namespace geossl;

static void BM_SinkhornAssign(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const int p = static_cast<int>(state.range(1));
    Rng rng(7);
    Tensor m(n, p);
    for (std::int64_t i = 0; i < m.numel(); ++i) m[i] = rng.uniform(-1, 1);
    for (auto _ : state)
        benchmark::DoNotOptimize(model::sinkhorn_assign(m, 0.05, 3));
}
BENCHMARK(BM_SinkhornAssign)->Args({16, 8})->Args({256, 8})->Args({256, 100});

static void BM_GcplUpdate(benchmark::State& state) {
    model::FullConfig cfg;
    cfg.backbone.base_dim = 16;
    model::ModelState ms = model::build_model_state(cfg, 3);
    Rng rng(9);
    Tensor fused(16, cfg.fused_dim());
    for (std::int64_t i = 0; i < fused.numel(); ++i) fused[i] = rng.uniform(-1, 1);
    for (auto _ : state) {
        model::gcpl_update(ms, fused, 2080, cfg.gcpl);
        benchmark::ClobberMemory();
    }
}
BENCHMARK(BM_GcplUpdate);
