#include <benchmark/benchmark.h>

#include "geossl/backbone.hpp"
#include "geossl/datakit.hpp"

using namespace geossl;

static void BM_BackboneForwardHR(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0));
    model::FullConfig cfg;
    model::ModelState ms = model::build_model_state(cfg, 11);
    data::DatasetSpec spec;
    spec.h_ms = spec.w_ms = size / 8;
    spec.t_ms = 1;
    spec.t_sar = 1;
    data::GeoSample s = data::generate_sample(spec, 0);
    for (auto _ : state) {
        model::ParamCtx P(ms, "", false);
        benchmark::DoNotOptimize(
            model::forward_backbone(P, s.hr_image, data::Modality::HR, cfg.backbone));
    }
}
BENCHMARK(BM_BackboneForwardHR)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

static void BM_BackboneForwardMS(benchmark::State& state) {
    model::FullConfig cfg;
    model::ModelState ms = model::build_model_state(cfg, 11);
    data::DatasetSpec spec;
    spec.h_ms = spec.w_ms = 16;
    spec.t_ms = 1;
    spec.t_sar = 1;
    data::GeoSample s = data::generate_sample(spec, 0);
    const int S = spec.h_ms;
    for (auto _ : state) {
        model::ParamCtx P(ms, "", false);
        benchmark::DoNotOptimize(model::forward_backbone(P, s.ms_series.v.data(), S, S, 10,
                                                         data::Modality::MS, cfg.backbone));
    }
}
BENCHMARK(BM_BackboneForwardMS)->Unit(benchmark::kMillisecond);
