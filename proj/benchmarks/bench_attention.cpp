#include <benchmark/benchmark.h>

#include "geossl/nn.hpp"
#include "geossl/rng.hpp"

using namespace geossl;

namespace {
Tensor random_tensor(Rng& rng, int r, int c) {
    Tensor t(r, c);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-1, 1);
    return t;
}
}  // namespace

static void BM_BlockAttentionForward(benchmark::State& state) {
    const int blocks = static_cast<int>(state.range(0));
    const int len = static_cast<int>(state.range(1));
    const int dh = 32;
    Rng rng(1);
    nn::Var q = nn::constant(random_tensor(rng, blocks * len, dh));
    nn::Var k = nn::constant(random_tensor(rng, blocks * len, dh));
    nn::Var v = nn::constant(random_tensor(rng, blocks * len, dh));
    for (auto _ : state)
        benchmark::DoNotOptimize(nn::attention_blocks(q, k, v, blocks, 0.25));
}
BENCHMARK(BM_BlockAttentionForward)->Args({16, 64})->Args({64, 64})->Args({256, 16});

static void BM_BlockAttentionBackward(benchmark::State& state) {
    const int blocks = static_cast<int>(state.range(0));
    const int len = static_cast<int>(state.range(1));
    const int dh = 32;
    Rng rng(1);
    Tensor tq = random_tensor(rng, blocks * len, dh);
    Tensor tk = random_tensor(rng, blocks * len, dh);
    Tensor tv = random_tensor(rng, blocks * len, dh);
    for (auto _ : state) {
        nn::Var q = nn::leaf(tq), k = nn::leaf(tk), v = nn::leaf(tv);
        nn::Var loss = nn::mean_all(nn::attention_blocks(q, k, v, blocks, 0.25));
        nn::backward(loss);
        benchmark::DoNotOptimize(q->grad);
    }
}
BENCHMARK(BM_BlockAttentionBackward)->Args({16, 64})->Args({64, 64});
