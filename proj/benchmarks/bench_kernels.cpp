#include <benchmark/benchmark.h>

#include "glyphcrm/encoder.hpp"
#include "glyphcrm/graph.hpp"
#include "glyphcrm/hanglyph.hpp"
#include "glyphcrm/model.hpp"

using namespace glyphcrm;

namespace {

Tensor rnd(Shape s, Rng& r) {
    Tensor t(std::move(s));
    for (auto& v : t.values()) v = r.uniform(-1.0f, 1.0f);
    return t;
}

void BM_conv2d_3x3(benchmark::State& state) {
    const auto channels = state.range(0);
    Rng rng(1);
    Tensor x = rnd({8, 3, 48, 48}, rng);
    Tensor k = rnd({channels, 3, 3, 3}, rng);
    Tensor b = rnd({channels}, rng);
    for (auto _ : state) {
        Graph g;
        auto y = g.conv2d(g.leaf(x), g.leaf(k), g.leaf(b), 1, 1);
        benchmark::DoNotOptimize(y.value().data());
    }
    state.SetItemsProcessed(state.iterations() * 8 * channels * 48 * 48);
}
BENCHMARK(BM_conv2d_3x3)->Arg(8)->Arg(64);

void BM_conv2d_9x9(benchmark::State& state) {
    const auto channels = state.range(0);
    Rng rng(2);
    Tensor x = rnd({8, channels, 48, 48}, rng);
    Tensor k = rnd({channels, channels, 9, 9}, rng);
    Tensor b = rnd({channels}, rng);
    for (auto _ : state) {
        Graph g;
        auto y = g.conv2d(g.leaf(x), g.leaf(k), g.leaf(b), 1, 4);
        benchmark::DoNotOptimize(y.value().data());
    }
    state.SetItemsProcessed(state.iterations() * 8 * channels * 48 * 48);
}
BENCHMARK(BM_conv2d_9x9)->Arg(8)->Arg(16);

void BM_resblock_forward(benchmark::State& state) {
    Rng rng(3);
    auto params = make_resblock(3, state.range(0), 9, rng);
    Tensor x = rnd({8, 3, 48, 48}, rng);
    for (auto _ : state) {
        Graph g;
        auto y = resblock_forward(g, g.leaf(x), bind(g, params, false));
        benchmark::DoNotOptimize(y.value().data());
    }
    state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_resblock_forward)->Arg(8)->Arg(16);

void BM_multi_head_attention(benchmark::State& state) {
    const std::int64_t len = state.range(0);
    const std::int64_t d = 64;
    Rng rng(4);
    auto params = make_transformer_block(d, 4 * d, rng);
    Tensor h = rnd({len, d}, rng);
    AttentionMask mask = AttentionMask::all_valid(len);
    for (auto _ : state) {
        Graph g;
        auto y = multi_head_attention(g, g.leaf(h), bind(g, params, false), 4, mask);
        benchmark::DoNotOptimize(y.value().data());
    }
    state.SetItemsProcessed(state.iterations() * len);
}
BENCHMARK(BM_multi_head_attention)->Arg(16)->Arg(64)->Arg(128);

void BM_hanglyph_forward_backward(benchmark::State& state) {
    const std::int64_t tokens = state.range(0);
    Rng rng(5);
    auto params = make_hanglyph(8, 16, 64, rng);
    Tensor x = rnd({tokens, 3, 48, 48}, rng);
    Tensor w = rnd({tokens, 64}, rng);
    for (auto _ : state) {
        Graph g;
        Tensor tracked;
        auto bound = bind(g, params, true);
        auto states = hanglyph_forward(g, g.leaf(x), bound);
        auto loss = g.sum(g.mul(states.r, g.leaf(w)));
        g.backward(loss);
        benchmark::DoNotOptimize(loss.value()[0]);
    }
    state.SetItemsProcessed(state.iterations() * tokens);
}
BENCHMARK(BM_hanglyph_forward_backward)->Arg(8)->Arg(32);

}  // namespace

BENCHMARK_MAIN();
