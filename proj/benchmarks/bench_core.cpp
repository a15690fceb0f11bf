#include <benchmark/benchmark.h>

#include "nestcl/loss.hpp"
#include "nestcl/model.hpp"
#include "nestcl/numerics.hpp"
#include "nestcl/retrieval.hpp"
#include "nestcl/rng.hpp"

using namespace nestcl;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    Rng rng(seed);
    Matrix m(rows, cols);
    for (double& x : m.data) x = rng.normal();
    return m;
}

void BM_pairwise_cosine(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const Matrix a = random_matrix(n, 32, 1);
    const Matrix b = random_matrix(n, 32, 2);
    for (auto _ : state) {
        benchmark::DoNotOptimize(pairwise_cosine(a, b));
    }
}
BENCHMARK(BM_pairwise_cosine)->Arg(64)->Arg(256)->Arg(1024);

void BM_info_nce(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const Matrix w = random_matrix(n, 32, 3);
    const Matrix h = random_matrix(n, 32, 4);
    for (auto _ : state) {
        benchmark::DoNotOptimize(info_nce_symmetric(w, h, 0.1));
    }
}
BENCHMARK(BM_info_nce)->Arg(10)->Arg(50)->Arg(100);

void BM_tabular_forward(benchmark::State& state) {
    Rng rng(5);
    std::vector<FeatureSpec> features;
    for (int j = 0; j < 8; ++j) features.push_back({"f" + std::to_string(j), false, 0});
    const TabularEncoder enc = TabularEncoder::create(features, 16, 32, rng);
    Vector values(8);
    for (double& v : values) v = rng.normal();
    const std::vector<bool> missing(8, false);
    for (auto _ : state) {
        benchmark::DoNotOptimize(enc.forward(values, missing));
    }
}
BENCHMARK(BM_tabular_forward);

void BM_tabular_backward(benchmark::State& state) {
    Rng rng(6);
    std::vector<FeatureSpec> features;
    for (int j = 0; j < 8; ++j) features.push_back({"f" + std::to_string(j), false, 0});
    const TabularEncoder enc = TabularEncoder::create(features, 16, 32, rng);
    Vector values(8);
    for (double& v : values) v = rng.normal();
    const std::vector<bool> missing(8, false);
    Vector upstream(32);
    for (double& v : upstream) v = rng.normal();
    TabularTrace trace;
    enc.forward(values, missing, &trace);
    for (auto _ : state) {
        TabularEncoder grads = enc.zeros_clone();
        enc.backward(trace, upstream, grads);
        benchmark::DoNotOptimize(grads);
    }
}
BENCHMARK(BM_tabular_backward);

void BM_nearest_topk(benchmark::State& state) {
    const auto m = static_cast<std::size_t>(state.range(0));
    RetrievalPool pool;
    pool.kind = "lesion";
    pool.embeddings = random_matrix(m, 32, 7);
    for (std::size_t i = 0; i < m; ++i) pool.ids.push_back(std::to_string(i));
    Rng rng(8);
    Vector query(32);
    for (double& v : query) v = rng.normal();
    for (auto _ : state) {
        benchmark::DoNotOptimize(nearest(pool, query, 10));
    }
}
BENCHMARK(BM_nearest_topk)->Arg(1000)->Arg(10000);

} // namespace

BENCHMARK_MAIN();
