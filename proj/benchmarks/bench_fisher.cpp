#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "obskit/fisher.hpp"
#include "obskit/model.hpp"
#include "obskit/saliency.hpp"

using namespace obskit;

namespace {

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t d) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(d);
    for (auto& x : v) x = normal(rng);
    return v;
}

// One rank-1 gradient application; O(B d) per call, linear in d for fixed B.
void BM_EstimatorUpdate(benchmark::State& state) {
    const auto d = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(1);
    FisherInverseEstimator est(d, 50, 1e-7, 1 << 20);
    const auto g = random_vector(rng, d);
    for (auto _ : state) {
        est.update(g);
        benchmark::DoNotOptimize(est.block(0).data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                            static_cast<std::int64_t>(d));
}
BENCHMARK(BM_EstimatorUpdate)->RangeMultiplier(4)->Range(1 << 10, 1 << 18);

void BM_EstimatorIhvp(benchmark::State& state) {
    const auto d = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(2);
    FisherInverseEstimator est(d, 50, 1e-7, 64);
    for (int i = 0; i < 8; ++i) est.update(random_vector(rng, d));
    const auto v = random_vector(rng, d);
    for (auto _ : state) {
        auto out = est.ihvp(v);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(BM_EstimatorIhvp)->RangeMultiplier(4)->Range(1 << 10, 1 << 18);

void BM_ScoreAllGroups(benchmark::State& state) {
    const auto d = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(3);
    FisherInverseEstimator est(d, 50, 1e-7, 64);
    for (int i = 0; i < 16; ++i) est.update(random_vector(rng, d));
    WeightStore w(random_vector(rng, d), {{"w", 0, d}});
    Mask mask(d, w.segments());
    for (auto _ : state) {
        auto report = score_all_groups(w, est, GroupSpec{1}, mask);
        benchmark::DoNotOptimize(report.scores.data());
    }
}
BENCHMARK(BM_ScoreAllGroups)->RangeMultiplier(4)->Range(1 << 10, 1 << 16);

void BM_ForwardBackward(benchmark::State& state) {
    std::mt19937_64 rng(4);
    ModelConfig cfg;
    cfg.input = 64;
    cfg.hidden = {84, 84, 84};
    cfg.classes = 10;
    ToyModel model = build_model(cfg, rng);
    Mat batch(32, 64);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : batch.data) v = normal(rng);
    std::vector<int> labels(32);
    for (auto& y : labels) y = static_cast<int>(rng() % 10);
    for (auto _ : state) {
        auto result = backprop(model, batch, labels, nullptr);
        benchmark::DoNotOptimize(result.loss);
    }
}
BENCHMARK(BM_ForwardBackward);

}  // namespace

BENCHMARK_MAIN();
