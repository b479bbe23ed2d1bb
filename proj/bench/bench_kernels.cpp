// Serial against OpenMP paths of the hot kernels. Both paths return identical values;
// only the wall time differs.

#include <benchmark/benchmark.h>

#include "uat/attacks.hpp"
#include "uat/gaussian_theory.hpp"
#include "uat/nn.hpp"

using namespace uat;

namespace {

Execution mode(const benchmark::State& state) { return state.range(0) == 0 ? Execution::serial : Execution::parallel; }

Matrix unit_inputs(int d, int b, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix x(d, b);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        x.data()[i] = u(rng);
    }
    return x;
}

std::vector<int> labels(int b, int k) {
    std::vector<int> y(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) {
        y[static_cast<std::size_t>(i)] = i % k;
    }
    return y;
}

void BM_MonteCarloRobustError(benchmark::State& state) {
    const auto model = gaussian::GaussianModel::unit_mean(64, 1.0);
    const gaussian::LinearClassifier c(Vector::LinSpaced(64, 0.5, 1.5));
    for (auto _ : state) {
        benchmark::DoNotOptimize(gaussian::monte_carlo_robust_error(c, model, {0.1}, 200'000, 7, mode(state)));
    }
    state.SetItemsProcessed(state.iterations() * 200'000);
}

void BM_Backward(benchmark::State& state) {
    const auto net = nn::DenseNet::random({8, 64, 64, 4}, 3);
    const Matrix x = unit_inputs(8, 1024, 4);
    const auto spec = nn::LossSpec::xent(labels(1024, 4));
    for (auto _ : state) {
        benchmark::DoNotOptimize(nn::backward(net, x, spec, {}, mode(state)));
    }
    state.SetItemsProcessed(state.iterations() * 1024);
}

/// The plain-loop oracle the batched kernel is tested against.
void BM_BackwardReference(benchmark::State& state) {
    const auto net = nn::DenseNet::random({8, 64, 64, 4}, 3);
    const Matrix x = unit_inputs(8, 1024, 4);
    const auto spec = nn::LossSpec::xent(labels(1024, 4));
    for (auto _ : state) {
        benchmark::DoNotOptimize(nn::reference::backward(net, x, spec));
    }
    state.SetItemsProcessed(state.iterations() * 1024);
}

void BM_AttackBatchPgd(benchmark::State& state) {
    const auto net = nn::DenseNet::random({8, 64, 64, 4}, 5);
    const Matrix x = unit_inputs(8, 256, 6);
    attacks::AttackLabels y;
    y.labels = labels(256, 4);
    auto cfg = attacks::pgd_config(0.05, 20, 2);
    cfg.seed = 9;
    for (auto _ : state) {
        benchmark::DoNotOptimize(attacks::attack_batch(net, x, y, cfg, mode(state)));
    }
    state.SetItemsProcessed(state.iterations() * 256);
}

}  // namespace

BENCHMARK(BM_MonteCarloRobustError)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Backward)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BackwardReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AttackBatchPgd)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
