#include <benchmark/benchmark.h>

#include "elliptic/spline_flow.hpp"

using namespace elliptic;

namespace {

SplineFlowParams bench_params(int bins) {
  SplineFlowParams p = SplineFlowParams::identity(bins, Squash::softplus());
  Rng rng(1);
  for (Eigen::Index i = 0; i < p.raw.size(); ++i) p.raw[i] = 0.5 * standard_normal(rng);
  return p;
}

void BM_SplineForward(benchmark::State& state) {
  const SplineFlow f(bench_params(static_cast<int>(state.range(0))));
  double z = -5.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(f.forward(z));
    z = z > 5.0 ? -5.0 : z + 1e-3;
  }
}
BENCHMARK(BM_SplineForward)->Arg(5)->Arg(9)->Arg(32);

void BM_SplineInverse(benchmark::State& state) {
  const SplineFlow f(bench_params(static_cast<int>(state.range(0))));
  double x = 0.1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(f.inverse(x));
    x = x > 5.0 ? 0.1 : x + 1e-3;
  }
}
BENCHMARK(BM_SplineInverse)->Arg(5)->Arg(9)->Arg(32);

void BM_SplineLogProbGradient(benchmark::State& state) {
  const SplineFlowParams p = bench_params(9);
  for (auto _ : state) benchmark::DoNotOptimize(log_prob_gradient(1.3, p));
}
BENCHMARK(BM_SplineLogProbGradient);

}  // namespace
