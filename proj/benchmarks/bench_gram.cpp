#include <benchmark/benchmark.h>

#include "elliptic/kernels.hpp"
#include "elliptic/random.hpp"

using namespace elliptic;

namespace {

Eigen::MatrixXd inputs(Eigen::Index n, Eigen::Index d) {
  Rng rng(5);
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = standard_normal(rng);
  return x;
}

void BM_Gram(benchmark::State& state) {
  const Eigen::MatrixXd x = inputs(state.range(0), 4);
  const Kernel k = Kernel::se_ard(4);
  for (auto _ : state) benchmark::DoNotOptimize(k.gram(x, x));
}
BENCHMARK(BM_Gram)->RangeMultiplier(2)->Range(64, 512);

void BM_GramFactorize(benchmark::State& state) {
  const Eigen::MatrixXd x = inputs(state.range(0), 4);
  const Kernel k = Kernel::se_ard(4);
  for (auto _ : state) benchmark::DoNotOptimize(gram_with_jitter(k, x));
}
BENCHMARK(BM_GramFactorize)->RangeMultiplier(2)->Range(64, 512);

void BM_GramParamGradient(benchmark::State& state) {
  const Eigen::MatrixXd x = inputs(state.range(0), 4);
  const Kernel k = Kernel::sum({Kernel::se_ard(4), Kernel::linear(0.5)});
  const Eigen::MatrixXd g = Eigen::MatrixXd::Ones(x.rows(), x.rows());
  for (auto _ : state) benchmark::DoNotOptimize(k.grad_params(x, x, g));
}
BENCHMARK(BM_GramParamGradient)->RangeMultiplier(2)->Range(64, 512);

}  // namespace
