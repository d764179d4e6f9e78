#include <benchmark/benchmark.h>

#include "elliptic/data.hpp"
#include "elliptic/models.hpp"
#include "elliptic/variational.hpp"

using namespace elliptic;

namespace {

void BM_ElboGradient(benchmark::State& state) {
  const auto kind = static_cast<ModelKind>(state.range(0));
  const int n = static_cast<int>(state.range(1));
  Dataset d = gen_heteroscedastic(n, 1);
  standardize(d);
  Rng rng(2);
  ModelOptions opt;
  opt.inducing = 50;
  const ModelSpec spec = make_model(kind, Kernel::se_ard(1), d.X, opt, rng);
  const ElboNoise noise = draw_elbo_noise(n, 16, rng);
  for (auto _ : state) benchmark::DoNotOptimize(elbo_gradient(spec, d.X, d.y, n, noise));
  state.SetLabel(to_string(kind));
}
BENCHMARK(BM_ElboGradient)
    ->Args({static_cast<long>(ModelKind::SVGP), 200})
    ->Args({static_cast<long>(ModelKind::EPGP), 200})
    ->Args({static_cast<long>(ModelKind::EPEP), 200})
    ->Args({static_cast<long>(ModelKind::HetEP), 200})
    ->Unit(benchmark::kMillisecond);

void BM_Predict(benchmark::State& state) {
  Dataset d = gen_heteroscedastic(200, 3);
  standardize(d);
  Rng rng(4);
  ModelOptions opt;
  opt.inducing = 50;
  ModelSpec spec = make_model(ModelKind::EPEP, Kernel::se_ard(1), d.X, opt, rng);
  spec.trained = true;
  for (auto _ : state) benchmark::DoNotOptimize(predict(spec, d.X, static_cast<int>(state.range(0))));
}
BENCHMARK(BM_Predict)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace
