#include <benchmark/benchmark.h>

#include <cmath>

#include "datt/preprocess.hpp"
#include "datt/rng.hpp"

namespace {

using namespace datt;

void BM_FitLambda(benchmark::State& state) {
  Rng rng(1);
  std::vector<double> col(static_cast<std::size_t>(state.range(0)));
  for (double& v : col) v = std::exp(0.8 * rng.normal()) - 0.5;
  for (auto _ : state) benchmark::DoNotOptimize(fit_lambda(col));
}
BENCHMARK(BM_FitLambda)->Arg(252)->Arg(10000)->Unit(benchmark::kMicrosecond);

void BM_FeatureTransformFit(benchmark::State& state) {
  Rng rng(2);
  Tensor x(Shape{252, 6});
  for (double& v : x.values()) v = std::exp(0.5 * rng.normal());
  for (auto _ : state) benchmark::DoNotOptimize(FeatureTransform::fit(x).lambdas[0]);
}
BENCHMARK(BM_FeatureTransformFit)->Unit(benchmark::kMicrosecond);

}  // namespace
