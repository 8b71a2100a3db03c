#include <benchmark/benchmark.h>

#include "datt/dataset.hpp"
#include "datt/pipeline.hpp"
#include "datt/shap.hpp"

namespace {

using namespace datt;

// Untrained default model with a 202-row context, as after training on 252 rows.
const TrainedModel& model() {
  static const TrainedModel m = [] {
    const ModelConfig c;
    const Dataset d = to_dataset(gen_synthetic(266, 1, 0.0));
    std::vector<std::size_t> ctx(202), bg(64);
    for (std::size_t i = 0; i < 202; ++i) ctx[i] = i;
    for (std::size_t i = 0; i < 64; ++i) bg[i] = 202 + i;
    return TrainedModel(c, init_params(c, 1), FeatureTransform::fit(d.features), TargetTransform::fit(d.targets),
                        d.features.take_rows(ctx), d.features.take_rows(bg));
  }();
  return m;
}

// Arg: background rows.
void BM_KernelShap(benchmark::State& state) {
  const TrainedModel& m = model();
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  const Tensor bg = m.background_rows().take_rows(idx);
  const BatchModel f = [&m](const Tensor& rows) { return m.predict(rows); };
  const Tensor x = feature_matrix(gen_synthetic(1, 2, 0.0));
  for (auto _ : state) benchmark::DoNotOptimize(kernel_shap(f, x.row(0), bg).phi[0]);
}
BENCHMARK(BM_KernelShap)->Arg(8)->Arg(64)->Unit(benchmark::kMillisecond);

// Kernel solve alone on a cheap additive model. Arg: features.
void BM_KernelShapSolve(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const BatchModel f = [m](const Tensor& rows) {
    std::vector<double> y(rows.rows());
    for (std::size_t i = 0; i < rows.rows(); ++i) {
      for (std::size_t j = 0; j < m; ++j) y[i] += static_cast<double>(j + 1) * rows.at(i, j);
    }
    return y;
  };
  Tensor bg(Shape{1, m}, 0.0);
  std::vector<double> x(m, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(kernel_shap(f, x, bg).phi[0]);
}
BENCHMARK(BM_KernelShapSolve)->Arg(6)->Arg(10)->Arg(14)->Unit(benchmark::kMillisecond);

}  // namespace
