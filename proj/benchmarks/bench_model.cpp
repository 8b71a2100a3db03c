#include <benchmark/benchmark.h>

#include "datt/autograd.hpp"
#include "datt/dataset.hpp"
#include "datt/model.hpp"
#include "datt/rng.hpp"
#include "datt/train.hpp"

namespace {

using namespace datt;

Tensor rows(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(Shape{n, kSoilFeatures});
  for (double& v : t.values()) v = rng.uniform(-2.0, 2.0);
  return t;
}

ModelConfig variant_config(int v) {
  ModelConfig c;
  c.variant = static_cast<Variant>(v);
  return c;
}

// Args: batch, variant.
void BM_Forward(benchmark::State& state) {
  const ModelConfig c = variant_config(static_cast<int>(state.range(1)));
  const BoundParams p = BoundParams::frozen(init_params(c, 1));
  const ag::Var x = ag::constant(rows(static_cast<std::size_t>(state.range(0)), 2));
  ag::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(forward(x, p, c).value()[0]);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->ArgsProduct({{1, 4, 32, 256}, {0, 1, 2}})->Unit(benchmark::kMicrosecond);

// Args: query rows, context rows.
void BM_ForwardWithContext(benchmark::State& state) {
  const ModelConfig c;
  const BoundParams p = BoundParams::frozen(init_params(c, 1));
  ag::NoGradGuard guard;
  const ContextState ctx = encode_context(rows(static_cast<std::size_t>(state.range(1)), 3), p, c);
  const ag::Var x = ag::constant(rows(static_cast<std::size_t>(state.range(0)), 2));
  for (auto _ : state) benchmark::DoNotOptimize(forward(x, p, c, &ctx).value()[0]);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardWithContext)->ArgsProduct({{1, 256}, {32, 202}})->Unit(benchmark::kMicrosecond);

// One optimiser step on a batch of 32: forward, backward, Adam.
void BM_TrainStep(benchmark::State& state) {
  const ModelConfig c = variant_config(static_cast<int>(state.range(0)));
  BoundParams p = BoundParams::trainable(init_params(c, 1));
  const ag::Var x = ag::constant(rows(32, 2));
  const Tensor target = rows(32, 3).reshaped(Shape{192, 1}).take_rows(std::vector<std::size_t>(32, 5));
  AdamState adam;
  TrainSpec spec;
  for (auto _ : state) {
    p.zero_grads();
    ag::Var loss = ag::mse_loss(forward(x, p, c), target);
    ag::backward(loss);
    adam_step(p, adam, spec);
  }
}
BENCHMARK(BM_TrainStep)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

}  // namespace
