#include <benchmark/benchmark.h>

#include "ca3/evaluation.hpp"
#include "ca3/networks.hpp"
#include "ca3/ops.hpp"

using namespace ca3;

namespace {

Tensor uniform(Rng& rng, Shape shape, bool requires_grad = false) {
  std::vector<float> v(numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

void BM_Conv2dForward(benchmark::State& state) {
  Rng rng(0);
  const auto batch = static_cast<std::size_t>(state.range(0));
  const Tensor x = uniform(rng, {batch, 16, 13, 13});
  const Tensor w = uniform(rng, {32, 16, 3, 3});
  const Tensor b = uniform(rng, {32});
  for (auto _ : state) {
    Tape tape(Tape::Mode::inference);
    benchmark::DoNotOptimize(ops::conv2d(tape, x, w, b, {2, 0, 0}));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_Conv2dForward)->Arg(1)->Arg(64);

void BM_Conv2dBackward(benchmark::State& state) {
  Rng rng(1);
  const Tensor x = uniform(rng, {64, 16, 13, 13}, true);
  const Tensor w = uniform(rng, {32, 16, 3, 3}, true);
  const Tensor b = uniform(rng, {32}, true);
  for (auto _ : state) {
    Tape tape;
    tape.backward(ops::sum(tape, ops::conv2d(tape, x, w, b, {2, 0, 0})));
  }
}
BENCHMARK(BM_Conv2dBackward);

void BM_ConvTranspose2dForward(benchmark::State& state) {
  Rng rng(2);
  const Tensor x = uniform(rng, {64, 32, 6, 6});
  const Tensor w = uniform(rng, {32, 16, 3, 3});
  const Tensor b = uniform(rng, {16});
  for (auto _ : state) {
    Tape tape(Tape::Mode::inference);
    benchmark::DoNotOptimize(ops::conv_transpose2d(tape, x, w, b, {2, 0, 0}));
  }
}
BENCHMARK(BM_ConvTranspose2dForward);

void BM_TrainStepImage(benchmark::State& state) {
  const ModelBundle bundle = ModelBundle::build(TargetConfig::image(1, 28, 28), AlarmConfig{}, 0);
  Rng rng(3);
  const Tensor x = uniform(rng, {64, 1, 28, 28});
  for (auto _ : state) {
    Tape tape;
    const TargetOutput out = bundle.forward_with_taps(tape, x);
    const Tensor p = bundle.alarm_forward(tape, stack_activations(tape, out.activations));
    tape.backward(ops::add(tape, ops::mse(tape, x, out.reconstruction), ops::mean(tape, p)));
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_TrainStepImage)->Unit(benchmark::kMillisecond);

void BM_RocAuc(benchmark::State& state) {
  Rng rng(4);
  ScoreSet s;
  for (std::int64_t i = 0; i < state.range(0); ++i) {
    s.scores.push_back(static_cast<float>(rng.uniform()));
    s.labels.push_back(rng.uniform() < 0.1 ? 1 : 0);
  }
  s.labels[0] = 1;
  s.labels[1] = 0;
  for (auto _ : state) benchmark::DoNotOptimize(roc_auc(s));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_RocAuc)->Range(1 << 8, 1 << 16)->Complexity(benchmark::oNLogN);

}  // namespace
BENCHMARK_MAIN();
