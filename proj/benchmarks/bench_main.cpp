#include <benchmark/benchmark.h>

#include <vector>

#include "forec/dataset.hpp"
#include "forec/net.hpp"
#include "forec/ops.hpp"
#include "forec/rng.hpp"
#include "forec/tensor.hpp"
#include "forec/trainer.hpp"

using namespace forec;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, float lo = -1.f, float hi = 1.f) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (float& v : t.data) v = rng.uniform_f(lo, hi);
  return t;
}

// The decoder workhorse: 3x3 same-size conv at batch 4.
void BM_Conv2dForward(benchmark::State& state) {
  int c = int(state.range(0));
  Rng rng(1);
  Tensor in = random_tensor({4, c, 32, 32}, rng);
  Tensor w = random_tensor({c, c, 3, 3}, rng, -0.3f, 0.3f);
  Tensor b = random_tensor({c}, rng, -0.1f, 0.1f);
  for (auto _ : state) {
    Tensor out = ops::conv2d_forward(in, w, &b, 1, 1);
    benchmark::DoNotOptimize(out.data.data());
  }
  state.SetItemsProcessed(state.iterations() * in.numel());
}
BENCHMARK(BM_Conv2dForward)->Arg(16)->Arg(32);

void BM_Conv2dBackward(benchmark::State& state) {
  int c = int(state.range(0));
  Rng rng(2);
  Tensor in = random_tensor({4, c, 32, 32}, rng);
  Tensor w = random_tensor({c, c, 3, 3}, rng, -0.3f, 0.3f);
  Tensor dout = random_tensor({4, c, 32, 32}, rng);
  for (auto _ : state) {
    Tensor din = Tensor::zeros(in.shape);
    Tensor dw = Tensor::zeros(w.shape);
    Tensor db = Tensor::zeros({c});
    ops::conv2d_backward(in, w, 1, 1, dout, &din, &dw, &db);
    benchmark::DoNotOptimize(din.data.data());
  }
  state.SetItemsProcessed(state.iterations() * in.numel());
}
BENCHMARK(BM_Conv2dBackward)->Arg(16)->Arg(32);

// Teacher inference on one evaluation batch at the default geometry.
void BM_ForwardSeg(benchmark::State& state) {
  net::NetworkConfig cfg;
  net::Network teacher = net::build(cfg, 3).teacher;
  Rng rng(4);
  Tensor batch = random_tensor({4, 3, 64, 64}, rng, 0.f, 1.f);
  for (auto _ : state) {
    Tensor logits = net::forward_seg(teacher, batch);
    benchmark::DoNotOptimize(logits.data.data());
  }
}
BENCHMARK(BM_ForwardSeg);

Trainer make_trainer(TrainMode mode) {
  Dataset ds = gen_shapes(24, 64, 64, 3, 9);
  ds.val_count = 4;
  TrainConfig cfg;
  cfg.mode = mode;
  cfg.labeled_fraction = 0.25;
  cfg.epochs = 1;
  return Trainer(cfg, std::move(ds));
}

void BM_TrainStepForec(benchmark::State& state) {
  Trainer tr = make_trainer(TrainMode::Forec);
  for (auto _ : state) {
    StepLosses losses = tr.step();
    benchmark::DoNotOptimize(losses.total);
  }
}
BENCHMARK(BM_TrainStepForec)->Unit(benchmark::kMillisecond);

void BM_TrainStepSupervised(benchmark::State& state) {
  Trainer tr = make_trainer(TrainMode::Supervised);
  for (auto _ : state) {
    StepLosses losses = tr.step();
    benchmark::DoNotOptimize(losses.total);
  }
}
BENCHMARK(BM_TrainStepSupervised)->Unit(benchmark::kMillisecond);

void BM_EvaluateVal(benchmark::State& state) {
  Trainer tr = make_trainer(TrainMode::Baseline);
  for (auto _ : state) {
    double miou = tr.evaluate();
    benchmark::DoNotOptimize(miou);
  }
}
BENCHMARK(BM_EvaluateVal)->Unit(benchmark::kMillisecond);

void BM_GenShapes(benchmark::State& state) {
  uint64_t seed = 1;
  for (auto _ : state) {
    Dataset ds = gen_shapes(8, 64, 64, 3, seed++);
    benchmark::DoNotOptimize(ds.samples.data());
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_GenShapes);

}  // namespace

BENCHMARK_MAIN();
