#include <benchmark/benchmark.h>

#include "addose/rng.hpp"
#include "addose/tensor.hpp"
#include "addose/vae.hpp"

using namespace addose;

static void BM_Conv3dForward(benchmark::State& state) {
  Rng rng(1);
  const std::int64_t c = state.range(0);
  Tensor x = Tensor::randn({1, c, 16, 16, 16}, rng);
  Tensor w = Tensor::randn({c, c, 3, 3, 3}, rng);
  Tensor b = Tensor::randn({c}, rng);
  for (auto _ : state) {
    Tensor y = ops::conv3d(x, w, b, 1, 1);
    benchmark::DoNotOptimize(y.data().data());
  }
}
BENCHMARK(BM_Conv3dForward)->Arg(8)->Arg(16)->Arg(32);

static void BM_Conv3dBackward(benchmark::State& state) {
  Rng rng(2);
  const std::int64_t c = state.range(0);
  for (auto _ : state) {
    Tensor x = Tensor::randn({1, c, 16, 16, 16}, rng);
    Tensor w = Tensor::randn({c, c, 3, 3, 3}, rng);
    Tensor b = Tensor::randn({c}, rng);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    Tensor loss = ops::mean(ops::square(ops::conv3d(x, w, b, 1, 1)));
    loss.backward();
    benchmark::DoNotOptimize(w.grad().data());
  }
}
BENCHMARK(BM_Conv3dBackward)->Arg(8)->Arg(16);

static void BM_DeskVaeEncode(benchmark::State& state) {
  Rng rng(3);
  Vae3d vae(VaeConfig::desk(), rng);
  Tensor x = Tensor::randn({1, 1, 32, 32, 32}, rng);
  for (auto _ : state) {
    auto enc = vae.encode(x, Modality::kCt);
    benchmark::DoNotOptimize(enc.mu.data().data());
  }
}
BENCHMARK(BM_DeskVaeEncode);

BENCHMARK_MAIN();
