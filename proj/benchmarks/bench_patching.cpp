#include <benchmark/benchmark.h>

#include <vector>

#include "addose/patching.hpp"
#include "addose/rng.hpp"

using namespace addose;

static void BM_PlanPatches(benchmark::State& state) {
  for (auto _ : state) {
    auto grid = plan_patches({96, 128, 144}, {32, 32, 24}, {8, 8, 8});
    benchmark::DoNotOptimize(grid.patch_count());
  }
}
BENCHMARK(BM_PlanPatches);

static void BM_ExtractMerge(benchmark::State& state) {
  Rng rng(7);
  std::vector<float> vol(96 * 128 * 144);
  for (auto& v : vol) v = static_cast<float>(rng.uniform(-2.0, 2.0));
  const auto grid = plan_patches({96, 128, 144}, {32, 32, 24}, {8, 8, 8});
  for (auto _ : state) {
    auto merged = merge(extract(vol, grid), grid);
    benchmark::DoNotOptimize(merged.data());
  }
}
BENCHMARK(BM_ExtractMerge);
