#include <benchmark/benchmark.h>

#include <vector>

#include "addose/constraints.hpp"
#include "addose/evaluation.hpp"
#include "addose/phantom.hpp"
#include "addose/rng.hpp"

using namespace addose;

namespace {

std::vector<double> dose_gy(const Case& c) {
  std::vector<double> gy(c.dose->values.size());
  const double f = c.dose->scale.d3_gy * c.dose->scale.fixed_divisor;
  for (std::size_t i = 0; i < gy.size(); ++i) gy[i] = c.dose->values[i] * f;
  return gy;
}

}  // namespace

static void BM_DvhCurve(benchmark::State& state) {
  const Case c = generate_phantom(desk_phantom_spec(Site::kLung, 0));
  const auto gy = dose_gy(c);
  const auto* ptv = c.structures.find("PTV");
  for (auto _ : state) {
    auto curve = dvh(gy, ptv->mask, "PTV", 0.1);
    benchmark::DoNotOptimize(curve.edges_gy.data());
  }
}
BENCHMARK(BM_DvhCurve);

static void BM_ComplianceReport(benchmark::State& state) {
  const Case c = generate_phantom(desk_phantom_spec(Site::kLung, 0));
  const auto gy = dose_gy(c);
  const auto table = builtin_constraint_table();
  for (auto _ : state) {
    auto report =
        compliance_report(gy, c.structures, table, c.context.prescription_gy);
    benchmark::DoNotOptimize(report.rate);
  }
}
BENCHMARK(BM_ComplianceReport);

static void BM_EvaluateCase(benchmark::State& state) {
  const Case c = generate_phantom(desk_phantom_spec(Site::kLung, 0));
  const auto table = builtin_constraint_table();
  for (auto _ : state) {
    auto report = evaluate_case(c, c, table);
    benchmark::DoNotOptimize(report.mae_normalized);
  }
}
BENCHMARK(BM_EvaluateCase);
