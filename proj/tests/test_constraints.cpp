#include <doctest.h>

#include <cmath>
#include <vector>

#include "addose/constraints.hpp"
#include "addose/phantom.hpp"
#include "addose/rng.hpp"
#include "addose/tensor.hpp"
#include "fd_check.hpp"

using namespace addose;

TEST_CASE("hard-mode penalties reproduce the hand-derived oracles") {
  // Max dose 54 Gy over a 45 Gy limit: (54/45 - 1)^2 = 0.04.
  std::vector<double> field{10.0, 54.0, 30.0};
  CHECK(dmax_penalty(field, 45.0, PenaltyMode::kHard) ==
        doctest::Approx(0.04).epsilon(1e-12));
  // Satisfied limits cost nothing.
  CHECK(dmax_penalty(field, 54.0, PenaltyMode::kHard) == doctest::Approx(0.0));

  // V-threshold fraction 0.35 against a 0.30 limit: 0.05^2 = 0.0025.
  std::vector<double> vx(100, 10.0);
  for (int i = 0; i < 35; ++i) vx[i] = 25.0;
  CHECK(vx_penalty(vx, 20.0, 0.30, PenaltyMode::kHard) ==
        doctest::Approx(0.0025).epsilon(1e-12));
  CHECK(vx_penalty(vx, 20.0, 0.35, PenaltyMode::kHard) == doctest::Approx(0.0));

  // D95 = 54 Gy on a 60 Gy prescription: (1 - 54/57)^2.
  std::vector<double> ptv(100, 54.0);
  const double expect = std::pow(1.0 - 54.0 / (0.95 * 60.0), 2.0);
  CHECK(d95_penalty(ptv, 60.0) == doctest::Approx(expect).epsilon(1e-9));
  CHECK(d95_penalty(ptv, 60.0) == doctest::Approx(0.0027700831).epsilon(1e-6));
  CHECK(d95_penalty(std::vector<double>(100, 60.0), 60.0) == doctest::Approx(0.0));

  // Mean-dose penalty: mean 30 over limit 25 -> (30/25 - 1)^2.
  std::vector<double> mean_field(10, 30.0);
  CHECK(dmean_penalty(mean_field, 25.0) == doctest::Approx(0.04).epsilon(1e-12));
}

TEST_CASE("soft penalties approach hard penalties and stay differentiable") {
  std::vector<double> field{10.0, 54.0, 30.0};
  const double soft = dmax_penalty(field, 45.0, PenaltyMode::kSoft, 1.0);
  CHECK(soft == doctest::Approx(0.04).epsilon(0.1));
  CHECK(soft > 0.0);
}

TEST_CASE("soft constraint loss gradient matches finite differences on a 6^3 field") {
  const std::int64_t n = 6 * 6 * 6;
  Rng rng(61);
  std::vector<double> vals(n);
  for (auto& v : vals) v = rng.uniform(20.0, 70.0);
  Tensor dose = Tensor::from_data({n}, vals);

  StructureSet structures;
  std::vector<std::uint8_t> ptv(n, 0), cord(n, 0), lung(n, 0);
  for (std::int64_t i = 0; i < n; ++i) {
    if (i % 3 == 0) ptv[i] = 1;
    if (i % 5 == 1) cord[i] = 1;
    if (i % 2 == 1) lung[i] = 1;
  }
  structures.structures.push_back({"PTV", true, 60.0, ptv});
  structures.structures.push_back({"SpinalCord", false, 0.0, cord});
  structures.structures.push_back({"Total Lung-GTV", false, 0.0, lung});

  std::vector<ConstraintSpec> specs{
      {"PTV", ConstraintKind::kD95, 0.0, false, 0.95, 1.0},
      {"SpinalCord", ConstraintKind::kDmax, 45.0, false, 0.0, 1.0},
      {"Total Lung-GTV", ConstraintKind::kVx, 20.0, false, 0.30, 0.5},
      {"Total Lung-GTV", ConstraintKind::kDmean, 20.0, false, 0.0, 0.5},
  };
  const double err = addose::testing::fd_max_rel_err(
      dose, [&] { return cond_loss_soft(dose, structures, specs, 60.0); }, 1e-4);
  CHECK(err <= 1e-3);
}

TEST_CASE("compliant phantom has zero hard constraint loss") {
  const Case c = generate_phantom(desk_phantom_spec(Site::kLung, 0));
  std::vector<double> gy(c.dose->values.size());
  const double f = c.dose->scale.d3_gy * c.dose->scale.fixed_divisor;
  for (std::size_t i = 0; i < gy.size(); ++i) gy[i] = c.dose->values[i] * f;
  const auto loss = cond_loss(gy, c.structures, builtin_constraint_table(),
                              PenaltyMode::kHard, c.context.prescription_gy);
  CHECK(loss.total == doctest::Approx(0.0));
  bool any_active = false;
  for (const auto& t : loss.terms) any_active |= t.active;
  CHECK(any_active);
}

TEST_CASE("constraints for absent or empty structures are inactive") {
  StructureSet structures;
  structures.structures.push_back(
      {"PTV", true, 60.0, std::vector<std::uint8_t>(8, 1)});
  std::vector<ConstraintSpec> specs{
      {"BrainStem", ConstraintKind::kDmax, 54.0, false, 0.0, 1.0}};
  const auto loss = cond_loss(std::vector<double>(8, 60.0), structures, specs,
                              PenaltyMode::kHard, 60.0);
  CHECK(loss.total == doctest::Approx(0.0));
  REQUIRE(loss.terms.size() == 1);
  CHECK_FALSE(loss.terms[0].active);

  const auto report = compliance_report(std::vector<double>(8, 60.0), structures,
                                        specs, 60.0);
  CHECK(report.vacuous);
  CHECK(report.rate == doctest::Approx(1.0));
}

TEST_CASE("constraint tables parse rows, comments and relative thresholds") {
  const std::string text =
      "# comment line\n"
      "SpinalCord | Dmax | 45 | - | 1.0\n"
      "Total Lung-GTV | Vx | 20 | 0.30 | 0.5\n"
      "PTV | D95 | - | 0.95 | 1.0\n"
      "Ring1 | Dmax | 105%rx | - | 0.1\n";
  const auto specs = parse_constraint_table(text, "inline");
  REQUIRE(specs.size() == 4);
  CHECK(specs[0].structure == "SpinalCord");
  CHECK(specs[0].kind == ConstraintKind::kDmax);
  CHECK(specs[0].dose_gy == doctest::Approx(45.0));
  CHECK(specs[1].fraction == doctest::Approx(0.30));
  CHECK(specs[2].kind == ConstraintKind::kD95);
  CHECK(specs[3].dose_is_rx_fraction);
  CHECK(specs[3].dose_gy == doctest::Approx(1.05));

  CHECK_THROWS_WITH_AS(parse_constraint_table("Cord | Dwrong | 1 | - | 1\n", "f"),
                       doctest::Contains("f:1"), std::runtime_error);
  CHECK_THROWS(parse_constraint_table("Cord | Vx | 20 | 1.5 | 1\n", "f"));
}

TEST_CASE("built-in catalog covers both sites with sane weights") {
  const auto& table = builtin_constraint_table();
  CHECK(table.size() >= 40);
  bool cord = false, ptv = false, lung_v20 = false, brainstem = false;
  for (const auto& s : table) {
    if (s.structure == "SpinalCord" && s.kind == ConstraintKind::kDmax) {
      cord = true;
      CHECK(s.dose_gy == doctest::Approx(45.0));
      CHECK(s.weight == doctest::Approx(1.0));
    }
    if (s.structure == "PTV" && s.kind == ConstraintKind::kD95) {
      ptv = true;
      CHECK(s.fraction == doctest::Approx(0.95));
    }
    if (s.structure == "Total Lung-GTV" && s.kind == ConstraintKind::kVx &&
        s.dose_gy == 20.0) {
      lung_v20 = true;
      CHECK(s.fraction == doctest::Approx(0.30));
    }
    if (s.structure == "BrainStem") brainstem = true;
  }
  CHECK(cord);
  CHECK(ptv);
  CHECK(lung_v20);
  CHECK(brainstem);
}
