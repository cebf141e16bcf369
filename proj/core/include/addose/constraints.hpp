#pragma once

#include <string>
#include <vector>

#include "addose/tensor.hpp"
#include "addose/volumes.hpp"

namespace addose {

enum class ConstraintKind { kDmax, kDmean, kVx, kDx, kD95 };

std::string to_string(ConstraintKind k);

// One clinical rule. For Dmax/Dmean, dose_gy is the threshold. For Vx,
// dose_gy is the level x and fraction is the volume limit. For Dx,
// fraction is the hottest-volume fraction and dose_gy the threshold. For
// D95, fraction is the coverage factor (0.95) and the threshold is the
// structure's prescription.
struct ConstraintSpec {
  std::string structure;
  ConstraintKind kind = ConstraintKind::kDmax;
  double dose_gy = 0.0;
  bool dose_is_rx_fraction = false;  // threshold = dose_gy * prescription
  double fraction = 0.0;
  double weight = 1.0;
};

enum class PenaltyMode { kHard, kSoft };

// Relative-excess-squared penalties over the masked Gy dose values.
// Soft Dmax replaces the max with a temperature-tau log-sum-exp; soft Vx
// replaces the indicator with sigmoid((d - x)/tau).
double dmax_penalty(const std::vector<double>& masked_gy, double threshold_gy,
                    PenaltyMode mode, double tau_gy = 1.0);
double dmean_penalty(const std::vector<double>& masked_gy, double threshold_gy);
double vx_penalty(const std::vector<double>& masked_gy, double x_gy, double limit,
                  PenaltyMode mode, double tau_gy = 0.5);
double dx_penalty(const std::vector<double>& masked_gy, double hottest_fraction,
                  double threshold_gy);
double d95_penalty(const std::vector<double>& ptv_gy, double prescription_gy);

struct ConstraintTerm {
  ConstraintSpec spec;
  bool active = false;
  double penalty = 0.0;           // unweighted
  double achieved = 0.0;          // hard-mode achieved value
  double limit = 0.0;             // resolved limit in achieved's units
  bool satisfied = true;
};

struct CondLoss {
  double total = 0.0;  // weighted sum over active terms
  std::vector<ConstraintTerm> terms;
};

// dose_gy is the full-grid dose in Gy; constraints whose structure is
// absent or empty are inactive and contribute 0.
CondLoss cond_loss(const std::vector<double>& dose_gy, const StructureSet& structures,
                   const std::vector<ConstraintSpec>& specs, PenaltyMode mode,
                   double default_prescription_gy);

// Autograd counterpart in soft mode, for training.
Tensor cond_loss_soft(const Tensor& dose_gy, const StructureSet& structures,
                      const std::vector<ConstraintSpec>& specs,
                      double default_prescription_gy);

struct ComplianceEntry {
  std::string structure;
  std::string kind;
  double achieved = 0.0;
  double limit = 0.0;
  bool passed = false;
  double margin = 0.0;  // positive when satisfied
};

struct ComplianceReport {
  std::vector<ComplianceEntry> entries;
  std::int64_t evaluated = 0;
  std::int64_t passed = 0;
  double rate = 1.0;   // passed/evaluated; 1.0 when nothing is active
  bool vacuous = false;  // no active constraints
};

ComplianceReport compliance_report(const std::vector<double>& dose_gy,
                                   const StructureSet& structures,
                                   const std::vector<ConstraintSpec>& specs,
                                   double default_prescription_gy);

// Table file: UTF-8 lines "structure | kind | dose_gy | fraction | weight"
// with '-' for unused fields; dose_gy accepts "<pct>%rx" for thresholds
// relative to the prescription. '#' starts a comment.
std::vector<ConstraintSpec> parse_constraint_table(const std::string& text,
                                                   const std::string& origin);
std::vector<ConstraintSpec> load_constraint_table(const std::string& path);

// Built-in default catalog (lung + head-neck OAR limits, PTV coverage and
// auxiliary ring rules).
const std::vector<ConstraintSpec>& builtin_constraint_table();

}  // namespace addose
