#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "addose/constraints.hpp"
#include "addose/volumes.hpp"

namespace addose {

// Cumulative DVH: fraction of the structure receiving at least each edge.
struct DVHCurve {
  std::string structure;
  std::vector<double> edges_gy;
  std::vector<double> volume_fraction;  // monotone non-increasing, starts at 1
};

// Mean |pred - ref| over the body, in normalized dose units.
double mae(const std::vector<float>& pred, const std::vector<float>& ref,
           const std::vector<std::uint8_t>& body_mask);

struct DiceResult {
  std::vector<double> levels;     // fractions of prescription
  std::vector<double> per_level;  // both-empty level counts as 1
  double mean = 0.0;
};
DiceResult dice_isodose(const std::vector<double>& pred_gy,
                        const std::vector<double>& ref_gy, double prescription_gy,
                        const std::vector<double>& levels = {0.1, 0.3, 0.5, 0.7,
                                                             0.9});

// 95th-percentile symmetric surface distance between the level*prescription
// isodose regions; surfaces use 6-connectivity, distances respect spacing.
// Empty surface on either side -> nullopt.
std::optional<double> hd95(const std::vector<double>& pred_gy,
                           const std::vector<double>& ref_gy,
                           double prescription_gy, double level, const Grid& grid);

DVHCurve dvh(const std::vector<double>& dose_gy, const std::vector<std::uint8_t>& mask,
             const std::string& structure, double bin_width_gy = 0.1);

enum class DvhKind { kDx, kVx, kDmax, kDmean };
// Dx: x in percent of volume; Vx: x in Gy, returns a fraction.
double dvh_metric(const std::vector<double>& dose_gy,
                  const std::vector<std::uint8_t>& mask, DvhKind kind, double x = 0);

// (D2 - D98) / D50; nullopt when D50 == 0.
std::optional<double> hi(const std::vector<double>& dose_gy,
                         const std::vector<std::uint8_t>& ptv);
// Paddick conformity: |TV inter PIV|^2 / (|TV| |PIV|); nullopt when the
// prescription isodose volume is empty.
std::optional<double> ci(const std::vector<double>& dose_gy,
                         const std::vector<std::uint8_t>& ptv,
                         double prescription_gy);

struct PtvReport {
  std::string name;
  double d98 = 0, d2 = 0, d95 = 0, dmax = 0, dmean = 0;
  std::optional<double> hi, ci;
};

struct DeltaEntry {
  std::string label;  // e.g. "dHI", "dV20 Total Lung-GTV"
  double value = 0.0;  // |pred - ref|
};

struct CaseReport {
  std::string case_id;
  double mae_normalized = 0.0;
  DiceResult dice;
  std::optional<double> hd95_mm;
  std::vector<PtvReport> ptvs;
  std::vector<DeltaEntry> deltas;
  double compliance_rate = 1.0;
  double reference_compliance_rate = 1.0;
};

CaseReport evaluate_case(const Case& pred, const Case& ref,
                         const std::vector<ConstraintSpec>& specs);

// Delimited-text report plus one DVH CSV (dose_gy, volume_fraction) per
// structure of the prediction, written into out_dir.
void write_case_report(const CaseReport& report, const Case& pred,
                       const std::string& out_dir);

}  // namespace addose
