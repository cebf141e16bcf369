#include "addose/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "addose/stats.hpp"

namespace addose {

namespace {

std::vector<std::uint8_t> binarize(const std::vector<double>& gy, double threshold) {
  std::vector<std::uint8_t> out(gy.size());
  for (std::size_t i = 0; i < gy.size(); ++i) out[i] = gy[i] >= threshold ? 1 : 0;
  return out;
}

std::vector<double> masked(const std::vector<double>& v,
                           const std::vector<std::uint8_t>& mask) {
  std::vector<double> out;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out.push_back(v[i]);
  return out;
}

// Region voxels with a 6-neighbor outside the region (volume borders count
// as outside).
std::vector<std::array<std::int64_t, 3>> surface_voxels(
    const std::vector<std::uint8_t>& region, const Grid& grid) {
  const auto& sh = grid.shape;
  auto at = [&](std::int64_t z, std::int64_t y, std::int64_t x) -> bool {
    if (z < 0 || y < 0 || x < 0 || z >= sh[0] || y >= sh[1] || x >= sh[2])
      return false;
    return region[static_cast<std::size_t>((z * sh[1] + y) * sh[2] + x)] != 0;
  };
  std::vector<std::array<std::int64_t, 3>> out;
  for (std::int64_t z = 0; z < sh[0]; ++z)
    for (std::int64_t y = 0; y < sh[1]; ++y)
      for (std::int64_t x = 0; x < sh[2]; ++x) {
        if (!at(z, y, x)) continue;
        if (!at(z - 1, y, x) || !at(z + 1, y, x) || !at(z, y - 1, x) ||
            !at(z, y + 1, x) || !at(z, y, x - 1) || !at(z, y, x + 1))
          out.push_back({z, y, x});
      }
  return out;
}

double directed_hd95(const std::vector<std::array<std::int64_t, 3>>& from,
                     const std::vector<std::array<std::int64_t, 3>>& to,
                     const std::array<double, 3>& sp) {
  std::vector<double> dists(from.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(from.size()); ++i) {
    const auto& a = from[static_cast<std::size_t>(i)];
    double best = std::numeric_limits<double>::infinity();
    for (const auto& b : to) {
      const double dz = static_cast<double>(a[0] - b[0]) * sp[0];
      const double dy = static_cast<double>(a[1] - b[1]) * sp[1];
      const double dx = static_cast<double>(a[2] - b[2]) * sp[2];
      best = std::min(best, dz * dz + dy * dy + dx * dx);
    }
    dists[static_cast<std::size_t>(i)] = std::sqrt(best);
  }
  // 95th percentile counted from the smallest = hottest-5% order statistic
  return percentile_hottest(dists, 0.05);
}

}  // namespace

double mae(const std::vector<float>& pred, const std::vector<float>& ref,
           const std::vector<std::uint8_t>& body_mask) {
  if (pred.size() != ref.size() || pred.size() != body_mask.size())
    throw std::invalid_argument("mae: size mismatch");
  double sum = 0;
  std::int64_t count = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (body_mask[i]) {
      sum += std::abs(static_cast<double>(pred[i]) - static_cast<double>(ref[i]));
      ++count;
    }
  if (count == 0) throw std::invalid_argument("mae: empty body mask");
  return sum / static_cast<double>(count);
}

DiceResult dice_isodose(const std::vector<double>& pred_gy,
                        const std::vector<double>& ref_gy, double prescription_gy,
                        const std::vector<double>& levels) {
  if (pred_gy.size() != ref_gy.size())
    throw std::invalid_argument("dice: size mismatch");
  DiceResult r;
  r.levels = levels;
  for (double level : levels) {
    const double thr = level * prescription_gy;
    std::int64_t a = 0, b = 0, inter = 0;
    for (std::size_t i = 0; i < pred_gy.size(); ++i) {
      const bool pa = pred_gy[i] >= thr;
      const bool pb = ref_gy[i] >= thr;
      a += pa;
      b += pb;
      inter += pa && pb;
    }
    const double dice = (a + b) == 0
                            ? 1.0
                            : 2.0 * static_cast<double>(inter) /
                                  static_cast<double>(a + b);
    r.per_level.push_back(dice);
    r.mean += dice / static_cast<double>(levels.size());
  }
  return r;
}

std::optional<double> hd95(const std::vector<double>& pred_gy,
                           const std::vector<double>& ref_gy,
                           double prescription_gy, double level, const Grid& grid) {
  if (static_cast<std::int64_t>(pred_gy.size()) != grid.voxels() ||
      pred_gy.size() != ref_gy.size())
    throw std::invalid_argument("hd95: size mismatch");
  const double thr = level * prescription_gy;
  const auto sa = surface_voxels(binarize(pred_gy, thr), grid);
  const auto sb = surface_voxels(binarize(ref_gy, thr), grid);
  if (sa.empty() || sb.empty()) return std::nullopt;
  return std::max(directed_hd95(sa, sb, grid.spacing_mm),
                  directed_hd95(sb, sa, grid.spacing_mm));
}

DVHCurve dvh(const std::vector<double>& dose_gy, const std::vector<std::uint8_t>& mask,
             const std::string& structure, double bin_width_gy) {
  if (bin_width_gy <= 0) throw std::invalid_argument("dvh: bin width must be > 0");
  const auto vals = masked(dose_gy, mask);
  if (vals.empty()) throw std::invalid_argument("dvh: empty mask for " + structure);
  const double dmax = max_of(vals);
  const auto nbins = static_cast<std::int64_t>(std::floor(dmax / bin_width_gy)) + 2;
  DVHCurve curve;
  curve.structure = structure;
  for (std::int64_t k = 0; k < nbins; ++k) {
    const double edge = static_cast<double>(k) * bin_width_gy;
    curve.edges_gy.push_back(edge);
    curve.volume_fraction.push_back(fraction_at_least(vals, edge));
  }
  return curve;
}

double dvh_metric(const std::vector<double>& dose_gy,
                  const std::vector<std::uint8_t>& mask, DvhKind kind, double x) {
  const auto vals = masked(dose_gy, mask);
  if (vals.empty()) throw std::invalid_argument("dvh_metric: empty mask");
  switch (kind) {
    case DvhKind::kDx: return dose_at_hottest_percent(vals, x);
    case DvhKind::kVx: return fraction_at_least(vals, x);
    case DvhKind::kDmax: return max_of(vals);
    case DvhKind::kDmean: return mean_of(vals);
  }
  throw std::logic_error("unknown dvh metric kind");
}

std::optional<double> hi(const std::vector<double>& dose_gy,
                         const std::vector<std::uint8_t>& ptv) {
  const auto vals = masked(dose_gy, ptv);
  if (vals.empty()) throw std::invalid_argument("hi: empty PTV");
  const double d50 = dose_at_hottest_percent(vals, 50.0);
  if (d50 == 0.0) return std::nullopt;
  return (dose_at_hottest_percent(vals, 2.0) - dose_at_hottest_percent(vals, 98.0)) /
         d50;
}

std::optional<double> ci(const std::vector<double>& dose_gy,
                         const std::vector<std::uint8_t>& ptv,
                         double prescription_gy) {
  std::int64_t tv = 0, piv = 0, inter = 0;
  for (std::size_t i = 0; i < dose_gy.size(); ++i) {
    const bool in_tv = ptv[i] != 0;
    const bool in_piv = dose_gy[i] >= prescription_gy;
    tv += in_tv;
    piv += in_piv;
    inter += in_tv && in_piv;
  }
  if (tv == 0) throw std::invalid_argument("ci: empty PTV");
  if (piv == 0) return std::nullopt;
  return static_cast<double>(inter) * static_cast<double>(inter) /
         (static_cast<double>(tv) * static_cast<double>(piv));
}

namespace {

std::vector<double> to_gy(const DoseVolume& d) {
  const auto gy = denormalize_dose(d.values, d.scale);
  return std::vector<double>(gy.begin(), gy.end());
}

std::vector<std::uint8_t> body_mask_of(const Case& c) {
  if (const Structure* body = c.structures.find("Body")) return body->mask;
  std::vector<std::uint8_t> mask(c.ct.values.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = c.ct.values[i] > -1.5f ? 1 : 0;  // normalized air is -2
  return mask;
}

double delta_metric(const std::vector<double>& pred_gy,
                    const std::vector<double>& ref_gy, const Structure* s,
                    DvhKind kind, double x) {
  if (s == nullptr) return 0.0;
  return std::abs(dvh_metric(pred_gy, s->mask, kind, x) -
                  dvh_metric(ref_gy, s->mask, kind, x));
}

}  // namespace

CaseReport evaluate_case(const Case& pred, const Case& ref,
                         const std::vector<ConstraintSpec>& specs) {
  if (pred.grid() != ref.grid()) {
    auto shape_str = [](const Grid& g) {
      return std::to_string(g.shape[0]) + "x" + std::to_string(g.shape[1]) + "x" +
             std::to_string(g.shape[2]);
    };
    throw std::invalid_argument("evaluate_case: grid mismatch, prediction " +
                                shape_str(pred.grid()) + " vs reference " +
                                shape_str(ref.grid()));
  }
  if (!pred.dose || !ref.dose)
    throw std::invalid_argument("evaluate_case: both cases need a dose volume");

  CaseReport report;
  report.case_id = pred.id;

  const auto pred_gy = to_gy(*pred.dose);
  const auto ref_gy = to_gy(*ref.dose);
  const double rx = ref.context.prescription_gy;

  // Shared normalization for MAE: the reference scale.
  const double denom = ref.dose->scale.d3_gy * ref.dose->scale.fixed_divisor;
  std::vector<float> pred_norm(pred_gy.size()), ref_norm(ref_gy.size());
  for (std::size_t i = 0; i < pred_gy.size(); ++i) {
    pred_norm[i] = static_cast<float>(pred_gy[i] / denom);
    ref_norm[i] = static_cast<float>(ref_gy[i] / denom);
  }
  report.mae_normalized = mae(pred_norm, ref_norm, body_mask_of(ref));

  report.dice = dice_isodose(pred_gy, ref_gy, rx);
  report.hd95_mm = hd95(pred_gy, ref_gy, rx, 0.5, ref.grid());

  for (const Structure* ptv : ref.structures.ptvs()) {
    PtvReport pr;
    pr.name = ptv->name;
    pr.d98 = dvh_metric(pred_gy, ptv->mask, DvhKind::kDx, 98.0);
    pr.d2 = dvh_metric(pred_gy, ptv->mask, DvhKind::kDx, 2.0);
    pr.d95 = dvh_metric(pred_gy, ptv->mask, DvhKind::kDx, 95.0);
    pr.dmax = dvh_metric(pred_gy, ptv->mask, DvhKind::kDmax, 0);
    pr.dmean = dvh_metric(pred_gy, ptv->mask, DvhKind::kDmean, 0);
    pr.hi = hi(pred_gy, ptv->mask);
    pr.ci = ci(pred_gy, ptv->mask, ptv->prescription_gy);
    report.ptvs.push_back(std::move(pr));
  }

  // Table-style delta columns, site dependent.
  const auto ptvs = ref.structures.ptvs();
  if (!ptvs.empty()) {
    const Structure* ptv = ptvs[0];
    const auto hi_p = hi(pred_gy, ptv->mask);
    const auto hi_r = hi(ref_gy, ptv->mask);
    report.deltas.push_back(
        {"dHI", hi_p && hi_r ? std::abs(*hi_p - *hi_r) : 0.0});
    report.deltas.push_back(
        {"dD98", delta_metric(pred_gy, ref_gy, ptv, DvhKind::kDx, 98.0)});
    report.deltas.push_back(
        {"dD2", delta_metric(pred_gy, ref_gy, ptv, DvhKind::kDx, 2.0)});
    report.deltas.push_back(
        {"dDmax", delta_metric(pred_gy, ref_gy, ptv, DvhKind::kDmax, 0)});
  }
  if (ref.context.site == Site::kLung) {
    report.deltas.push_back(
        {"dV20 Total Lung-GTV",
         delta_metric(pred_gy, ref_gy, ref.structures.find("Total Lung-GTV"),
                      DvhKind::kVx, 20.0)});
    report.deltas.push_back(
        {"dV30 Heart", delta_metric(pred_gy, ref_gy, ref.structures.find("Heart"),
                                    DvhKind::kVx, 30.0)});
    report.deltas.push_back(
        {"dDmax SpinalCord",
         delta_metric(pred_gy, ref_gy, ref.structures.find("SpinalCord"),
                      DvhKind::kDmax, 0)});
    report.deltas.push_back(
        {"dV30 Esophagus",
         delta_metric(pred_gy, ref_gy, ref.structures.find("Esophagus"),
                      DvhKind::kVx, 30.0)});
  } else {
    report.deltas.push_back(
        {"dDmax SpinalCord",
         delta_metric(pred_gy, ref_gy, ref.structures.find("SpinalCord"),
                      DvhKind::kDmax, 0)});
    report.deltas.push_back(
        {"dDmax BrainStem",
         delta_metric(pred_gy, ref_gy, ref.structures.find("BrainStem"),
                      DvhKind::kDmax, 0)});
    report.deltas.push_back(
        {"dDmean ParotidIps-PTV",
         delta_metric(pred_gy, ref_gy, ref.structures.find("ParotidIps-PTV"),
                      DvhKind::kDmean, 0)});
    report.deltas.push_back(
        {"dDmean ParotidCon-PTV",
         delta_metric(pred_gy, ref_gy, ref.structures.find("ParotidCon-PTV"),
                      DvhKind::kDmean, 0)});
  }

  report.compliance_rate =
      compliance_report(pred_gy, ref.structures, specs, rx).rate;
  report.reference_compliance_rate =
      compliance_report(ref_gy, ref.structures, specs, rx).rate;
  return report;
}

void write_case_report(const CaseReport& report, const Case& pred,
                       const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  std::ofstream out(out_dir + "/report.tsv");
  if (!out) throw std::runtime_error("cannot write report in " + out_dir);
  out << "case\t" << report.case_id << "\n";
  out << "mae_normalized\t" << report.mae_normalized << "\n";
  for (std::size_t i = 0; i < report.dice.levels.size(); ++i)
    out << "dice_" << report.dice.levels[i] << "\t" << report.dice.per_level[i]
        << "\n";
  out << "dice_mean\t" << report.dice.mean << "\n";
  out << "hd95_mm\t";
  if (report.hd95_mm) out << *report.hd95_mm;
  else out << "undefined";
  out << "\n";
  for (const auto& p : report.ptvs) {
    out << p.name << ".D98\t" << p.d98 << "\n";
    out << p.name << ".D2\t" << p.d2 << "\n";
    out << p.name << ".D95\t" << p.d95 << "\n";
    out << p.name << ".Dmax\t" << p.dmax << "\n";
    out << p.name << ".Dmean\t" << p.dmean << "\n";
    out << p.name << ".HI\t";
    if (p.hi) out << *p.hi;
    else out << "undefined";
    out << "\n";
    out << p.name << ".CI\t";
    if (p.ci) out << *p.ci;
    else out << "undefined";
    out << "\n";
  }
  for (const auto& d : report.deltas) out << d.label << "\t" << d.value << "\n";
  out << "compliance_rate\t" << report.compliance_rate << "\n";
  out << "reference_compliance_rate\t" << report.reference_compliance_rate << "\n";

  if (pred.dose) {
    const auto gy_f = denormalize_dose(pred.dose->values, pred.dose->scale);
    const std::vector<double> gy(gy_f.begin(), gy_f.end());
    for (const auto& s : pred.structures.structures) {
      bool empty = true;
      for (auto m : s.mask)
        if (m) {
          empty = false;
          break;
        }
      if (empty) continue;
      std::string fname = s.name;
      for (auto& ch : fname)
        if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
      const DVHCurve curve = dvh(gy, s.mask, s.name);
      std::ofstream csv(out_dir + "/dvh_" + fname + ".csv");
      csv << "dose_gy,volume_fraction\n";
      for (std::size_t i = 0; i < curve.edges_gy.size(); ++i)
        csv << curve.edges_gy[i] << "," << curve.volume_fraction[i] << "\n";
    }
  }
}

}  // namespace addose
