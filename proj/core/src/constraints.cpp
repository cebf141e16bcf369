#include "addose/constraints.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "addose/stats.hpp"

namespace addose {

namespace {

double sq(double x) { return x * x; }

double relative_excess_sq(double achieved, double threshold) {
  if (threshold <= 0.0) throw std::invalid_argument("constraint threshold must be > 0");
  return sq(std::max(0.0, achieved / threshold - 1.0));
}

// Stable tau * log(sum exp(x/tau)).
double logsumexp_tau_d(const std::vector<double>& v, double tau) {
  const double m = max_of(v);
  double s = 0.0;
  for (double x : v) s += std::exp((x - m) / tau);
  return m + tau * std::log(s);
}

double soft_fraction_at_least(const std::vector<double>& v, double x, double tau) {
  double s = 0.0;
  for (double d : v) s += 1.0 / (1.0 + std::exp(-(d - x) / tau));
  return s / static_cast<double>(v.size());
}

std::vector<double> masked_values(const std::vector<double>& dose_gy,
                                  const std::vector<std::uint8_t>& mask) {
  std::vector<double> out;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out.push_back(dose_gy[i]);
  return out;
}

std::vector<std::int64_t> masked_indices(const std::vector<std::uint8_t>& mask) {
  std::vector<std::int64_t> out;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out.push_back(static_cast<std::int64_t>(i));
  return out;
}

// Prescription governing a spec: the structure's own tag when it is a PTV,
// else the plan default.
double spec_prescription(const Structure& s, double default_rx) {
  return (s.is_ptv && s.prescription_gy > 0.0) ? s.prescription_gy : default_rx;
}

double resolved_threshold(const ConstraintSpec& spec, double rx) {
  return spec.dose_is_rx_fraction ? spec.dose_gy * rx : spec.dose_gy;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void parse_fail(const std::string& origin, int line, const std::string& why) {
  throw std::runtime_error(origin + ":" + std::to_string(line) +
                           ": bad constraint row: " + why);
}

}  // namespace

std::string to_string(ConstraintKind k) {
  switch (k) {
    case ConstraintKind::kDmax: return "Dmax";
    case ConstraintKind::kDmean: return "Dmean";
    case ConstraintKind::kVx: return "Vx";
    case ConstraintKind::kDx: return "Dx";
    case ConstraintKind::kD95: return "D95";
  }
  throw std::logic_error("unknown constraint kind");
}

double dmax_penalty(const std::vector<double>& masked_gy, double threshold_gy,
                    PenaltyMode mode, double tau_gy) {
  if (masked_gy.empty()) return 0.0;
  const double a = mode == PenaltyMode::kHard ? max_of(masked_gy)
                                              : logsumexp_tau_d(masked_gy, tau_gy);
  return relative_excess_sq(a, threshold_gy);
}

double dmean_penalty(const std::vector<double>& masked_gy, double threshold_gy) {
  if (masked_gy.empty()) return 0.0;
  return relative_excess_sq(mean_of(masked_gy), threshold_gy);
}

double vx_penalty(const std::vector<double>& masked_gy, double x_gy, double limit,
                  PenaltyMode mode, double tau_gy) {
  if (masked_gy.empty()) return 0.0;
  const double f = mode == PenaltyMode::kHard
                       ? fraction_at_least(masked_gy, x_gy)
                       : soft_fraction_at_least(masked_gy, x_gy, tau_gy);
  return sq(std::max(0.0, f - limit));
}

double dx_penalty(const std::vector<double>& masked_gy, double hottest_fraction,
                  double threshold_gy) {
  if (masked_gy.empty()) return 0.0;
  return relative_excess_sq(percentile_hottest(masked_gy, hottest_fraction),
                            threshold_gy);
}

double d95_penalty(const std::vector<double>& ptv_gy, double prescription_gy) {
  if (ptv_gy.empty()) return 0.0;
  const double target = 0.95 * prescription_gy;
  if (target <= 0.0) throw std::invalid_argument("prescription must be > 0");
  const double d95 = percentile_hottest(ptv_gy, 0.95);
  return sq(std::max(0.0, 1.0 - d95 / target));
}

namespace {

ConstraintTerm evaluate_term(const std::vector<double>& dose_gy,
                             const StructureSet& structures, const ConstraintSpec& spec,
                             PenaltyMode mode, double default_rx) {
  ConstraintTerm term;
  term.spec = spec;
  const Structure* s = structures.find(spec.structure);
  if (s == nullptr) return term;
  const auto vals = masked_values(dose_gy, s->mask);
  if (vals.empty()) return term;
  term.active = true;
  const double rx = spec_prescription(*s, default_rx);
  switch (spec.kind) {
    case ConstraintKind::kDmax:
      term.limit = resolved_threshold(spec, rx);
      term.achieved = max_of(vals);
      term.penalty = dmax_penalty(vals, term.limit, mode);
      term.satisfied = term.achieved <= term.limit;
      break;
    case ConstraintKind::kDmean:
      term.limit = resolved_threshold(spec, rx);
      term.achieved = mean_of(vals);
      term.penalty = dmean_penalty(vals, term.limit);
      term.satisfied = term.achieved <= term.limit;
      break;
    case ConstraintKind::kVx:
      term.limit = spec.fraction;
      term.achieved = fraction_at_least(vals, resolved_threshold(spec, rx));
      term.penalty = vx_penalty(vals, resolved_threshold(spec, rx), spec.fraction, mode);
      term.satisfied = term.achieved <= term.limit;
      break;
    case ConstraintKind::kDx:
      term.limit = resolved_threshold(spec, rx);
      term.achieved = percentile_hottest(vals, spec.fraction);
      term.penalty = dx_penalty(vals, spec.fraction, term.limit);
      term.satisfied = term.achieved <= term.limit;
      break;
    case ConstraintKind::kD95:
      term.limit = spec.fraction * rx;  // coverage floor
      term.achieved = percentile_hottest(vals, 0.95);
      term.penalty = d95_penalty(vals, rx);
      term.satisfied = term.achieved >= term.limit;
      break;
  }
  return term;
}

}  // namespace

CondLoss cond_loss(const std::vector<double>& dose_gy, const StructureSet& structures,
                   const std::vector<ConstraintSpec>& specs, PenaltyMode mode,
                   double default_prescription_gy) {
  CondLoss loss;
  loss.terms.reserve(specs.size());
  for (const auto& spec : specs) {
    auto term = evaluate_term(dose_gy, structures, spec, mode, default_prescription_gy);
    if (term.active) loss.total += spec.weight * term.penalty;
    loss.terms.push_back(std::move(term));
  }
  return loss;
}

Tensor cond_loss_soft(const Tensor& dose_gy, const StructureSet& structures,
                      const std::vector<ConstraintSpec>& specs,
                      double default_prescription_gy) {
  Tensor total = Tensor::scalar(0.0);
  for (const auto& spec : specs) {
    const Structure* s = structures.find(spec.structure);
    if (s == nullptr) continue;
    auto idx = masked_indices(s->mask);
    if (idx.empty()) continue;
    const double rx = spec_prescription(*s, default_prescription_gy);
    Tensor vals = ops::gather(dose_gy, std::move(idx));
    Tensor pen;
    switch (spec.kind) {
      case ConstraintKind::kDmax: {
        const double thr = resolved_threshold(spec, rx);
        Tensor a = ops::logsumexp_tau(vals, 1.0);
        pen = ops::square(ops::relu(ops::add_scalar(ops::scale(a, 1.0 / thr), -1.0)));
        break;
      }
      case ConstraintKind::kDmean: {
        const double thr = resolved_threshold(spec, rx);
        Tensor a = ops::mean(vals);
        pen = ops::square(ops::relu(ops::add_scalar(ops::scale(a, 1.0 / thr), -1.0)));
        break;
      }
      case ConstraintKind::kVx: {
        const double x = resolved_threshold(spec, rx);
        Tensor ind = ops::sigmoid(ops::scale(ops::add_scalar(vals, -x), 1.0 / 0.5));
        Tensor frac = ops::mean(ind);
        pen = ops::square(ops::relu(ops::add_scalar(frac, -spec.fraction)));
        break;
      }
      case ConstraintKind::kDx: {
        const double thr = resolved_threshold(spec, rx);
        Tensor a = ops::percentile_hottest(vals, spec.fraction);
        pen = ops::square(ops::relu(ops::add_scalar(ops::scale(a, 1.0 / thr), -1.0)));
        break;
      }
      case ConstraintKind::kD95: {
        const double target = 0.95 * rx;
        Tensor d95 = ops::percentile_hottest(vals, 0.95);
        pen = ops::square(
            ops::relu(ops::add_scalar(ops::scale(d95, -1.0 / target), 1.0)));
        break;
      }
    }
    total = ops::add(total, ops::scale(pen, spec.weight));
  }
  return total;
}

ComplianceReport compliance_report(const std::vector<double>& dose_gy,
                                   const StructureSet& structures,
                                   const std::vector<ConstraintSpec>& specs,
                                   double default_prescription_gy) {
  ComplianceReport report;
  for (const auto& spec : specs) {
    auto term = evaluate_term(dose_gy, structures, spec, PenaltyMode::kHard,
                              default_prescription_gy);
    if (!term.active) continue;
    ComplianceEntry e;
    e.structure = spec.structure;
    e.kind = to_string(spec.kind);
    e.achieved = term.achieved;
    e.limit = term.limit;
    e.passed = term.satisfied;
    e.margin = spec.kind == ConstraintKind::kD95 ? term.achieved - term.limit
                                                 : term.limit - term.achieved;
    report.entries.push_back(std::move(e));
    ++report.evaluated;
    if (term.satisfied) ++report.passed;
  }
  if (report.evaluated == 0) {
    report.vacuous = true;
    report.rate = 1.0;
  } else {
    report.rate = static_cast<double>(report.passed) /
                  static_cast<double>(report.evaluated);
  }
  return report;
}

std::vector<ConstraintSpec> parse_constraint_table(const std::string& text,
                                                   const std::string& origin) {
  std::vector<ConstraintSpec> specs;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;

    std::vector<std::string> cols;
    std::istringstream ls(line);
    std::string col;
    while (std::getline(ls, col, '|')) cols.push_back(trim(col));
    if (cols.size() != 5)
      parse_fail(origin, lineno, "expected 5 '|'-separated columns, got " +
                                     std::to_string(cols.size()));

    ConstraintSpec spec;
    spec.structure = cols[0];
    if (spec.structure.empty()) parse_fail(origin, lineno, "empty structure name");

    if (cols[1] == "Dmax") spec.kind = ConstraintKind::kDmax;
    else if (cols[1] == "Dmean") spec.kind = ConstraintKind::kDmean;
    else if (cols[1] == "Vx") spec.kind = ConstraintKind::kVx;
    else if (cols[1] == "Dx") spec.kind = ConstraintKind::kDx;
    else if (cols[1] == "D95") spec.kind = ConstraintKind::kD95;
    else parse_fail(origin, lineno, "unknown kind '" + cols[1] + "'");

    auto parse_num = [&](const std::string& s, const char* what) {
      try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
      } catch (const std::exception&) {
        parse_fail(origin, lineno, std::string("bad ") + what + " '" + s + "'");
      }
    };

    if (cols[2] == "-") {
      if (spec.kind != ConstraintKind::kD95)
        parse_fail(origin, lineno, "dose column required for " + cols[1]);
    } else if (cols[2].size() > 3 && cols[2].ends_with("%rx")) {
      spec.dose_gy = parse_num(cols[2].substr(0, cols[2].size() - 3), "dose") / 100.0;
      spec.dose_is_rx_fraction = true;
      if (spec.dose_gy <= 0.0) parse_fail(origin, lineno, "dose percent must be > 0");
    } else {
      spec.dose_gy = parse_num(cols[2], "dose");
      if (spec.dose_gy <= 0.0) parse_fail(origin, lineno, "dose must be > 0");
    }

    if (cols[3] == "-") {
      if (spec.kind == ConstraintKind::kVx || spec.kind == ConstraintKind::kDx ||
          spec.kind == ConstraintKind::kD95)
        parse_fail(origin, lineno, "fraction column required for " + cols[1]);
    } else {
      spec.fraction = parse_num(cols[3], "fraction");
      if (spec.fraction <= 0.0 || spec.fraction > 1.0)
        parse_fail(origin, lineno, "fraction must be in (0, 1]");
    }

    spec.weight = parse_num(cols[4], "weight");
    if (spec.weight <= 0.0) parse_fail(origin, lineno, "weight must be > 0");

    specs.push_back(std::move(spec));
  }
  return specs;
}

std::vector<ConstraintSpec> load_constraint_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open constraint table: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_constraint_table(buf.str(), path);
}

const std::vector<ConstraintSpec>& builtin_constraint_table() {
  // PTV coverage weighted 1.0, cord/brainstem 1.0, other OARs 0.5,
  // auxiliary dose-shaping rings 0.1. Fractions are volume fractions;
  // "%rx" thresholds scale with the prescription.
  static const char* kTable = R"tbl(
# structure | kind | dose_gy | fraction | weight

# Target coverage
PTV            | D95   | -     | 0.95 | 1.0
PTVHighOPT     | D95   | -     | 0.95 | 1.0
PTVMidOPT      | D95   | -     | 0.95 | 1.0
PTVLowOPT      | D95   | -     | 0.95 | 1.0

# Thorax
Total Lung-GTV | Vx    | 20    | 0.30 | 0.5
Total Lung-GTV | Vx    | 5     | 0.60 | 0.5
SpinalCord     | Dmax  | 45    | -    | 1.0
SpinalCord_05  | Dx    | 50    | 0.01 | 0.1
Esophagus      | Dmax  | 65    | -    | 0.5
Esophagus      | Dmean | 34    | -    | 0.5
Esophagus      | Vx    | 50    | 0.40 | 0.5
Esophagus      | Vx    | 35    | 0.50 | 0.5
Heart          | Vx    | 30    | 0.10 | 0.5
Heart          | Vx    | 40    | 0.05 | 0.5
Heart          | Dmean | 26    | -    | 0.5
LAD            | Vx    | 30    | 0.10 | 0.5
LAD            | Dmax  | 50    | -    | 0.5
GreatVessels   | Dmax  | 60    | -    | 0.5
GreatVessels   | Vx    | 50    | 0.50 | 0.5
Trachea        | Dmax  | 60    | -    | 0.5
Trachea        | Vx    | 50    | 0.50 | 0.5

# Head and neck
BrainStem      | Dmax  | 54    | -    | 1.0
BrainStem_03   | Dmax  | 50    | -    | 1.0
BrainStem_03   | Vx    | 40    | 0.10 | 1.0
BrainStem_03   | Dmean | 45    | -    | 1.0
Chiasm         | Dmax  | 50    | -    | 0.5
Chiasm         | Dx    | 54    | 0.01 | 0.5
Brain          | Vx    | 20    | 0.30 | 0.5
Brain          | Vx    | 50    | 0.50 | 0.5
OpticNerve_R   | Dmax  | 50    | -    | 0.5
OpticNerve_R   | Dx    | 54    | 0.01 | 0.5
OpticNerve_L   | Dmax  | 50    | -    | 0.5
OpticNerve_L   | Dx    | 54    | 0.01 | 0.5
Eyes           | Dmax  | 50    | -    | 0.5
Eyes           | Dmean | 35    | -    | 0.5
Lens           | Dmax  | 8     | -    | 0.5
Cochlea_R      | Dmax  | 50    | -    | 0.5
Cochlea_R      | Dmean | 45    | -    | 0.5
Cochlea_L      | Dmax  | 50    | -    | 0.5
Cochlea_L      | Dmean | 45    | -    | 0.5
Pituitary      | Dmax  | 45    | -    | 0.5
Pituitary      | Dmean | 30    | -    | 0.5
ParotidIps-PTV | Dmean | 26    | -    | 0.5
ParotidIps-PTV | Vx    | 30    | 0.50 | 0.5
ParotidCon-PTV | Dmean | 30    | -    | 0.5
ParotidCon-PTV | Vx    | 30    | 0.40 | 0.5
ParotidCon-PTV | Vx    | 50    | 0.02 | 0.5
ParotidCon-PTV | Dmax  | 60    | -    | 0.5
Submandibular  | Dmean | 35    | -    | 0.5
Submandibular  | Vx    | 50    | 0.50 | 0.5
Submand-PTV    | Dmean | 35    | -    | 0.5
Submand-PTV    | Vx    | 50    | 0.50 | 0.5
Submand-PTV    | Dmax  | 60    | -    | 0.5
Mandible       | Vx    | 50    | 0.30 | 0.5
Mandible       | Dmax  | 60    | -    | 0.5
Mandible-PTV   | Dmax  | 60    | -    | 0.5
Mandible-PTV   | Vx    | 50    | 0.30 | 0.5
Mandible-PTV   | Dmean | 45    | -    | 0.5
OralCavity     | Dmean | 40    | -    | 0.5
OralCavity     | Vx    | 50    | 0.50 | 0.5
OCavity-PTV    | Dmean | 40    | -    | 0.5
OCavity-PTV    | Vx    | 50    | 0.50 | 0.5
OCavity-PTV    | Vx    | 40    | 0.70 | 0.5
OCavity-PTV    | Dmax  | 60    | -    | 0.5
Thyroid        | Dmean | 18    | -    | 0.5
Thyroid        | Vx    | 50    | 0.50 | 0.5
Thyroid-PTV    | Dmean | 30    | -    | 0.5
Thyroid-PTV    | Vx    | 30    | 0.50 | 0.5
Thyroid-PTV    | Vx    | 40    | 0.30 | 0.5
Thyroid-PTV    | Dmax  | 50    | -    | 0.5
PharynxConst   | Dmean | 50    | -    | 0.1
PharynxConst   | Vx    | 50    | 0.50 | 0.1
PharConst-PTV  | Dmax  | 80%rx | -    | 0.1
PharConst-PTV  | Vx    | 70    | 0.20 | 0.1

# Dose-shaping rings
PTV_Ring.3-2   | Dmax  | 50%rx | -    | 0.1
Body_Ring0-3   | Dmax  | 70%rx | -    | 0.1
RingPTVHigh    | Dmax  | 80%rx | -    | 0.1
RingPTVMid     | Dmax  | 60%rx | -    | 0.1
RingPTVLow     | Dmax  | 30%rx | -    | 0.1
Posterior_Neck | Dmax  | 70%rx | -    | 0.1
)tbl";
  static const std::vector<ConstraintSpec> specs =
      parse_constraint_table(kTable, "<builtin>");
  return specs;
}

}  // namespace addose
