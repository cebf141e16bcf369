#include "addose/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace addose {

double percentile_hottest(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile_hottest: empty input");
  if (q < 0.0 || q > 1.0)
    throw std::invalid_argument("percentile_hottest: q out of [0,1]");
  std::sort(values.begin(), values.end(), std::greater<double>());
  const auto n = static_cast<std::ptrdiff_t>(values.size());
  const double p = q * static_cast<double>(n - 1);
  const auto lo = static_cast<std::ptrdiff_t>(std::floor(p));
  const auto hi = std::min<std::ptrdiff_t>(lo + 1, n - 1);
  const double f = p - static_cast<double>(lo);
  return (1.0 - f) * values[lo] + f * values[hi];
}

double dose_at_hottest_percent(const std::vector<double>& values, double x_percent) {
  return percentile_hottest(values, x_percent / 100.0);
}

double fraction_at_least(const std::vector<double>& values, double threshold) {
  if (values.empty()) throw std::invalid_argument("fraction_at_least: empty input");
  std::size_t count = 0;
  for (double v : values)
    if (v >= threshold) ++count;
  return static_cast<double>(count) / static_cast<double>(values.size());
}

double max_of(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("max_of: empty input");
  return *std::max_element(values.begin(), values.end());
}

double mean_of(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("mean_of: empty input");
  double acc = 0.0;
  for (double v : values) acc += v;
  return acc / static_cast<double>(values.size());
}

}  // namespace addose
