#pragma once

#include <vector>

namespace addose {

// Interpolated order statistic on a descending sort: the value at rank
// q*(n-1) counted from the hottest element, linearly interpolated. This is
// the single percentile convention shared by dose normalization (D3), the
// D95 constraint, and the DVH Dx metrics.
double percentile_hottest(std::vector<double> values, double q);

// Dx: dose received by the hottest x percent of the volume.
double dose_at_hottest_percent(const std::vector<double>& values, double x_percent);

// Vx: fraction of values >= threshold.
double fraction_at_least(const std::vector<double>& values, double threshold);

double max_of(const std::vector<double>& values);
double mean_of(const std::vector<double>& values);

}  // namespace addose
