#pragma once

#include <cstdint>

#include "addose/volumes.hpp"

namespace addose {

// Deterministic synthetic case generator; stands in for clinical data so
// every downstream property is testable.
struct PhantomSpec {
  Grid grid;
  Site site = Site::kLung;
  double prescription_gy = 60.0;
  double ptv_radius_mm = 8.0;
  double cord_radius_mm = 4.0;
  double lung_semi_axes_mm[3] = {25.0, 18.0, 14.0};  // (z,y,x)
  double heart_radius_mm = 10.0;
  double esophagus_radius_mm = 3.5;
  double dose_falloff_sigma_mm = 8.0;
  std::uint64_t seed = 0;
};

PhantomSpec desk_phantom_spec(Site site, std::uint64_t seed);

// Body ellipsoid of soft tissue in air, site-dependent OARs, a spherical
// PTV and the analytic ground-truth dose. Reproducible from the seed.
Case generate_phantom(const PhantomSpec& spec);

// D(v) = prescription * exp(-dist(v, PTV)^2 / (2 sigma^2)), dist in mm.
// Exact brute-force distances on grids up to 64^3, two-pass chamfer above.
std::vector<float> analytic_dose_gy(const std::vector<std::uint8_t>& ptv_mask,
                                    double prescription_gy, double sigma_mm,
                                    const Grid& grid);

// Euclidean distance in mm to the PTV set (0 inside).
std::vector<float> distance_to_mask_mm(const std::vector<std::uint8_t>& mask,
                                       const Grid& grid);

}  // namespace addose
