#include "addose/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "addose/rng.hpp"

namespace addose {

namespace {

struct Vec3 {
  double z, y, x;
};

// mm coordinates of a voxel center, origin at the grid center.
Vec3 voxel_mm(const Grid& g, std::int64_t z, std::int64_t y, std::int64_t x) {
  return {(static_cast<double>(z) + 0.5) * g.spacing_mm[0] -
              0.5 * g.shape[0] * g.spacing_mm[0],
          (static_cast<double>(y) + 0.5) * g.spacing_mm[1] -
              0.5 * g.shape[1] * g.spacing_mm[1],
          (static_cast<double>(x) + 0.5) * g.spacing_mm[2] -
              0.5 * g.shape[2] * g.spacing_mm[2]};
}

template <typename Pred>
std::vector<std::uint8_t> rasterize(const Grid& g, Pred inside) {
  std::vector<std::uint8_t> mask(g.voxels(), 0);
  std::int64_t i = 0;
  for (std::int64_t z = 0; z < g.shape[0]; ++z)
    for (std::int64_t y = 0; y < g.shape[1]; ++y)
      for (std::int64_t x = 0; x < g.shape[2]; ++x, ++i)
        mask[i] = inside(voxel_mm(g, z, y, x)) ? 1 : 0;
  return mask;
}

bool in_sphere(const Vec3& p, const Vec3& c, double r) {
  const double dz = p.z - c.z, dy = p.y - c.y, dx = p.x - c.x;
  return dz * dz + dy * dy + dx * dx <= r * r;
}

bool in_ellipsoid(const Vec3& p, const Vec3& c, const Vec3& semi) {
  const double dz = (p.z - c.z) / semi.z;
  const double dy = (p.y - c.y) / semi.y;
  const double dx = (p.x - c.x) / semi.x;
  return dz * dz + dy * dy + dx * dx <= 1.0;
}

bool in_zcylinder(const Vec3& p, double cy, double cx, double r, double half_len) {
  if (std::abs(p.z) > half_len) return false;
  const double dy = p.y - cy, dx = p.x - cx;
  return dy * dy + dx * dx <= r * r;
}

// CT with partial-volume averaging: each voxel's HU is the mean of the
// region HU over a 3x3x3 sub-voxel sample, so boundary voxels take graded
// values just like a real scanner's point-spread blur. Masks stay binary
// (voxel-center membership); only the CT field is anti-aliased.
template <typename RegionHu>
std::vector<float> rasterize_hu(const Grid& g, RegionHu hu_at) {
  std::vector<float> hu(g.voxels());
  constexpr int kSub = 3;
  std::int64_t i = 0;
  for (std::int64_t z = 0; z < g.shape[0]; ++z)
    for (std::int64_t y = 0; y < g.shape[1]; ++y)
      for (std::int64_t x = 0; x < g.shape[2]; ++x, ++i) {
        const Vec3 c = voxel_mm(g, z, y, x);
        double sum = 0.0;
        for (int sz = 0; sz < kSub; ++sz)
          for (int sy = 0; sy < kSub; ++sy)
            for (int sx = 0; sx < kSub; ++sx) {
              const Vec3 p{
                  c.z + ((sz + 0.5) / kSub - 0.5) * g.spacing_mm[0],
                  c.y + ((sy + 0.5) / kSub - 0.5) * g.spacing_mm[1],
                  c.x + ((sx + 0.5) / kSub - 0.5) * g.spacing_mm[2]};
              sum += hu_at(p);
            }
        hu[i] = static_cast<float>(sum / (kSub * kSub * kSub));
      }
  return hu;
}

// Organs are clipped to the body ellipsoid.
std::vector<std::uint8_t> clip(std::vector<std::uint8_t> mask,
                               const std::vector<std::uint8_t>& body) {
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = mask[i] && body[i];
  return mask;
}

}  // namespace

PhantomSpec desk_phantom_spec(Site site, std::uint64_t seed) {
  PhantomSpec spec;
  spec.grid.shape = {32, 32, 32};
  spec.grid.spacing_mm = {2.5, 2.5, 2.5};
  spec.site = site;
  spec.seed = seed;
  spec.dose_falloff_sigma_mm = 6.0;
  // Keep a few voxels of soft tissue between the lungs and the skin: the
  // 32-voxel grid spans 80 mm, so lungs sized close to the 36 mm body
  // semi-axis would leave a degenerate one-voxel shell.
  spec.lung_semi_axes_mm[0] = 26.0;
  spec.lung_semi_axes_mm[1] = 22.0;
  spec.lung_semi_axes_mm[2] = 15.0;
  return spec;
}

std::vector<float> distance_to_mask_mm(const std::vector<std::uint8_t>& mask,
                                       const Grid& grid) {
  const auto& sh = grid.shape;
  const auto& sp = grid.spacing_mm;
  std::vector<float> dist(mask.size(), 0.0f);
  const bool small = sh[0] <= 64 && sh[1] <= 64 && sh[2] <= 64;
  auto at = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
    return mask[(z * sh[1] + y) * sh[2] + x];
  };
  if (small) {
    // Exact: nearest surface voxel of the mask (the nearest mask voxel to
    // any outside point is always a boundary voxel).
    std::vector<std::array<std::int64_t, 3>> surface;
    for (std::int64_t z = 0; z < sh[0]; ++z)
      for (std::int64_t y = 0; y < sh[1]; ++y)
        for (std::int64_t x = 0; x < sh[2]; ++x) {
          if (!at(z, y, x)) continue;
          const bool boundary =
              z == 0 || z == sh[0] - 1 || y == 0 || y == sh[1] - 1 || x == 0 ||
              x == sh[2] - 1 || !at(z - 1, y, x) || !at(z + 1, y, x) ||
              !at(z, y - 1, x) || !at(z, y + 1, x) || !at(z, y, x - 1) ||
              !at(z, y, x + 1);
          if (boundary) surface.push_back({z, y, x});
        }
    if (surface.empty()) throw std::invalid_argument("distance_to_mask_mm: empty mask");
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::int64_t z = 0; z < sh[0]; ++z)
      for (std::int64_t y = 0; y < sh[1]; ++y)
        for (std::int64_t x = 0; x < sh[2]; ++x) {
          const std::int64_t i = (z * sh[1] + y) * sh[2] + x;
          if (mask[i]) continue;
          double best = 1e30;
          for (const auto& s : surface) {
            const double dz = static_cast<double>(z - s[0]) * sp[0];
            const double dy = static_cast<double>(y - s[1]) * sp[1];
            const double dx = static_cast<double>(x - s[2]) * sp[2];
            best = std::min(best, dz * dz + dy * dy + dx * dx);
          }
          dist[i] = static_cast<float>(std::sqrt(best));
        }
    return dist;
  }
  // Two-pass chamfer approximation for large grids.
  const float big = 1e30f;
  bool any = false;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    dist[i] = mask[i] ? 0.0f : big;
    any = any || mask[i];
  }
  if (!any) throw std::invalid_argument("distance_to_mask_mm: empty mask");
  auto relax = [&](std::int64_t z, std::int64_t y, std::int64_t x, std::int64_t dz,
                   std::int64_t dy, std::int64_t dx) {
    const std::int64_t nz = z + dz, ny = y + dy, nx = x + dx;
    if (nz < 0 || nz >= sh[0] || ny < 0 || ny >= sh[1] || nx < 0 || nx >= sh[2]) return;
    const float w = static_cast<float>(
        std::sqrt(dz * dz * sp[0] * sp[0] + dy * dy * sp[1] * sp[1] +
                  dx * dx * sp[2] * sp[2]));
    float& d = dist[(z * sh[1] + y) * sh[2] + x];
    const float cand = dist[(nz * sh[1] + ny) * sh[2] + nx] + w;
    if (cand < d) d = cand;
  };
  // Forward pass.
  for (std::int64_t z = 0; z < sh[0]; ++z)
    for (std::int64_t y = 0; y < sh[1]; ++y)
      for (std::int64_t x = 0; x < sh[2]; ++x)
        for (std::int64_t dz = -1; dz <= 0; ++dz)
          for (std::int64_t dy = -1; dy <= 1; ++dy)
            for (std::int64_t dx = -1; dx <= 1; ++dx) {
              if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
              relax(z, y, x, dz, dy, dx);
            }
  // Backward pass.
  for (std::int64_t z = sh[0] - 1; z >= 0; --z)
    for (std::int64_t y = sh[1] - 1; y >= 0; --y)
      for (std::int64_t x = sh[2] - 1; x >= 0; --x)
        for (std::int64_t dz = 0; dz <= 1; ++dz)
          for (std::int64_t dy = -1; dy <= 1; ++dy)
            for (std::int64_t dx = -1; dx <= 1; ++dx) {
              if (dz == 0 && (dy < 0 || (dy == 0 && dx <= 0))) continue;
              relax(z, y, x, dz, dy, dx);
            }
  return dist;
}

std::vector<float> analytic_dose_gy(const std::vector<std::uint8_t>& ptv_mask,
                                    double prescription_gy, double sigma_mm,
                                    const Grid& grid) {
  if (sigma_mm <= 0.0) throw std::invalid_argument("analytic_dose_gy: sigma must be > 0");
  bool any = false;
  for (auto v : ptv_mask) any = any || v;
  if (!any) throw std::invalid_argument("analytic_dose_gy: empty PTV");
  const auto dist = distance_to_mask_mm(ptv_mask, grid);
  std::vector<float> dose(ptv_mask.size());
  const double inv2s2 = 1.0 / (2.0 * sigma_mm * sigma_mm);
  for (std::size_t i = 0; i < dose.size(); ++i) {
    const double d = dist[i];
    dose[i] = static_cast<float>(prescription_gy * std::exp(-d * d * inv2s2));
  }
  return dose;
}

Case generate_phantom(const PhantomSpec& spec) {
  spec.grid.validate();
  const Grid& g = spec.grid;
  Rng rng(spec.seed, 17);
  // Small per-seed jitter keeps cases distinct without breaking the
  // compliance margins the layout was chosen for.
  const Vec3 jitter{rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0),
                    rng.uniform(-2.0, 2.0)};
  const double ptv_r = spec.ptv_radius_mm + rng.uniform(-0.5, 0.5);

  const Vec3 extent{g.shape[0] * g.spacing_mm[0], g.shape[1] * g.spacing_mm[1],
                    g.shape[2] * g.spacing_mm[2]};
  const Vec3 body_semi{0.45 * extent.z, 0.45 * extent.y, 0.45 * extent.x};
  const auto in_body = [&](const Vec3& p) {
    return in_ellipsoid(p, {0, 0, 0}, body_semi);
  };
  const auto body = rasterize(g, in_body);

  StructureSet structs;
  Vec3 ptv_center{};
  if (spec.site == Site::kLung) {
    ptv_center = {jitter.z, jitter.y, 14.0 + jitter.x};
  } else {
    ptv_center = {jitter.z, jitter.y, jitter.x};
  }
  const auto ptv = clip(rasterize(g, [&](const Vec3& p) {
    return in_sphere(p, ptv_center, ptv_r);
  }), body);
  {
    bool any = false;
    for (auto v : ptv) any = any || v;
    if (!any) throw std::invalid_argument("generate_phantom: PTV empty on this grid");
  }

  const double half_len = 0.45 * extent.z;
  const auto in_ptv = [&](const Vec3& p) { return in_sphere(p, ptv_center, ptv_r); };
  std::vector<float> hu;
  if (spec.site == Site::kLung) {
    const Vec3 lsemi{spec.lung_semi_axes_mm[0], spec.lung_semi_axes_mm[1],
                     spec.lung_semi_axes_mm[2]};
    const auto in_lungs = [&](const Vec3& p) {
      return in_ellipsoid(p, {0, 0, 14.0}, lsemi) ||
             in_ellipsoid(p, {0, 0, -14.0}, lsemi);
    };
    const auto in_cord = [&](const Vec3& p) {
      return in_zcylinder(p, ptv_center.y + 17.5, ptv_center.x, spec.cord_radius_mm,
                          half_len);
    };
    const auto in_heart = [&](const Vec3& p) {
      return in_sphere(p, {0, 10.0, -17.0}, spec.heart_radius_mm);
    };
    const auto in_eso = [&](const Vec3& p) {
      return in_zcylinder(p, -16.0, 0.0, spec.esophagus_radius_mm, half_len);
    };
    std::vector<std::uint8_t> lungs = clip(rasterize(g, in_lungs), body);
    // "Total Lung-GTV": both lungs minus the target.
    for (std::int64_t i = 0; i < g.voxels(); ++i)
      lungs[i] = lungs[i] && !ptv[i];
    const auto cord = clip(rasterize(g, in_cord), body);
    const auto heart = clip(rasterize(g, in_heart), body);
    const auto eso = clip(rasterize(g, in_eso), body);
    hu = rasterize_hu(g, [&](const Vec3& p) -> double {
      if (!in_body(p)) return -1000.0;
      if (in_ptv(p)) return 60.0;
      if (in_cord(p)) return 400.0;
      if (in_eso(p)) return 30.0;
      if (in_heart(p)) return 50.0;
      if (in_lungs(p)) return -700.0;
      return 0.0;
    });
    structs.structures.push_back(Structure{"SpinalCord", false, 0.0, cord});
    structs.structures.push_back(Structure{"Total Lung-GTV", false, 0.0, lungs});
    structs.structures.push_back(Structure{"Heart", false, 0.0, heart});
    structs.structures.push_back(Structure{"Esophagus", false, 0.0, eso});
  } else {
    const auto in_brainstem = [&](const Vec3& p) {
      return in_sphere(p, {ptv_center.z + 20.0, ptv_center.y + 9.0, ptv_center.x},
                       6.0);
    };
    const auto in_cord = [&](const Vec3& p) {
      return in_zcylinder(p, ptv_center.y + 17.5, ptv_center.x, spec.cord_radius_mm,
                          half_len);
    };
    const auto in_parotid_ips = [&](const Vec3& p) {
      return in_sphere(p, {ptv_center.z, ptv_center.y, ptv_center.x + 26.0}, 8.0);
    };
    const auto in_parotid_con = [&](const Vec3& p) {
      return in_sphere(p, {ptv_center.z, ptv_center.y, ptv_center.x - 26.0}, 8.0);
    };
    const auto brainstem = clip(rasterize(g, in_brainstem), body);
    const auto cord = clip(rasterize(g, in_cord), body);
    const auto parotid_ips = clip(rasterize(g, in_parotid_ips), body);
    const auto parotid_con = clip(rasterize(g, in_parotid_con), body);
    hu = rasterize_hu(g, [&](const Vec3& p) -> double {
      if (!in_body(p)) return -1000.0;
      if (in_ptv(p)) return 60.0;
      if (in_cord(p)) return 400.0;
      if (in_parotid_con(p)) return 45.0;
      if (in_parotid_ips(p)) return 45.0;
      if (in_brainstem(p)) return 35.0;
      return 0.0;
    });
    structs.structures.push_back(Structure{"BrainStem", false, 0.0, brainstem});
    structs.structures.push_back(Structure{"SpinalCord", false, 0.0, cord});
    structs.structures.push_back(Structure{"ParotidIps-PTV", false, 0.0, parotid_ips});
    structs.structures.push_back(Structure{"ParotidCon-PTV", false, 0.0, parotid_con});
  }
  structs.structures.insert(structs.structures.begin(),
                            Structure{"PTV", true, spec.prescription_gy, ptv});

  Case c;
  c.id = "phantom-" + to_string(spec.site) + "-" + std::to_string(spec.seed);
  c.ct.grid = g;
  c.ct.values = normalize_ct(hu);
  c.structures = std::move(structs);
  c.context.technique = (spec.seed % 2 == 0) ? Technique::kImrt : Technique::kVmat;
  c.context.site = spec.site;
  c.context.prescription_gy = spec.prescription_gy;

  const auto dose_gy = analytic_dose_gy(c.structures.find("PTV")->mask,
                                        spec.prescription_gy,
                                        spec.dose_falloff_sigma_mm, g);
  auto [normalized, scale] = normalize_dose(dose_gy, c.structures.find("PTV")->mask);
  DoseVolume dv;
  dv.grid = g;
  dv.values = std::move(normalized);
  dv.scale = scale;
  c.dose = std::move(dv);
  return c;
}

}  // namespace addose
