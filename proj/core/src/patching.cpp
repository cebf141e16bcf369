#include "addose/patching.hpp"

#include <stdexcept>
#include <string>

namespace addose {

PatchGrid plan_patches(const std::array<std::int64_t, 3>& shape,
                       const std::array<std::int64_t, 3>& patch,
                       const std::array<std::int64_t, 3>& overlap) {
  PatchGrid grid;
  grid.volume_shape = shape;
  grid.patch_shape = patch;
  grid.overlap = overlap;
  for (int a = 0; a < 3; ++a) {
    if (patch[a] < 1 || shape[a] < 1)
      throw std::invalid_argument("plan_patches: sizes must be >= 1");
    if (patch[a] > shape[a])
      throw std::invalid_argument("plan_patches: patch exceeds volume on axis " +
                                  std::to_string(a));
    if (overlap[a] < 0 || overlap[a] >= patch[a])
      throw std::invalid_argument("plan_patches: overlap must be in [0, patch)");
    const std::int64_t stride = patch[a] - overlap[a];
    const std::int64_t last = shape[a] - patch[a];
    std::int64_t s = 0;
    while (true) {
      grid.starts[a].push_back(s);
      if (s >= last) break;
      s = std::min(s + stride, last);
    }
  }
  grid.blend = blend_weights(patch, overlap);
  return grid;
}

std::vector<std::vector<float>> extract(const std::vector<float>& volume,
                                        const PatchGrid& grid) {
  const auto& vs = grid.volume_shape;
  if (static_cast<std::int64_t>(volume.size()) != vs[0] * vs[1] * vs[2])
    throw std::invalid_argument("extract: volume does not match plan shape");
  const auto& ps = grid.patch_shape;
  std::vector<std::vector<float>> patches;
  patches.reserve(static_cast<std::size_t>(grid.patch_count()));
  for (auto z0 : grid.starts[0])
    for (auto y0 : grid.starts[1])
      for (auto x0 : grid.starts[2]) {
        std::vector<float> p(static_cast<std::size_t>(grid.patch_voxels()));
        for (std::int64_t z = 0; z < ps[0]; ++z)
          for (std::int64_t y = 0; y < ps[1]; ++y) {
            const float* src =
                volume.data() + ((z0 + z) * vs[1] + (y0 + y)) * vs[2] + x0;
            float* dst = p.data() + (z * ps[1] + y) * ps[2];
            std::copy_n(src, ps[2], dst);
          }
        patches.push_back(std::move(p));
      }
  return patches;
}

std::vector<double> blend_weights(const std::array<std::int64_t, 3>& patch,
                                  const std::array<std::int64_t, 3>& overlap) {
  std::array<std::vector<double>, 3> axis;
  for (int a = 0; a < 3; ++a) {
    if (overlap[a] >= patch[a])
      throw std::invalid_argument("blend_weights: overlap must be < patch");
    const std::int64_t n = patch[a];
    const std::int64_t o = overlap[a];
    axis[a].assign(static_cast<std::size_t>(n), 1.0);
    for (std::int64_t k = 1; k <= o; ++k) {
      // (o+1-k)/(o+1), k counted from the interior; never reaches 0.
      const double w = static_cast<double>(o + 1 - k) / static_cast<double>(o + 1);
      axis[a][static_cast<std::size_t>(o - k)] = w;          // leading face
      axis[a][static_cast<std::size_t>(n - 1 - (o - k))] = w;  // trailing face
    }
  }
  std::vector<double> w(static_cast<std::size_t>(patch[0] * patch[1] * patch[2]));
  std::size_t i = 0;
  for (std::int64_t z = 0; z < patch[0]; ++z)
    for (std::int64_t y = 0; y < patch[1]; ++y)
      for (std::int64_t x = 0; x < patch[2]; ++x, ++i)
        w[i] = axis[0][z] * axis[1][y] * axis[2][x];
  return w;
}

std::vector<float> merge(const std::vector<std::vector<float>>& patches,
                         const PatchGrid& grid) {
  if (static_cast<std::int64_t>(patches.size()) != grid.patch_count())
    throw std::invalid_argument("merge: expected " +
                                std::to_string(grid.patch_count()) + " patches, got " +
                                std::to_string(patches.size()));
  const auto& vs = grid.volume_shape;
  const auto& ps = grid.patch_shape;
  std::vector<double> acc(static_cast<std::size_t>(vs[0] * vs[1] * vs[2]), 0.0);
  std::vector<double> wsum(acc.size(), 0.0);
  std::size_t pi = 0;
  for (auto z0 : grid.starts[0])
    for (auto y0 : grid.starts[1])
      for (auto x0 : grid.starts[2]) {
        const auto& p = patches[pi++];
        if (static_cast<std::int64_t>(p.size()) != grid.patch_voxels())
          throw std::invalid_argument("merge: patch " + std::to_string(pi) +
                                      " has wrong size");
        for (std::int64_t z = 0; z < ps[0]; ++z)
          for (std::int64_t y = 0; y < ps[1]; ++y)
            for (std::int64_t x = 0; x < ps[2]; ++x) {
              const std::size_t vi = static_cast<std::size_t>(
                  ((z0 + z) * vs[1] + (y0 + y)) * vs[2] + x0 + x);
              const double w = grid.blend[(z * ps[1] + y) * ps[2] + x];
              acc[vi] += w * p[(z * ps[1] + y) * ps[2] + x];
              wsum[vi] += w;
            }
      }
  std::vector<float> out(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i)
    out[i] = static_cast<float>(acc[i] / wsum[i]);
  return out;
}

}  // namespace addose
