#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace addose {

// Tiling plan with linear-decay overlap blending. Default geometry is
// 32x32x24 patches with 8x8x8 overlap; trailing starts are clamped so
// patches stay in-bounds (the overlap grows at the trailing edge).
struct PatchGrid {
  std::array<std::int64_t, 3> volume_shape{};
  std::array<std::int64_t, 3> patch_shape{32, 32, 24};
  std::array<std::int64_t, 3> overlap{8, 8, 8};
  std::array<std::vector<std::int64_t>, 3> starts;
  std::vector<double> blend;  // per-patch weight field, patch_shape

  std::int64_t patch_count() const {
    return static_cast<std::int64_t>(starts[0].size()) *
           static_cast<std::int64_t>(starts[1].size()) *
           static_cast<std::int64_t>(starts[2].size());
  }
  std::int64_t patch_voxels() const {
    return patch_shape[0] * patch_shape[1] * patch_shape[2];
  }
};

PatchGrid plan_patches(const std::array<std::int64_t, 3>& shape,
                       const std::array<std::int64_t, 3>& patch,
                       const std::array<std::int64_t, 3>& overlap);

// Row-major (z, y, x) patch ordering; each patch is a copy.
std::vector<std::vector<float>> extract(const std::vector<float>& volume,
                                        const PatchGrid& grid);

// Separable profile: 1 in the interior, linear ramp down to 1/(o+1) across
// the o overlap voxels at each face; the 3-D weight is the axis product.
std::vector<double> blend_weights(const std::array<std::int64_t, 3>& patch,
                                  const std::array<std::int64_t, 3>& overlap);

// out(v) = sum_i w_i(v) p_i(v) / sum_i w_i(v); merge(extract(V)) == V.
std::vector<float> merge(const std::vector<std::vector<float>>& patches,
                         const PatchGrid& grid);

}  // namespace addose
