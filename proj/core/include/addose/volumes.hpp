#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace addose {

// Voxel counts and spacing ordered (z, y, x).
struct Grid {
  std::array<std::int64_t, 3> shape{96, 128, 144};
  std::array<double, 3> spacing_mm{2.5, 2.5, 2.5};

  std::int64_t voxels() const { return shape[0] * shape[1] * shape[2]; }
  bool operator==(const Grid&) const = default;
  void validate() const;
};

struct CTVolume {
  Grid grid;
  std::vector<float> values;  // normalized units in [-2, 2]
};

// Gy-per-normalized-unit pair: gy = normalized * d3_gy * fixed_divisor.
struct DoseScale {
  double d3_gy = 0.0;
  double fixed_divisor = 10.0;
};

struct DoseVolume {
  Grid grid;
  std::vector<float> values;  // normalized units, >= 0
  DoseScale scale;
};

struct Structure {
  std::string name;
  bool is_ptv = false;
  double prescription_gy = 0.0;  // PTV entries only
  std::vector<std::uint8_t> mask;
};

struct StructureSet {
  std::vector<Structure> structures;

  const Structure* find(const std::string& name) const;
  // PTVs ordered by descending prescription.
  std::vector<const Structure*> ptvs() const;
  void validate(const Grid& grid) const;
};

enum class Technique { kImrt, kVmat };
enum class Site { kLung, kHeadNeck };

std::string to_string(Technique t);
std::string to_string(Site s);
Technique technique_from_string(const std::string& s);
Site site_from_string(const std::string& s);

struct CaseContext {
  Technique technique = Technique::kImrt;
  Site site = Site::kLung;
  double prescription_gy = 60.0;
};

struct Case {
  std::string id;
  CTVolume ct;
  StructureSet structures;
  std::optional<DoseVolume> dose;
  CaseContext context;

  Grid grid() const { return ct.grid; }
};

// Clamp to [-1000, 1000] HU and divide by 500. Throws on non-finite input,
// naming the offending voxel index.
std::vector<float> normalize_ct(const std::vector<float>& raw_hu);

// D3-based dose normalization: output = gy / d3 / 10 where d3 is the dose
// exceeded by the hottest 3% of PTV voxels.
std::pair<std::vector<float>, DoseScale> normalize_dose(
    const std::vector<float>& dose_gy, const std::vector<std::uint8_t>& ptv_mask);

std::vector<float> denormalize_dose(const std::vector<float>& normalized,
                                    const DoseScale& scale);
double denormalize_value(double normalized, const DoseScale& scale);

enum class PadKind { kCt, kDose, kMask };

// Center-crop then symmetric zero-pad to the target shape. CT pads with -2
// (normalized air), dose and masks with 0.
template <typename T>
std::vector<T> fit_to_grid(const std::vector<T>& values,
                           const std::array<std::int64_t, 3>& src,
                           const std::array<std::int64_t, 3>& dst, PadKind kind);

// Case container: a directory with manifest.json plus raw little-endian
// arrays ct.f32, dose.f32 and mask_<name>.u8.
void save_case(const Case& c, const std::string& dir);
Case load_case(const std::string& dir);

// Raw array helpers shared with the checkpoint container.
void write_f32(const std::string& path, const std::vector<float>& data);
std::vector<float> read_f32(const std::string& path, std::size_t expected);
void write_f64(const std::string& path, const std::vector<double>& data);
std::vector<double> read_f64(const std::string& path, std::size_t expected);
void write_u8(const std::string& path, const std::vector<std::uint8_t>& data);
std::vector<std::uint8_t> read_u8(const std::string& path, std::size_t expected);

}  // namespace addose
