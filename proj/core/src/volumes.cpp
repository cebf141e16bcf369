#include "addose/volumes.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "addose/stats.hpp"

namespace addose {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr int kManifestVersion = 1;
}

void Grid::validate() const {
  for (auto s : shape)
    if (s < 1) throw std::invalid_argument("Grid: voxel counts must be >= 1");
  for (auto s : spacing_mm)
    if (!(s > 0.0)) throw std::invalid_argument("Grid: spacing must be > 0");
}

const Structure* StructureSet::find(const std::string& name) const {
  for (const auto& s : structures)
    if (s.name == name) return &s;
  return nullptr;
}

std::vector<const Structure*> StructureSet::ptvs() const {
  std::vector<const Structure*> out;
  for (const auto& s : structures)
    if (s.is_ptv) out.push_back(&s);
  std::stable_sort(out.begin(), out.end(), [](const Structure* a, const Structure* b) {
    return a->prescription_gy > b->prescription_gy;
  });
  return out;
}

void StructureSet::validate(const Grid& grid) const {
  bool has_ptv = false;
  for (const auto& s : structures) {
    if (static_cast<std::int64_t>(s.mask.size()) != grid.voxels())
      throw std::invalid_argument("StructureSet: mask '" + s.name +
                                  "' does not match the case grid");
    for (auto v : s.mask)
      if (v > 1)
        throw std::invalid_argument("StructureSet: mask '" + s.name +
                                    "' has non-binary values");
    if (s.is_ptv) has_ptv = true;
  }
  if (!has_ptv) throw std::invalid_argument("StructureSet: at least one PTV required");
}

std::string to_string(Technique t) { return t == Technique::kImrt ? "IMRT" : "VMAT"; }
std::string to_string(Site s) { return s == Site::kLung ? "lung" : "head-neck"; }

Technique technique_from_string(const std::string& s) {
  if (s == "IMRT") return Technique::kImrt;
  if (s == "VMAT") return Technique::kVmat;
  throw std::invalid_argument("unknown technique: " + s);
}

Site site_from_string(const std::string& s) {
  if (s == "lung") return Site::kLung;
  if (s == "head-neck" || s == "head_neck") return Site::kHeadNeck;
  throw std::invalid_argument("unknown site: " + s);
}

std::vector<float> normalize_ct(const std::vector<float>& raw_hu) {
  std::vector<float> out(raw_hu.size());
  for (std::size_t i = 0; i < raw_hu.size(); ++i) {
    const float v = raw_hu[i];
    if (!std::isfinite(v))
      throw std::invalid_argument("normalize_ct: non-finite value at voxel " +
                                  std::to_string(i));
    out[i] = std::clamp(v, -1000.0f, 1000.0f) / 500.0f;
  }
  return out;
}

std::pair<std::vector<float>, DoseScale> normalize_dose(
    const std::vector<float>& dose_gy, const std::vector<std::uint8_t>& ptv_mask) {
  if (dose_gy.size() != ptv_mask.size())
    throw std::invalid_argument("normalize_dose: size mismatch");
  std::vector<double> ptv_doses;
  for (std::size_t i = 0; i < dose_gy.size(); ++i)
    if (ptv_mask[i]) ptv_doses.push_back(dose_gy[i]);
  if (ptv_doses.empty()) throw std::invalid_argument("normalize_dose: PTV empty");
  const double d3 = percentile_hottest(std::move(ptv_doses), 0.03);
  if (d3 <= 0.0) throw std::invalid_argument("normalize_dose: degenerate dose");
  DoseScale scale{d3, 10.0};
  std::vector<float> out(dose_gy.size());
  const double inv = 1.0 / (d3 * scale.fixed_divisor);
  for (std::size_t i = 0; i < dose_gy.size(); ++i)
    out[i] = static_cast<float>(dose_gy[i] * inv);
  return {std::move(out), scale};
}

std::vector<float> denormalize_dose(const std::vector<float>& normalized,
                                    const DoseScale& scale) {
  std::vector<float> out(normalized.size());
  const double f = scale.d3_gy * scale.fixed_divisor;
  for (std::size_t i = 0; i < normalized.size(); ++i)
    out[i] = static_cast<float>(normalized[i] * f);
  return out;
}

double denormalize_value(double normalized, const DoseScale& scale) {
  return normalized * scale.d3_gy * scale.fixed_divisor;
}

template <typename T>
std::vector<T> fit_to_grid(const std::vector<T>& values,
                           const std::array<std::int64_t, 3>& src,
                           const std::array<std::int64_t, 3>& dst, PadKind kind) {
  if (static_cast<std::int64_t>(values.size()) != src[0] * src[1] * src[2])
    throw std::invalid_argument("fit_to_grid: values do not match source shape");
  const T fill = (kind == PadKind::kCt) ? static_cast<T>(-2) : static_cast<T>(0);
  // Per-axis: crop window start in the source, pad offset in the target.
  std::array<std::int64_t, 3> crop_start{}, copy_len{}, pad_start{};
  for (int a = 0; a < 3; ++a) {
    if (src[a] >= dst[a]) {
      crop_start[a] = (src[a] - dst[a]) / 2;
      copy_len[a] = dst[a];
      pad_start[a] = 0;
    } else {
      crop_start[a] = 0;
      copy_len[a] = src[a];
      pad_start[a] = (dst[a] - src[a]) / 2;
    }
  }
  std::vector<T> out(static_cast<std::size_t>(dst[0] * dst[1] * dst[2]), fill);
  for (std::int64_t z = 0; z < copy_len[0]; ++z)
    for (std::int64_t y = 0; y < copy_len[1]; ++y) {
      const T* srow = values.data() +
                      ((z + crop_start[0]) * src[1] + (y + crop_start[1])) * src[2] +
                      crop_start[2];
      T* drow = out.data() +
                ((z + pad_start[0]) * dst[1] + (y + pad_start[1])) * dst[2] +
                pad_start[2];
      std::copy_n(srow, copy_len[2], drow);
    }
  return out;
}

template std::vector<float> fit_to_grid<float>(const std::vector<float>&,
                                               const std::array<std::int64_t, 3>&,
                                               const std::array<std::int64_t, 3>&,
                                               PadKind);
template std::vector<std::uint8_t> fit_to_grid<std::uint8_t>(
    const std::vector<std::uint8_t>&, const std::array<std::int64_t, 3>&,
    const std::array<std::int64_t, 3>&, PadKind);

// --------------------------------------------------------------------- I/O

namespace {

template <typename T>
void write_raw(const std::string& path, const std::vector<T>& data) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(T)));
  if (!f) throw std::runtime_error("write failed: " + path);
}

template <typename T>
std::vector<T> read_raw(const std::string& path, std::size_t expected) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("cannot open: " + path);
  const auto bytes = static_cast<std::size_t>(f.tellg());
  if (bytes != expected * sizeof(T))
    throw std::runtime_error("truncated array: " + path + " holds " +
                             std::to_string(bytes / sizeof(T)) + " scalars, expected " +
                             std::to_string(expected));
  std::vector<T> data(expected);
  f.seekg(0);
  f.read(reinterpret_cast<char*>(data.data()),
         static_cast<std::streamsize>(bytes));
  if (!f) throw std::runtime_error("read failed: " + path);
  return data;
}

}  // namespace

void write_f32(const std::string& p, const std::vector<float>& d) { write_raw(p, d); }
std::vector<float> read_f32(const std::string& p, std::size_t n) {
  return read_raw<float>(p, n);
}
void write_f64(const std::string& p, const std::vector<double>& d) { write_raw(p, d); }
std::vector<double> read_f64(const std::string& p, std::size_t n) {
  return read_raw<double>(p, n);
}
void write_u8(const std::string& p, const std::vector<std::uint8_t>& d) {
  write_raw(p, d);
}
std::vector<std::uint8_t> read_u8(const std::string& p, std::size_t n) {
  return read_raw<std::uint8_t>(p, n);
}

void save_case(const Case& c, const std::string& dir) {
  c.ct.grid.validate();
  c.structures.validate(c.ct.grid);
  fs::create_directories(dir);
  json manifest;
  manifest["version"] = kManifestVersion;
  manifest["id"] = c.id;
  manifest["shape"] = c.ct.grid.shape;
  manifest["spacing_mm"] = c.ct.grid.spacing_mm;
  manifest["context"] = {{"technique", to_string(c.context.technique)},
                         {"site", to_string(c.context.site)},
                         {"prescription_gy", c.context.prescription_gy}};
  json structs = json::array();
  for (const auto& s : c.structures.structures) {
    json js = {{"name", s.name}, {"is_ptv", s.is_ptv}};
    if (s.is_ptv) js["prescription_gy"] = s.prescription_gy;
    structs.push_back(js);
  }
  manifest["structures"] = structs;
  manifest["has_dose"] = c.dose.has_value();
  if (c.dose) {
    manifest["dose_scale"] = {{"d3_gy", c.dose->scale.d3_gy},
                              {"fixed_divisor", c.dose->scale.fixed_divisor}};
  }

  write_f32(dir + "/ct.f32", c.ct.values);
  if (c.dose) write_f32(dir + "/dose.f32", c.dose->values);
  for (const auto& s : c.structures.structures)
    write_u8(dir + "/mask_" + s.name + ".u8", s.mask);

  std::ofstream mf(dir + "/manifest.json");
  if (!mf) throw std::runtime_error("cannot write manifest in " + dir);
  mf << manifest.dump(2) << "\n";
}

Case load_case(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.json");
  if (!mf) throw std::runtime_error("missing manifest: " + dir);
  json manifest = json::parse(mf);
  const int version = manifest.at("version").get<int>();
  if (version != kManifestVersion)
    throw std::runtime_error("unsupported case manifest version " +
                             std::to_string(version) + " in " + dir +
                             " (expected " + std::to_string(kManifestVersion) + ")");
  Case c;
  c.id = manifest.at("id").get<std::string>();
  c.ct.grid.shape = manifest.at("shape").get<std::array<std::int64_t, 3>>();
  c.ct.grid.spacing_mm = manifest.at("spacing_mm").get<std::array<double, 3>>();
  c.ct.grid.validate();
  const auto n = static_cast<std::size_t>(c.ct.grid.voxels());

  const auto& ctx = manifest.at("context");
  c.context.technique = technique_from_string(ctx.at("technique").get<std::string>());
  c.context.site = site_from_string(ctx.at("site").get<std::string>());
  c.context.prescription_gy = ctx.at("prescription_gy").get<double>();

  c.ct.values = read_f32(dir + "/ct.f32", n);
  for (const auto& js : manifest.at("structures")) {
    Structure s;
    s.name = js.at("name").get<std::string>();
    s.is_ptv = js.at("is_ptv").get<bool>();
    if (s.is_ptv) s.prescription_gy = js.at("prescription_gy").get<double>();
    s.mask = read_u8(dir + "/mask_" + s.name + ".u8", n);
    c.structures.structures.push_back(std::move(s));
  }
  c.structures.validate(c.ct.grid);

  if (manifest.at("has_dose").get<bool>()) {
    DoseVolume d;
    d.grid = c.ct.grid;
    d.values = read_f32(dir + "/dose.f32", n);
    d.scale.d3_gy = manifest.at("dose_scale").at("d3_gy").get<double>();
    d.scale.fixed_divisor =
        manifest.at("dose_scale").at("fixed_divisor").get<double>();
    c.dose = std::move(d);
  }
  return c;
}

}  // namespace addose
