#include "addose/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "addose/volumes.hpp"

namespace addose {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string array_file(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "param_%04zu.f64", index);
  return buf;
}

}  // namespace

void save_checkpoint(const std::string& dir, const nn::ParamRegistry& params,
                     const std::map<std::string, std::string>& meta) {
  fs::create_directories(dir);
  json manifest;
  manifest["version"] = 1;
  manifest["meta"] = meta;
  json plist = json::array();
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const auto& t = params.tensors[i];
    json p;
    p["name"] = params.names[i];
    p["shape"] = t.shape();
    p["file"] = array_file(i);
    plist.push_back(std::move(p));
    write_f64(dir + "/" + array_file(i), t.data());
  }
  manifest["params"] = std::move(plist);
  std::ofstream mf(dir + "/manifest.json");
  if (!mf) throw std::runtime_error("cannot write checkpoint manifest in " + dir);
  mf << manifest.dump(2) << "\n";
}

namespace {

json read_manifest(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.json");
  if (!mf) throw std::runtime_error("cannot open checkpoint manifest in " + dir);
  json manifest = json::parse(mf);
  if (manifest.value("version", 0) != 1)
    throw std::runtime_error("unsupported checkpoint version in " + dir);
  return manifest;
}

}  // namespace

std::map<std::string, std::string> load_checkpoint(const std::string& dir,
                                                   nn::ParamRegistry& params) {
  json manifest = read_manifest(dir);
  const auto& plist = manifest.at("params");
  if (plist.size() != params.size())
    throw std::runtime_error("checkpoint has " + std::to_string(plist.size()) +
                             " parameters, model expects " +
                             std::to_string(params.size()));
  for (const auto& p : plist) {
    const std::string name = p.at("name");
    Tensor* t = params.find(name);
    if (t == nullptr)
      throw std::runtime_error("checkpoint parameter not in model: " + name);
    const auto shape = p.at("shape").get<std::vector<std::int64_t>>();
    if (shape != t->shape())
      throw std::runtime_error("shape mismatch for parameter " + name);
    t->data() = read_f64(dir + "/" + p.at("file").get<std::string>(),
                         static_cast<std::size_t>(t->numel()));
  }
  std::map<std::string, std::string> meta;
  if (manifest.contains("meta"))
    meta = manifest["meta"].get<std::map<std::string, std::string>>();
  return meta;
}

std::map<std::string, std::string> read_checkpoint_meta(const std::string& dir) {
  json manifest = read_manifest(dir);
  std::map<std::string, std::string> meta;
  if (manifest.contains("meta"))
    meta = manifest["meta"].get<std::map<std::string, std::string>>();
  return meta;
}

}  // namespace addose
