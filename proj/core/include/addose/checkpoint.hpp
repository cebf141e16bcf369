#pragma once

#include <map>
#include <string>

#include "addose/nn.hpp"

namespace addose {

// Checkpoint directory: manifest.json naming each parameter plus one raw
// little-endian .f64 array per parameter. meta carries free-form strings
// (model kind, training config, dose scale factors).
void save_checkpoint(const std::string& dir, const nn::ParamRegistry& params,
                     const std::map<std::string, std::string>& meta);

// Loads into an already-constructed registry; every name and shape must
// match, extra or missing parameters are errors.
std::map<std::string, std::string> load_checkpoint(const std::string& dir,
                                                   nn::ParamRegistry& params);

// Reads only the manifest's meta block (for tooling that inspects a
// checkpoint without building the model).
std::map<std::string, std::string> read_checkpoint_meta(const std::string& dir);

}  // namespace addose
