#pragma once

#include <string>

#include "ctrack/model.hpp"

namespace ctrack {

// Versioned binary blob: config document (JSON text), then named parameter
// tensors. Loading rebuilds the model from the embedded config and overwrites
// every parameter by name.
void save_checkpoint(const std::string& path, const Model& m, const std::string& config_json);

struct LoadedCheckpoint {
  Model model;
  std::string config_json;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace ctrack
