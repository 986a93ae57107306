#pragma once

#include <string>

#include <json.hpp>

#include "ctrack/trainer.hpp"

namespace ctrack {

struct AblationConfig {
  std::string axis = "context_onoff";
  int seeds = 5;
  int steps = 400;  // per ablation training run (overrides train.steps)
  void validate() const;
};

// Declarative run configuration: model / data / train / ablation sections.
// Unknown keys are rejected; every field can be overridden by CTRACK_* env
// vars and CLI flags. The effective document is echoed into output dirs.
struct RunConfig {
  ModelConfig model;
  DataConfig data;
  TrainConfig train;
  AblationConfig ablation;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);

  // File (optional) -> env overrides -> done. Flags are applied by the CLI.
  static RunConfig load(const std::string& path_or_empty);

  void validate() const;
};

// Applies CTRACK_<SECTION>_<KEY>=value overrides onto a config document.
void apply_env_overrides(nlohmann::json& doc);

// Canonical serialization hash used to pair checkpoints with snapshots.
uint64_t config_hash(const nlohmann::json& doc);

// Sequence specs are exchanged as JSON (CLI --seq-spec and manifests).
nlohmann::json seq_spec_to_json(const SequenceSpec& s);
SequenceSpec seq_spec_from_json(const nlohmann::json& j);

}  // namespace ctrack
