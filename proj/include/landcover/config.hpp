#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "landcover/augment.hpp"
#include "landcover/data.hpp"
#include "landcover/inference.hpp"
#include "landcover/json_util.hpp"
#include "landcover/models.hpp"
#include "landcover/sartrain.hpp"
#include "landcover/selftrain.hpp"

namespace landcover {

struct DataPaths {
  std::filesystem::path source;    // labelled optical domain
  std::filesystem::path target;    // paired optical + SAR domain
  std::filesystem::path run_root = "runs";
};

struct EvalConfig {
  std::string split = "val";
  std::optional<TileConfig> tile;
  EnsembleMode ensemble_mode = EnsembleMode::probability;
};

// Run configuration. Sections: name, data, synth, model, augment, loss,
// stage1, stage2, eval, ablation. Unknown keys are rejected.
struct RunConfig {
  std::string name = "run";
  DataPaths data;
  std::optional<SynthConfig> synth_source;
  std::optional<SynthConfig> synth_target;
  ModelConfig model;  // in_channels and num_classes are filled in per stage
  Stage1Config stage1;
  Stage2Config stage2;
  EvalConfig eval;
  Json ablation;      // {"stage": 1|2, "matrix": {"dotted.key": [values...]}}
  Json document;      // effective configuration after overrides
};

// `base_dir` anchors relative paths (normally the config file's directory).
RunConfig parse_run_config(const Json& document, const std::filesystem::path& base_dir);

// Applies "dotted.key=value" overrides; values parse as JSON when possible
// and are taken as plain strings otherwise.
Json apply_overrides(Json document, const std::vector<std::string>& overrides);

RunConfig load_run_config(const std::filesystem::path& file,
                          const std::vector<std::string>& overrides = {});

// 16 hex digits of FNV-1a over the canonical effective configuration.
std::string config_hash(const RunConfig& cfg);

}  // namespace landcover
