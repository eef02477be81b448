#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "landcover/models.hpp"
#include "landcover/raster.hpp"

namespace landcover {

// A checkpoint is a directory holding params.bin (binary parameter arrays)
// and manifest.txt (key=value lines: model config, taxonomy, iteration,
// config hash, plus free-form extras).
struct Checkpoint {
  ModelConfig model;
  TaxonomyPtr taxonomy;
  std::int64_t iteration = 0;
  std::string config_hash;
  ParameterSet params;
  std::map<std::string, std::string> extra;
};

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

void write_params(const std::filesystem::path& path, const ParameterSet& params);
ParameterSet read_params(const std::filesystem::path& path);

}  // namespace landcover
