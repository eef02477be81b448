#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "landcover/augment.hpp"
#include "landcover/data.hpp"
#include "landcover/inference.hpp"
#include "landcover/losses.hpp"
#include "landcover/models.hpp"
#include "landcover/optim.hpp"
#include "landcover/train_common.hpp"

namespace landcover {

enum class LabelSource { official, ours, both };  // both is spelled "union" in configs

std::string_view to_string(LabelSource source);
LabelSource parse_label_source(std::string_view text);

struct Stage2Config {
  SceConfig sce;
  double lovasz_weight = 1.0;
  LovaszClassMode lovasz_mode = LovaszClassMode::present;
  AugmentPipelineConfig augment;  // RAA is never applied in this stage
  OptimizerConfig optimizer;
  std::int64_t iter_num = 300;
  int image_size = 0;
  int batch_size = 8;
  LabelSource label_source = LabelSource::official;
  std::filesystem::path pseudo_dir;  // export-pseudo output, for ours/union
  int eval_interval = 50;
  std::uint64_t seed = 0;
  std::optional<TileConfig> eval_tile;

  void validate() const;
  AugmentPipelineConfig effective_augment() const;
};

struct Stage2StepResult {
  ParameterSet params;
  OptimizerState optimizer;
  LossValue loss;  // terms L_ce, L_sce, L_lovasz
};

Stage2StepResult stage2_step(const SegmentationNet& net, const ParameterSet& params,
                             const OptimizerState& optimizer, std::span<const RasterImage> images,
                             std::span<const LabelMask> masks, const Stage2Config& cfg,
                             Rng& rng, std::int64_t iteration = 0);

struct Stage2Data {
  TaxonomyPtr taxonomy;
  std::vector<RasterImage> images;  // one entry per (image, label source)
  std::vector<LabelMask> labels;
  std::vector<RasterImage> val_images;
  std::vector<LabelMask> val_labels;
};

// Pairs SAR train images with labels from the configured source. Missing
// pseudo-label files are reported together in one ConfigError.
Stage2Data stage2_data(const Dataset& sar, LabelSource source,
                       const std::filesystem::path& pseudo_dir);

// Writes out_dir/checkpoint (last), out_dir/best (best val mIoU) and
// out_dir/metrics.jsonl.
TrainOutcome run_stage2(const ModelConfig& model, const Stage2Config& cfg, const Stage2Data& data,
                        const std::filesystem::path& out_dir, const std::string& config_hash);

}  // namespace landcover
