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

inline constexpr double kDefaultEmaAlpha = 0.999;
inline constexpr double kDefaultConfidenceThreshold = 0.968;

struct TeacherStudentState {
  ParameterSet teacher;
  ParameterSet student;
  double alpha = kDefaultEmaAlpha;
  std::int64_t iteration = 0;

  void validate() const;
};

// teacher <- alpha * teacher + (1 - alpha) * student, iteration + 1.
TeacherStudentState ema_update(const TeacherStudentState& state);

struct PseudoLabelBatch {
  std::vector<LabelMask> masks;
  std::vector<double> weights;  // per-image confidence fraction
  double threshold = kDefaultConfidenceThreshold;
};

// Fraction of pixels whose max class probability is at least tau.
double confidence_weight(const ProbMap& probs, double tau);

PseudoLabelBatch pseudo_from_probs(std::span<const ProbMap> probs, const TaxonomyPtr& taxonomy,
                                   double tau);

PseudoLabelBatch generate_pseudo(const SegmentationNet& net, const ParameterSet& teacher,
                                 std::span<const RasterImage> images,
                                 const TaxonomyPtr& taxonomy, double tau);

struct Stage1Config {
  AugmentPipelineConfig augment;
  bool raa = true;
  bool raa_on_target = false;
  double ema_alpha = kDefaultEmaAlpha;
  double tau = kDefaultConfidenceThreshold;
  OptimizerConfig optimizer;
  std::int64_t iter_num = 200;
  int batch_size = 2;        // per domain
  int image_size = 0;        // training crop output size, 0 keeps input size
  int eval_interval = 50;
  std::uint64_t seed = 0;
  std::optional<TileConfig> eval_tile;

  void validate() const;
  AugmentPipelineConfig effective_augment() const;
};

struct Stage1Batch {
  std::span<const RasterImage> src_images;
  std::span<const LabelMask> src_labels;
  std::span<const RasterImage> tgt_images;
};

struct Stage1StepResult {
  TeacherStudentState state;
  OptimizerState optimizer;
  LossValue loss;
  double mean_lambda = 0.0;
};

// Augment source (+RAA), pseudo-label the raw target batch with the current
// teacher, augment target with its masks, take one student step, update EMA.
Stage1StepResult stage1_step(const SegmentationNet& net, const TeacherStudentState& state,
                             const OptimizerState& optimizer, const Stage1Batch& batch,
                             const Stage1Config& cfg, Rng& rng);

struct Stage1Data {
  TaxonomyPtr taxonomy;
  std::vector<RasterImage> src_images;
  std::vector<LabelMask> src_labels;
  std::vector<RasterImage> tgt_images;
  std::vector<RasterImage> val_images;  // labelled target validation
  std::vector<LabelMask> val_labels;
};

// Source train split (optical + labels) and target train/val optical images.
Stage1Data stage1_data(const Dataset& source, const Dataset& target);

// Writes out_dir/checkpoint (student), out_dir/metrics.jsonl.
TrainOutcome run_stage1(const ModelConfig& model, const Stage1Config& cfg, const Stage1Data& data,
                        const std::filesystem::path& out_dir, const std::string& config_hash);

}  // namespace landcover
