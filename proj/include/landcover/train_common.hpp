#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "landcover/json_util.hpp"
#include "landcover/losses.hpp"
#include "landcover/models.hpp"
#include "landcover/rng.hpp"

namespace landcover {

// Draws batches from a fresh seeded permutation every epoch.
class EpochSampler {
 public:
  EpochSampler(std::size_t size, Rng rng);
  std::vector<std::size_t> next(std::size_t batch_size);

 private:
  std::size_t size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// Line-delimited JSON records. The file is truncated when opened.
class MetricsLog {
 public:
  explicit MetricsLog(const std::filesystem::path& path);
  void append(const Json& record);

 private:
  std::ofstream out_;
};

// Throws DivergenceError naming the iteration and every loss term.
void check_finite(const LossValue& loss, std::int64_t iteration, const std::string& stage);

struct TrainOutcome {
  std::filesystem::path checkpoint;       // last
  std::filesystem::path best_checkpoint;  // best val mIoU, or last without val data
  std::filesystem::path metrics_log;
  std::optional<double> final_val_miou;
  std::optional<double> best_val_miou;
  ParameterSet params;
};

}  // namespace landcover
