#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "landcover/raster.hpp"

namespace landcover {

// K x K pixel counts, rows = reference class, columns = predicted class.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  int num_classes() const noexcept { return classes_; }
  std::int64_t at(int truth, int predicted) const {
    return counts_[static_cast<std::size_t>(truth) * classes_ + predicted];
  }
  std::int64_t total() const noexcept;
  const std::vector<std::int64_t>& counts() const noexcept { return counts_; }

  // Adds one mask pair in place. Ignored reference pixels are skipped.
  void add(const LabelMask& truth, const LabelMask& predicted);
  void merge(const ConfusionMatrix& other);

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  int classes_;
  std::vector<std::int64_t> counts_;
};

ConfusionMatrix accumulate(ConfusionMatrix cm, const LabelMask& truth,
                           const LabelMask& predicted);

struct MiouResult {
  std::vector<double> per_class_iou;  // NaN where the class has zero union
  std::vector<bool> present;
  double miou = 0.0;
};

// IoU_c = tp / (row_c + col_c - tp); zero-union classes are left out of the
// mean. Throws UndefinedMetricError for an empty matrix.
MiouResult miou(const ConfusionMatrix& cm);

// Per-class IoU table with a trailing mIoU line, values in percent.
std::string format_report(const MiouResult& result, const ClassTaxonomy& taxonomy,
                          const std::string& title = "");

}  // namespace landcover
