#include "landcover/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "landcover/errors.hpp"

namespace landcover {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : classes_(num_classes),
      counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
  if (num_classes < 1) throw ValidationError("confusion matrix needs K >= 1");
}

std::int64_t ConfusionMatrix::total() const noexcept {
  return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0});
}

void ConfusionMatrix::add(const LabelMask& truth, const LabelMask& predicted) {
  if (truth.height() != predicted.height() || truth.width() != predicted.width()) {
    throw ValidationError("reference and predicted masks differ in shape");
  }
  if (truth.num_classes() != classes_ || predicted.num_classes() != classes_) {
    throw ValidationError("mask taxonomy differs from confusion matrix K");
  }
  const auto t = truth.values();
  const auto p = predicted.values();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (truth.is_ignored(i)) continue;
    if (p[i] < 0 || p[i] >= classes_) {
      throw ValidationError("predicted mask holds a non-class value");
    }
    ++counts_[static_cast<std::size_t>(t[i]) * classes_ + p[i]];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw ValidationError("cannot merge matrices of different K");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

ConfusionMatrix accumulate(ConfusionMatrix cm, const LabelMask& truth,
                           const LabelMask& predicted) {
  cm.add(truth, predicted);
  return cm;
}

MiouResult miou(const ConfusionMatrix& cm) {
  if (cm.total() == 0) {
    throw UndefinedMetricError("mIoU is undefined for an empty confusion matrix");
  }
  const int k = cm.num_classes();
  MiouResult out;
  out.per_class_iou.assign(k, std::numeric_limits<double>::quiet_NaN());
  out.present.assign(k, false);
  double sum = 0.0;
  int included = 0;
  for (int c = 0; c < k; ++c) {
    std::int64_t row = 0, col = 0;
    for (int j = 0; j < k; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    const std::int64_t tp = cm.at(c, c);
    const std::int64_t uni = row + col - tp;
    if (uni == 0) continue;
    out.present[c] = true;
    out.per_class_iou[c] = static_cast<double>(tp) / static_cast<double>(uni);
    sum += out.per_class_iou[c];
    ++included;
  }
  out.miou = sum / included;
  return out;
}

std::string format_report(const MiouResult& result, const ClassTaxonomy& taxonomy,
                          const std::string& title) {
  std::size_t name_width = 5;
  for (const auto& n : taxonomy.names()) name_width = std::max(name_width, n.size());
  std::ostringstream out;
  if (!title.empty()) out << title << '\n';
  out << std::left << std::setw(static_cast<int>(name_width)) << "class"
      << "  IoU(%)\n";
  out << std::string(name_width + 8, '-') << '\n';
  out << std::fixed << std::setprecision(2);
  for (int c = 0; c < taxonomy.num_classes(); ++c) {
    out << std::left << std::setw(static_cast<int>(name_width)) << taxonomy.names()[c] << "  ";
    if (result.present[c]) {
      out << std::right << std::setw(6) << 100.0 * result.per_class_iou[c] << '\n';
    } else {
      out << std::right << std::setw(6) << "n/a" << '\n';
    }
  }
  out << std::string(name_width + 8, '-') << '\n';
  out << std::left << std::setw(static_cast<int>(name_width)) << "mIoU" << "  "
      << std::right << std::setw(6) << 100.0 * result.miou << '\n';
  return out.str();
}

}  // namespace landcover
