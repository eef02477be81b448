#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace landcover {

inline constexpr int kDefaultIgnoreValue = 255;

enum class Modality { optical, sar };

std::string_view to_string(Modality modality);
Modality parse_modality(std::string_view text);

// Ordered class names plus the reserved ignore label.
class ClassTaxonomy {
 public:
  explicit ClassTaxonomy(std::vector<std::string> names,
                         int ignore_value = kDefaultIgnoreValue);

  int num_classes() const noexcept { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  int ignore_value() const noexcept { return ignore_value_; }
  bool is_class(int value) const noexcept {
    return value >= 0 && value < num_classes();
  }
  std::optional<int> index_of(std::string_view name) const;

  friend bool operator==(const ClassTaxonomy&, const ClassTaxonomy&) = default;

 private:
  std::vector<std::string> names_;
  int ignore_value_;
};

using TaxonomyPtr = std::shared_ptr<const ClassTaxonomy>;

TaxonomyPtr make_taxonomy(std::vector<std::string> names,
                          int ignore_value = kDefaultIgnoreValue);

// Unconstrained row-major H x W x C array. Carries logits and gradients.
struct DenseArray3 {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> values;

  DenseArray3() = default;
  DenseArray3(int h, int w, int c, double fill = 0.0);

  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  double& at(int y, int x, int c) noexcept { return values[index(y, x, c)]; }
  double at(int y, int x, int c) const noexcept {
    return values[index(y, x, c)];
  }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(height) * width;
  }
};

enum class NormalizationScheme { min_max, fixed_range };

struct NormalizationInfo {
  NormalizationScheme scheme = NormalizationScheme::fixed_range;
  double low = 0.0;
  double high = 1.0;
  // Set when min-max scaling saw a constant raster; values are all zero.
  bool degenerate = false;
};

// H x W x C raster, interleaved channels, values in [0, 1].
class RasterImage {
 public:
  RasterImage(int height, int width, int channels, Modality modality,
              std::vector<double> values, NormalizationInfo info = {});

  static RasterImage filled(int height, int width, int channels,
                            Modality modality, double value);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  Modality modality() const noexcept { return modality_; }
  const NormalizationInfo& normalization() const noexcept { return info_; }
  std::span<const double> values() const noexcept { return values_; }
  double at(int y, int x, int c) const noexcept {
    return values_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(height_) * width_;
  }

  friend bool operator==(const RasterImage& a, const RasterImage& b) {
    return a.height_ == b.height_ && a.width_ == b.width_ &&
           a.channels_ == b.channels_ && a.modality_ == b.modality_ &&
           a.values_ == b.values_;
  }

 private:
  int height_;
  int width_;
  int channels_;
  Modality modality_;
  std::vector<double> values_;
  NormalizationInfo info_;
};

// H x W class-id raster. Every value is a class index or the ignore value.
class LabelMask {
 public:
  LabelMask(int height, int width, std::vector<std::int32_t> values,
            TaxonomyPtr taxonomy);

  static LabelMask filled(int height, int width, std::int32_t value,
                          TaxonomyPtr taxonomy);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::span<const std::int32_t> values() const noexcept { return values_; }
  std::int32_t at(int y, int x) const noexcept {
    return values_[static_cast<std::size_t>(y) * width_ + x];
  }
  const TaxonomyPtr& taxonomy() const noexcept { return taxonomy_; }
  int num_classes() const noexcept { return taxonomy_->num_classes(); }
  int ignore_value() const noexcept { return taxonomy_->ignore_value(); }
  bool is_ignored(std::size_t pixel) const noexcept {
    return values_[pixel] == taxonomy_->ignore_value();
  }
  std::size_t pixel_count() const noexcept { return values_.size(); }

  friend bool operator==(const LabelMask& a, const LabelMask& b) {
    return a.height_ == b.height_ && a.width_ == b.width_ &&
           a.values_ == b.values_;
  }

 private:
  int height_;
  int width_;
  std::vector<std::int32_t> values_;
  TaxonomyPtr taxonomy_;
};

// H x W x K per-pixel class distribution.
class ProbMap {
 public:
  static constexpr double kSumTolerance = 1e-5;

  ProbMap(int height, int width, int num_classes, std::vector<double> values);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int num_classes() const noexcept { return classes_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<const double> pixel(std::size_t index) const noexcept {
    return std::span<const double>(values_).subspan(index * classes_, classes_);
  }
  double at(int y, int x, int c) const noexcept {
    return values_[(static_cast<std::size_t>(y) * width_ + x) * classes_ + c];
  }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(height_) * width_;
  }

 private:
  int height_;
  int width_;
  int classes_;
  std::vector<double> values_;
};

struct Batch {
  std::vector<RasterImage> images;
  std::vector<LabelMask> labels;  // empty for unlabeled batches
  std::vector<double> weights;    // per-image lambda; empty means all 1

  std::size_t size() const noexcept { return images.size(); }
  void validate() const;
};

// Ignored pixels produce all-zero rows.
DenseArray3 one_hot(const LabelMask& mask, int num_classes);

// Ties resolve to the lowest class index.
LabelMask argmax_classes(const ProbMap& probs, TaxonomyPtr taxonomy);

RasterImage normalize_image(
    const DenseArray3& raw, Modality modality,
    NormalizationScheme scheme = NormalizationScheme::min_max,
    double range_low = 0.0, double range_high = 1.0);

}  // namespace landcover
