#include "landcover/raster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "landcover/errors.hpp"

namespace landcover {

std::string_view to_string(Modality modality) {
  return modality == Modality::optical ? "optical" : "sar";
}

Modality parse_modality(std::string_view text) {
  if (text == "optical") return Modality::optical;
  if (text == "sar") return Modality::sar;
  throw ValidationError("unknown modality '" + std::string(text) + "'");
}

ClassTaxonomy::ClassTaxonomy(std::vector<std::string> names, int ignore_value)
    : names_(std::move(names)), ignore_value_(ignore_value) {
  if (names_.size() < 2) {
    throw ValidationError("taxonomy needs at least 2 classes");
  }
  std::set<std::string> seen;
  for (const auto& name : names_) {
    if (name.empty()) throw ValidationError("taxonomy has an empty class name");
    if (!seen.insert(name).second) {
      throw ValidationError("duplicate class name '" + name + "'");
    }
  }
  if (is_class(ignore_value_)) {
    throw ValidationError("ignore value " + std::to_string(ignore_value_) +
                          " collides with a class index");
  }
}

std::optional<int> ClassTaxonomy::index_of(std::string_view name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<int>(it - names_.begin());
}

TaxonomyPtr make_taxonomy(std::vector<std::string> names, int ignore_value) {
  return std::make_shared<const ClassTaxonomy>(std::move(names), ignore_value);
}

DenseArray3::DenseArray3(int h, int w, int c, double fill)
    : height(h), width(w), channels(c),
      values(static_cast<std::size_t>(h) * w * c, fill) {
  if (h < 0 || w < 0 || c < 0) {
    throw ValidationError("negative array dimension");
  }
}

RasterImage::RasterImage(int height, int width, int channels,
                         Modality modality, std::vector<double> values,
                         NormalizationInfo info)
    : height_(height), width_(width), channels_(channels),
      modality_(modality), values_(std::move(values)), info_(info) {
  if (height_ < 1 || width_ < 1) {
    throw ValidationError("raster must be at least 1x1");
  }
  if (channels_ != 1 && channels_ != 3) {
    throw ValidationError("raster channel count must be 1 or 3, got " +
                          std::to_string(channels_));
  }
  if (modality_ == Modality::sar && channels_ != 1) {
    throw ValidationError("SAR rasters are single-channel");
  }
  if (values_.size() != pixel_count() * channels_) {
    throw ValidationError("raster data size does not match H x W x C");
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw ValidationError("raster has non-finite value");
  }
}

RasterImage RasterImage::filled(int height, int width, int channels,
                                Modality modality, double value) {
  return RasterImage(height, width, channels, modality,
                     std::vector<double>(static_cast<std::size_t>(height) *
                                             width * channels,
                                         value));
}

LabelMask::LabelMask(int height, int width, std::vector<std::int32_t> values,
                     TaxonomyPtr taxonomy)
    : height_(height), width_(width), values_(std::move(values)),
      taxonomy_(std::move(taxonomy)) {
  if (!taxonomy_) throw ValidationError("label mask requires a taxonomy");
  if (height_ < 1 || width_ < 1) {
    throw ValidationError("label mask must be at least 1x1");
  }
  if (values_.size() != static_cast<std::size_t>(height_) * width_) {
    throw ValidationError("label data size does not match H x W");
  }
  for (auto v : values_) {
    if (!taxonomy_->is_class(v) && v != taxonomy_->ignore_value()) {
      throw ValidationError("label value " + std::to_string(v) +
                            " is neither a class nor the ignore value");
    }
  }
}

LabelMask LabelMask::filled(int height, int width, std::int32_t value,
                            TaxonomyPtr taxonomy) {
  return LabelMask(
      height, width,
      std::vector<std::int32_t>(static_cast<std::size_t>(height) * width,
                                value),
      std::move(taxonomy));
}

ProbMap::ProbMap(int height, int width, int num_classes,
                 std::vector<double> values)
    : height_(height), width_(width), classes_(num_classes),
      values_(std::move(values)) {
  if (height_ < 1 || width_ < 1 || classes_ < 1) {
    throw ValidationError("probability map dimensions must be positive");
  }
  if (values_.size() != pixel_count() * classes_) {
    throw ValidationError("probability data size does not match H x W x K");
  }
  for (std::size_t p = 0; p < pixel_count(); ++p) {
    double sum = 0.0;
    for (double v : pixel(p)) {
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
        throw ValidationError("probability outside [0,1] at pixel " +
                              std::to_string(p));
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > kSumTolerance) {
      std::ostringstream msg;
      msg << "probabilities at pixel " << p << " sum to " << sum;
      throw ValidationError(msg.str());
    }
  }
}

void Batch::validate() const {
  if (images.empty()) throw ValidationError("batch is empty");
  const auto& first = images.front();
  for (const auto& img : images) {
    if (img.height() != first.height() || img.width() != first.width() ||
        img.channels() != first.channels()) {
      throw ValidationError("batch images differ in shape");
    }
  }
  if (!labels.empty()) {
    if (labels.size() != images.size()) {
      throw ValidationError("batch label count differs from image count");
    }
    for (const auto& m : labels) {
      if (m.height() != first.height() || m.width() != first.width()) {
        throw ValidationError("batch label shape differs from image shape");
      }
    }
  }
  if (!weights.empty()) {
    if (weights.size() != images.size()) {
      throw ValidationError("batch weight count differs from image count");
    }
    for (double w : weights) {
      if (!(w >= 0.0 && w <= 1.0)) {
        throw ValidationError("image weight outside [0,1]");
      }
    }
  }
}

DenseArray3 one_hot(const LabelMask& mask, int num_classes) {
  DenseArray3 out(mask.height(), mask.width(), num_classes);
  const auto values = mask.values();
  for (std::size_t p = 0; p < values.size(); ++p) {
    const int v = values[p];
    if (v == mask.ignore_value()) continue;
    if (v < 0 || v >= num_classes) {
      throw ValidationError("label value " + std::to_string(v) +
                            " out of range for K=" +
                            std::to_string(num_classes));
    }
    out.values[p * num_classes + v] = 1.0;
  }
  return out;
}

LabelMask argmax_classes(const ProbMap& probs, TaxonomyPtr taxonomy) {
  if (!taxonomy || taxonomy->num_classes() != probs.num_classes()) {
    throw ValidationError("taxonomy class count does not match probability map");
  }
  std::vector<std::int32_t> labels(probs.pixel_count());
  for (std::size_t p = 0; p < labels.size(); ++p) {
    const auto row = probs.pixel(p);
    int best = 0;
    for (int c = 0; c < probs.num_classes(); ++c) {
      if (!std::isfinite(row[c])) {
        throw ValidationError("non-finite probability");
      }
      if (row[c] > row[best]) best = c;
    }
    labels[p] = best;
  }
  return LabelMask(probs.height(), probs.width(), std::move(labels),
                   std::move(taxonomy));
}

RasterImage normalize_image(const DenseArray3& raw, Modality modality,
                            NormalizationScheme scheme, double range_low,
                            double range_high) {
  for (double v : raw.values) {
    if (!std::isfinite(v)) throw ValidationError("raw raster has non-finite value");
  }
  NormalizationInfo info{scheme, range_low, range_high, false};
  if (scheme == NormalizationScheme::min_max) {
    const auto [lo, hi] = std::minmax_element(raw.values.begin(), raw.values.end());
    info.low = raw.values.empty() ? 0.0 : *lo;
    info.high = raw.values.empty() ? 0.0 : *hi;
  } else if (!(range_high > range_low)) {
    throw ValidationError("fixed normalization range must satisfy low < high");
  }

  std::vector<double> out(raw.values.size(), 0.0);
  if (info.high > info.low) {
    const double scale = 1.0 / (info.high - info.low);
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = std::clamp((raw.values[i] - info.low) * scale, 0.0, 1.0);
    }
  } else {
    info.degenerate = true;
  }
  return RasterImage(raw.height, raw.width, raw.channels, modality,
                     std::move(out), info);
}

}  // namespace landcover
