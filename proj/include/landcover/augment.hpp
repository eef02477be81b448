#pragma once

#include <cstdint>
#include <optional>

#include "landcover/raster.hpp"
#include "landcover/rng.hpp"

namespace landcover {

// Resolution alignment augmentation parameters: a ratio drawn from
// U(r1, r2) with probability apply_prob, skipped otherwise.
struct RaaConfig {
  double r1 = 0.25;
  double r2 = 0.75;
  double apply_prob = 0.5;

  void validate() const;
};

struct ResizedCropConfig {
  double scale_min = 1.0;  // crop area fraction
  double scale_max = 1.0;
  int out_height = 0;      // 0 keeps the input size
  int out_width = 0;
};

struct ColorJitterConfig {
  double brightness = 0.0;
  double contrast = 0.0;
  double saturation = 0.0;
};

struct AugmentPipelineConfig {
  ResizedCropConfig resized_crop;
  double hflip_prob = 0.0;
  double vflip_prob = 0.0;
  double rotate_prob = 0.0;
  // Off: rotations are multiples of 90 degrees. On: uniform angle in
  // [-max_rotation_deg, max_rotation_deg], uncovered mask pixels get ignore.
  bool free_rotation = false;
  double max_rotation_deg = 30.0;
  ColorJitterConfig color_jitter;
  RaaConfig raa;
  std::uint64_t seed = 0;

  void validate() const;
};

// Bilinear resampling with half-pixel centers and clamped borders.
RasterImage resize_bilinear(const RasterImage& image, int out_height,
                            int out_width);

// Box-filter downsampling followed by bilinear upsampling back to the input
// size. Used to synthesize coarse-resolution imagery.
RasterImage degrade_resolution(const RasterImage& image, double ratio);

LabelMask resize_nearest(const LabelMask& mask, int out_height, int out_width);

// Bilinear down to ceil(ratio*H) x ceil(ratio*W), then bilinear back up.
RasterImage raa(const RasterImage& image, double ratio);

std::optional<double> sample_raa_ratio(const RaaConfig& cfg, Rng& rng);

struct AugmentedPair {
  RasterImage image;
  LabelMask mask;
};

// Geometric transforms hit image (bilinear) and mask (nearest) identically.
// Color jitter and RAA touch the image only; RAA runs when allow_raa is set.
AugmentedPair augment_pair(const RasterImage& image, const LabelMask& mask,
                           const AugmentPipelineConfig& cfg, Rng& rng,
                           bool allow_raa);

RasterImage hflip(const RasterImage& image);
LabelMask hflip(const LabelMask& mask);

}  // namespace landcover
