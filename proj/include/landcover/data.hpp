#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "landcover/json_util.hpp"
#include "landcover/raster.hpp"
#include "landcover/rng.hpp"

namespace landcover {

enum class NoiseMode { symmetric_flip, boundary_erosion };

// Procedural paired optical/SAR scenes. Class appearance (colour, texture,
// backscatter) depends only on appearance_seed so datasets generated with
// different seeds share one visual vocabulary.
struct SynthConfig {
  int num_images = 16;
  int height = 32;
  int width = 32;
  int num_classes = 4;
  std::vector<std::string> class_names;  // empty: default names
  double blob_scale = 12.0;              // mean region diameter in pixels
  int sar_speckle_looks = 4;
  double sar_blur_ratio = 0.5;
  double optical_blur_ratio = 1.0;       // < 1 renders coarse optical imagery
  double color_separation = 0.12;
  double texture_strength = 0.2;
  double optical_noise = 0.04;
  double label_noise_rate = 0.0;
  NoiseMode noise_mode = NoiseMode::symmetric_flip;
  int noise_band = 2;                    // boundary_erosion band, pixels
  double val_fraction = 0.25;
  double test_fraction = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t appearance_seed = 7;

  void validate() const;
  std::vector<std::string> resolved_class_names() const;
};

Json to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const Json& node, const std::string& path);

inline constexpr const char* kSplits[] = {"train", "val", "test"};

// Subdirectory names inside root/{split}/.
inline constexpr const char* kOpticalDir = "images";
inline constexpr const char* kSarDir = "sar";
inline constexpr const char* kLabelsDir = "labels";
inline constexpr const char* kCleanLabelsDir = "labels_clean";

struct DatasetSpec {
  std::filesystem::path root;
  TaxonomyPtr taxonomy;
  std::map<std::string, std::vector<std::string>> splits;  // split -> stems
  bool has_optical = false;
  bool has_sar = false;
  std::optional<SynthConfig> synth;

  std::size_t total_samples() const;
};

struct SyntheticSample {
  LabelMask truth;
  LabelMask noisy;
  RasterImage optical;
  RasterImage sar;
};

// Pure function of (cfg, index); rasters are already 16-bit quantized.
SyntheticSample synthesize_sample(const SynthConfig& cfg, const TaxonomyPtr& taxonomy,
                                  std::uint64_t index);

// Mean-1 gamma intensity speckle with shape `looks`.
double sample_speckle(Rng& rng, int looks);

LabelMask apply_symmetric_flip(const LabelMask& mask, double rate, Rng& rng);
// Pixels within `band` (Chebyshev) of a differently labelled pixel are
// reassigned with probability `rate` to the most frequent neighbouring class.
LabelMask apply_boundary_erosion(const LabelMask& mask, double rate, int band, Rng& rng);
// Pixels within `band` of a class boundary.
std::vector<bool> boundary_band(const LabelMask& mask, int band);

// Writes root/manifest.json and root/{split}/{images,sar,labels,labels_clean}.
DatasetSpec generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& root);

struct Sample {
  std::string stem;
  std::optional<RasterImage> optical;
  std::optional<RasterImage> sar;
  std::optional<LabelMask> labels;        // noisy / official pseudo-labels
  std::optional<LabelMask> labels_clean;  // reference labels, evaluation only
};

// In-memory dataset. Every referenced file is decoded and validated at load.
class Dataset {
 public:
  const DatasetSpec& spec() const noexcept { return spec_; }
  const TaxonomyPtr& taxonomy() const noexcept { return spec_.taxonomy; }
  std::size_t size(const std::string& split) const;
  const Sample& sample(const std::string& split, std::size_t index) const;
  const std::vector<Sample>& samples(const std::string& split) const;

  friend Dataset load_dataset(const std::filesystem::path& root, TaxonomyPtr taxonomy);

 private:
  DatasetSpec spec_;
  std::map<std::string, std::vector<Sample>> samples_;
};

// When `taxonomy` is given, labels are remapped by class name from the
// dataset's taxonomy; dataset classes missing from it become ignore.
Dataset load_dataset(const std::filesystem::path& root, TaxonomyPtr taxonomy = nullptr);

TaxonomyPtr read_dataset_taxonomy(const std::filesystem::path& root);

Json taxonomy_to_json(const ClassTaxonomy& taxonomy);
TaxonomyPtr taxonomy_from_json(const Json& node, const std::string& path);

}  // namespace landcover
