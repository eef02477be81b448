#include "landcover/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <set>
#include <sstream>

#include "landcover/augment.hpp"
#include "landcover/errors.hpp"
#include "landcover/io.hpp"

namespace landcover {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kTagTruth = 1;
constexpr std::uint64_t kTagOptical = 2;
constexpr std::uint64_t kTagNoise = 3;
constexpr std::uint64_t kTagSar = 4;
constexpr std::uint64_t kTagAppearance = 5;
constexpr double kSarScale = 2.0;

const std::vector<std::string> kDefaultNames = {
    "bareland", "rangeland", "developed", "road", "tree",
    "water", "agriculture", "building", "background"};

std::string_view to_string(NoiseMode mode) {
  return mode == NoiseMode::symmetric_flip ? "symmetric_flip" : "boundary_erosion";
}

NoiseMode parse_noise_mode(const std::string& text, const std::string& key) {
  if (text == "symmetric_flip") return NoiseMode::symmetric_flip;
  if (text == "boundary_erosion") return NoiseMode::boundary_erosion;
  throw ConfigError("config key '" + key + "' must be symmetric_flip or boundary_erosion");
}

int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
  return i;
}

// Separable Gaussian blur of a single-channel H x W field, reflected borders.
std::vector<double> gaussian_blur(const std::vector<double>& field, int h, int w,
                                  double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double ksum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    ksum += kernel[i + radius];
  }
  for (auto& k : kernel) k /= ksum;
  std::vector<double> tmp(field.size()), out(field.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) s += kernel[i + radius] * field[y * w + reflect(x + i, w)];
      tmp[y * w + x] = s;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) s += kernel[i + radius] * tmp[reflect(y + i, h) * w + x];
      out[y * w + x] = s;
    }
  }
  return out;
}

struct ClassAppearance {
  std::array<double, 3> color;
  int texture_kind;
  double backscatter;
};

std::vector<ClassAppearance> class_appearance(const SynthConfig& cfg) {
  Rng rng = derive_rng(cfg.appearance_seed, {kTagAppearance});
  const int k = cfg.num_classes;
  // Orthonormal chroma axes in RGB space.
  const std::array<double, 3> e1 = {1 / std::sqrt(2.0), -1 / std::sqrt(2.0), 0.0};
  const std::array<double, 3> e2 = {1 / std::sqrt(6.0), 1 / std::sqrt(6.0), -2 / std::sqrt(6.0)};
  std::vector<int> rank(k);
  for (int c = 0; c < k; ++c) rank[c] = c;
  std::shuffle(rank.begin(), rank.end(), rng);

  std::vector<ClassAppearance> out(k);
  for (int c = 0; c < k; ++c) {
    const double angle = 2.0 * std::numbers::pi * c / k + uniform(rng, -0.3, 0.3);
    const double lum = 0.5 * cfg.color_separation * uniform(rng, -1.0, 1.0);
    for (int ch = 0; ch < 3; ++ch) {
      out[c].color[ch] = 0.5 + lum +
                         cfg.color_separation * (std::cos(angle) * e1[ch] + std::sin(angle) * e2[ch]);
    }
    out[c].texture_kind = c % 4;
    out[c].backscatter = 0.15 + 0.7 * rank[c] / std::max(1, k - 1);
  }
  return out;
}

// Zero-mean high-frequency pattern in [-1, 1] for each texture kind.
double texture(int kind, int y, int x, double phase, int cls) {
  const double period = 3.0 + (cls / 4);
  switch (kind) {
    case 1: return std::sin(2.0 * std::numbers::pi * y / period + phase);
    case 2: return std::sin(2.0 * std::numbers::pi * x / period + phase);
    case 3: return ((x + y) % 2 == 0) ? 1.0 : -1.0;
    default: return 0.0;
  }
}

LabelMask make_truth(const SynthConfig& cfg, const TaxonomyPtr& taxonomy, std::uint64_t index) {
  Rng rng = derive_rng(cfg.seed, {index, kTagTruth});
  std::normal_distribution<double> normal(0.0, 1.0);
  const int h = cfg.height, w = cfg.width, k = cfg.num_classes;
  const std::size_t n = static_cast<std::size_t>(h) * w;
  const double sigma = std::max(0.5, cfg.blob_scale / 4.0);
  std::vector<std::vector<double>> fields(k);
  for (int c = 0; c < k; ++c) {
    std::vector<double> coarse(n), fine(n);
    for (auto& v : coarse) v = normal(rng);
    for (auto& v : fine) v = normal(rng);
    auto a = gaussian_blur(coarse, h, w, sigma);
    auto b = gaussian_blur(fine, h, w, std::max(0.5, sigma / 3.0));
    // Blurred white noise shrinks by ~1/(2 sqrt(pi) sigma); rescale both
    // scales to unit variance before mixing.
    const double sa = 2.0 * std::sqrt(std::numbers::pi) * sigma;
    const double sb = 2.0 * std::sqrt(std::numbers::pi) * std::max(0.5, sigma / 3.0);
    fields[c].resize(n);
    for (std::size_t p = 0; p < n; ++p) fields[c][p] = sa * a[p] + 0.35 * sb * b[p];
  }
  std::vector<std::int32_t> labels(n);
  for (std::size_t p = 0; p < n; ++p) {
    int best = 0;
    for (int c = 1; c < k; ++c) {
      if (fields[c][p] > fields[best][p]) best = c;
    }
    labels[p] = best;
  }
  return LabelMask(h, w, std::move(labels), taxonomy);
}

RasterImage render_optical(const SynthConfig& cfg, const LabelMask& truth,
                           const std::vector<ClassAppearance>& look, std::uint64_t index) {
  Rng rng = derive_rng(cfg.seed, {index, kTagOptical});
  std::normal_distribution<double> noise(0.0, cfg.optical_noise);
  const int h = cfg.height, w = cfg.width;
  const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  std::vector<double> v(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int c = truth.at(y, x);
      const double t = cfg.texture_strength * texture(look[c].texture_kind, y, x, phase, c);
      for (int ch = 0; ch < 3; ++ch) {
        v[(static_cast<std::size_t>(y) * w + x) * 3 + ch] =
            std::clamp(look[c].color[ch] + t + noise(rng), 0.0, 1.0);
      }
    }
  }
  RasterImage img(h, w, 3, Modality::optical, std::move(v));
  if (cfg.optical_blur_ratio < 1.0) img = degrade_resolution(img, cfg.optical_blur_ratio);
  return io::quantize16(img);
}

RasterImage render_sar(const SynthConfig& cfg, const LabelMask& truth,
                       const std::vector<ClassAppearance>& look, std::uint64_t index) {
  Rng rng = derive_rng(cfg.seed, {index, kTagSar});
  std::vector<double> v(truth.pixel_count());
  for (std::size_t p = 0; p < v.size(); ++p) {
    const double intensity = look[truth.values()[p]].backscatter * sample_speckle(rng, cfg.sar_speckle_looks);
    v[p] = std::clamp(intensity / kSarScale, 0.0, 1.0);
  }
  RasterImage img(cfg.height, cfg.width, 1, Modality::sar, std::move(v));
  if (cfg.sar_blur_ratio < 1.0) img = degrade_resolution(img, cfg.sar_blur_ratio);
  return io::quantize16(img);
}

std::string stem_for(std::uint64_t index) {
  std::ostringstream ss;
  ss << 's' << std::setw(5) << std::setfill('0') << index;
  return ss.str();
}

}  // namespace

void SynthConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("synth: " + msg); };
  if (num_images < 0) fail("num_images must be >= 0");
  if (height < 1 || width < 1) fail("height and width must be positive");
  if (num_classes < 2 || num_classes > 254) fail("num_classes must be in [2, 254]");
  if (!class_names.empty() && static_cast<int>(class_names.size()) != num_classes) {
    fail("class_names length must equal num_classes");
  }
  if (class_names.empty() && num_classes > static_cast<int>(kDefaultNames.size())) {
    fail("class_names required when num_classes exceeds the default list");
  }
  if (!(blob_scale > 0.0)) fail("blob_scale must be positive");
  if (sar_speckle_looks < 1) fail("sar_speckle_looks must be >= 1");
  if (!(sar_blur_ratio > 0.0 && sar_blur_ratio <= 1.0)) fail("sar_blur_ratio must lie in (0,1]");
  if (!(optical_blur_ratio > 0.0 && optical_blur_ratio <= 1.0)) fail("optical_blur_ratio must lie in (0,1]");
  if (!(label_noise_rate >= 0.0 && label_noise_rate < 1.0)) fail("label_noise_rate must lie in [0,1)");
  if (noise_band < 0) fail("noise_band must be >= 0");
  if (!(color_separation >= 0.0) || !(texture_strength >= 0.0) || !(optical_noise >= 0.0)) {
    fail("appearance parameters must be non-negative");
  }
  if (!(val_fraction >= 0.0 && test_fraction >= 0.0 && val_fraction + test_fraction <= 1.0)) {
    fail("split fractions must be non-negative and sum to at most 1");
  }
}

std::vector<std::string> SynthConfig::resolved_class_names() const {
  if (!class_names.empty()) return class_names;
  return {kDefaultNames.begin(), kDefaultNames.begin() + num_classes};
}

Json to_json(const SynthConfig& cfg) {
  return Json{{"num_images", cfg.num_images},
              {"height", cfg.height},
              {"width", cfg.width},
              {"num_classes", cfg.num_classes},
              {"class_names", cfg.resolved_class_names()},
              {"blob_scale", cfg.blob_scale},
              {"sar_speckle_looks", cfg.sar_speckle_looks},
              {"sar_blur_ratio", cfg.sar_blur_ratio},
              {"optical_blur_ratio", cfg.optical_blur_ratio},
              {"color_separation", cfg.color_separation},
              {"texture_strength", cfg.texture_strength},
              {"optical_noise", cfg.optical_noise},
              {"label_noise_rate", cfg.label_noise_rate},
              {"noise_mode", std::string(to_string(cfg.noise_mode))},
              {"noise_band", cfg.noise_band},
              {"val_fraction", cfg.val_fraction},
              {"test_fraction", cfg.test_fraction},
              {"seed", cfg.seed},
              {"appearance_seed", cfg.appearance_seed}};
}

SynthConfig synth_config_from_json(const Json& node, const std::string& path) {
  StrictObject obj(node, path);
  SynthConfig cfg;
  obj.read("num_images", cfg.num_images);
  obj.read("height", cfg.height);
  obj.read("width", cfg.width);
  obj.read("num_classes", cfg.num_classes);
  obj.read("class_names", cfg.class_names);
  obj.read("blob_scale", cfg.blob_scale);
  obj.read("sar_speckle_looks", cfg.sar_speckle_looks);
  obj.read("sar_blur_ratio", cfg.sar_blur_ratio);
  obj.read("optical_blur_ratio", cfg.optical_blur_ratio);
  obj.read("color_separation", cfg.color_separation);
  obj.read("texture_strength", cfg.texture_strength);
  obj.read("optical_noise", cfg.optical_noise);
  obj.read("label_noise_rate", cfg.label_noise_rate);
  std::string mode;
  if (obj.read("noise_mode", mode)) cfg.noise_mode = parse_noise_mode(mode, obj.qualified("noise_mode"));
  obj.read("noise_band", cfg.noise_band);
  obj.read("val_fraction", cfg.val_fraction);
  obj.read("test_fraction", cfg.test_fraction);
  obj.read("seed", cfg.seed);
  obj.read("appearance_seed", cfg.appearance_seed);
  obj.finish();
  try {
    cfg.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return cfg;
}

std::size_t DatasetSpec::total_samples() const {
  std::size_t n = 0;
  for (const auto& [_, stems] : splits) n += stems.size();
  return n;
}

double sample_speckle(Rng& rng, int looks) {
  return std::gamma_distribution<double>(looks, 1.0 / looks)(rng);
}

LabelMask apply_symmetric_flip(const LabelMask& mask, double rate, Rng& rng) {
  const int k = mask.num_classes();
  std::vector<std::int32_t> out(mask.values().begin(), mask.values().end());
  for (auto& v : out) {
    if (v == mask.ignore_value() || !bernoulli(rng, rate)) continue;
    const int other = uniform_int(rng, 0, k - 2);
    v = other >= v ? other + 1 : other;
  }
  return LabelMask(mask.height(), mask.width(), std::move(out), mask.taxonomy());
}

std::vector<bool> boundary_band(const LabelMask& mask, int band) {
  const int h = mask.height(), w = mask.width();
  std::vector<bool> in_band(mask.pixel_count(), false);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int v = mask.at(y, x);
      for (int dy = -band; dy <= band && !in_band[y * w + x]; ++dy) {
        for (int dx = -band; dx <= band; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          const int u = mask.at(yy, xx);
          if (u != v && u != mask.ignore_value()) {
            in_band[y * w + x] = true;
            break;
          }
        }
      }
    }
  }
  return in_band;
}

LabelMask apply_boundary_erosion(const LabelMask& mask, double rate, int band, Rng& rng) {
  const int h = mask.height(), w = mask.width(), k = mask.num_classes();
  const auto in_band = boundary_band(mask, band);
  std::vector<std::int32_t> out(mask.values().begin(), mask.values().end());
  std::vector<int> votes(k);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * w + x;
      const int v = mask.at(y, x);
      if (!in_band[p] || v == mask.ignore_value() || !bernoulli(rng, rate)) continue;
      std::fill(votes.begin(), votes.end(), 0);
      for (int dy = -band; dy <= band; ++dy) {
        for (int dx = -band; dx <= band; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          const int u = mask.at(yy, xx);
          if (u != v && u != mask.ignore_value()) ++votes[u];
        }
      }
      out[p] = static_cast<std::int32_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    }
  }
  return LabelMask(h, w, std::move(out), mask.taxonomy());
}

SyntheticSample synthesize_sample(const SynthConfig& cfg, const TaxonomyPtr& taxonomy,
                                  std::uint64_t index) {
  cfg.validate();
  const auto look = class_appearance(cfg);
  LabelMask truth = make_truth(cfg, taxonomy, index);
  Rng noise_rng = derive_rng(cfg.seed, {index, kTagNoise});
  LabelMask noisy = truth;
  if (cfg.label_noise_rate > 0.0) {
    noisy = cfg.noise_mode == NoiseMode::symmetric_flip
                ? apply_symmetric_flip(truth, cfg.label_noise_rate, noise_rng)
                : apply_boundary_erosion(truth, cfg.label_noise_rate, cfg.noise_band, noise_rng);
  }
  RasterImage optical = render_optical(cfg, truth, look, index);
  RasterImage sar = render_sar(cfg, truth, look, index);
  return {std::move(truth), std::move(noisy), std::move(optical), std::move(sar)};
}

Json taxonomy_to_json(const ClassTaxonomy& taxonomy) {
  return Json{{"names", taxonomy.names()}, {"ignore_value", taxonomy.ignore_value()}};
}

TaxonomyPtr taxonomy_from_json(const Json& node, const std::string& path) {
  StrictObject obj(node, path);
  std::vector<std::string> names;
  int ignore = kDefaultIgnoreValue;
  if (!obj.read("names", names)) throw ConfigError("'" + obj.qualified("names") + "' is required");
  obj.read("ignore_value", ignore);
  obj.finish();
  try {
    return make_taxonomy(std::move(names), ignore);
  } catch (const ValidationError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

DatasetSpec generate_synthetic(const SynthConfig& cfg, const fs::path& root) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(root, ec);
  const auto probe = root / ".write_probe";
  {
    std::ofstream test(probe);
    if (ec || !test) throw IoError("dataset root '" + root.string() + "' is not writable");
  }
  fs::remove(probe);

  DatasetSpec spec;
  spec.root = root;
  spec.taxonomy = make_taxonomy(cfg.resolved_class_names());
  spec.has_optical = spec.has_sar = true;
  spec.synth = cfg;

  const int n_val = static_cast<int>(std::lround(cfg.num_images * cfg.val_fraction));
  const int n_test = static_cast<int>(std::lround(cfg.num_images * cfg.test_fraction));
  const int n_train = cfg.num_images - n_val - n_test;
  for (const char* split : kSplits) {
    spec.splits[split] = {};
    for (const char* sub : {kOpticalDir, kSarDir, kLabelsDir, kCleanLabelsDir}) {
      fs::create_directories(root / split / sub);
    }
  }
  for (int i = 0; i < cfg.num_images; ++i) {
    const char* split = i < n_train ? "train" : i < n_train + n_val ? "val" : "test";
    const auto stem = stem_for(static_cast<std::uint64_t>(i));
    const auto s = synthesize_sample(cfg, spec.taxonomy, static_cast<std::uint64_t>(i));
    const auto dir = root / split;
    io::write_raster(dir / kOpticalDir / (stem + ".png"), s.optical);
    io::write_raster(dir / kSarDir / (stem + ".png"), s.sar);
    io::write_labels(dir / kLabelsDir / (stem + ".png"), s.noisy);
    io::write_labels(dir / kCleanLabelsDir / (stem + ".png"), s.truth);
    spec.splits[split].push_back(stem);
  }

  Json manifest{{"format", "landcover-dataset-v1"},
                {"taxonomy", taxonomy_to_json(*spec.taxonomy)},
                {"synth", to_json(cfg)},
                {"splits", {{"train", n_train}, {"val", n_val}, {"test", n_test}}}};
  io::write_text(root / "manifest.json", manifest.dump(2) + "\n");
  return spec;
}

TaxonomyPtr read_dataset_taxonomy(const fs::path& root) {
  const auto path = root / "manifest.json";
  if (!fs::exists(path)) throw IoError("dataset manifest '" + path.string() + "' not found");
  Json manifest;
  try {
    manifest = Json::parse(io::read_text(path));
  } catch (const Json::parse_error& e) {
    throw IoError("'" + path.string() + "': " + e.what());
  }
  if (!manifest.contains("taxonomy")) throw IoError("'" + path.string() + "' lacks a taxonomy");
  return taxonomy_from_json(manifest["taxonomy"], "manifest.taxonomy");
}

std::size_t Dataset::size(const std::string& split) const {
  auto it = samples_.find(split);
  return it == samples_.end() ? 0 : it->second.size();
}

const std::vector<Sample>& Dataset::samples(const std::string& split) const {
  static const std::vector<Sample> kEmpty;
  auto it = samples_.find(split);
  return it == samples_.end() ? kEmpty : it->second;
}

const Sample& Dataset::sample(const std::string& split, std::size_t index) const {
  const auto& s = samples(split);
  if (index >= s.size()) {
    throw ValidationError("sample index " + std::to_string(index) + " out of range for split '" +
                          split + "'");
  }
  return s[index];
}

namespace {

// Dataset class index -> requested taxonomy index (or ignore).
std::vector<int> build_remap(const ClassTaxonomy& from, const ClassTaxonomy& to) {
  for (const auto& name : to.names()) {
    if (!from.index_of(name)) {
      throw ConfigError("class '" + name + "' is not part of the dataset taxonomy");
    }
  }
  std::vector<int> remap(from.num_classes());
  for (int c = 0; c < from.num_classes(); ++c) {
    remap[c] = to.index_of(from.names()[c]).value_or(to.ignore_value());
  }
  return remap;
}

}  // namespace

Dataset load_dataset(const fs::path& root, TaxonomyPtr taxonomy) {
  if (!fs::is_directory(root)) throw IoError("dataset root '" + root.string() + "' does not exist");
  const TaxonomyPtr file_taxonomy = read_dataset_taxonomy(root);
  if (!taxonomy) taxonomy = file_taxonomy;
  const auto remap = build_remap(*file_taxonomy, *taxonomy);

  Dataset ds;
  ds.spec_.root = root;
  ds.spec_.taxonomy = taxonomy;
  std::vector<std::string> problems;

  for (const char* split : kSplits) {
    const auto split_dir = root / split;
    auto& samples = ds.samples_[split];
    auto& stems = ds.spec_.splits[split];
    if (!fs::is_directory(split_dir)) continue;

    std::vector<std::string> subdirs;
    for (const char* sub : {kOpticalDir, kSarDir, kLabelsDir, kCleanLabelsDir}) {
      if (fs::is_directory(split_dir / sub)) subdirs.push_back(sub);
    }
    std::set<std::string> stem_set;
    for (const auto& sub : subdirs) {
      for (const auto& entry : fs::directory_iterator(split_dir / sub)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png") {
          stem_set.insert(entry.path().stem().string());
        }
      }
    }
    for (const auto& stem : stem_set) {
      Sample s;
      s.stem = stem;
      bool ok = true;
      for (const auto& sub : subdirs) {
        const auto path = split_dir / sub / (stem + ".png");
        if (!fs::exists(path)) {
          problems.push_back(path.string() + ": missing paired file");
          ok = false;
          continue;
        }
        try {
          if (sub == kOpticalDir) {
            s.optical = io::read_raster(path, Modality::optical);
          } else if (sub == kSarDir) {
            s.sar = io::read_raster(path, Modality::sar);
          } else {
            auto raw = io::read_labels(path, file_taxonomy);
            std::vector<std::int32_t> v(raw.values().begin(), raw.values().end());
            for (auto& x : v) x = raw.ignore_value() == x ? taxonomy->ignore_value() : remap[x];
            LabelMask mask(raw.height(), raw.width(), std::move(v), taxonomy);
            (sub == kLabelsDir ? s.labels : s.labels_clean) = std::move(mask);
          }
        } catch (const std::exception& e) {
          problems.push_back(path.string() + ": " + e.what());
          ok = false;
        }
      }
      if (!ok) continue;
      std::optional<std::pair<int, int>> shape;
      auto check = [&](int h, int w) {
        if (!shape) shape = {h, w};
        if (shape->first != h || shape->second != w) {
          problems.push_back((split_dir / stem).string() + ": paired files differ in size");
          ok = false;
        }
      };
      if (s.optical) check(s.optical->height(), s.optical->width());
      if (s.sar) check(s.sar->height(), s.sar->width());
      if (s.labels) check(s.labels->height(), s.labels->width());
      if (s.labels_clean) check(s.labels_clean->height(), s.labels_clean->width());
      if (!ok) continue;
      ds.spec_.has_optical |= s.optical.has_value();
      ds.spec_.has_sar |= s.sar.has_value();
      stems.push_back(stem);
      samples.push_back(std::move(s));
    }
  }

  if (!problems.empty()) {
    std::string msg = "dataset '" + root.string() + "' failed to load:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw IoError(msg);
  }

  const Json manifest = Json::parse(io::read_text(root / "manifest.json"));
  if (manifest.contains("synth")) ds.spec_.synth = synth_config_from_json(manifest["synth"], "manifest.synth");
  return ds;
}

}  // namespace landcover
