#include <doctest.h>

#include <fstream>

#include "landcover/data.hpp"
#include "landcover/errors.hpp"
#include "landcover/io.hpp"
#include "test_support.hpp"

using namespace landcover;
namespace fs = std::filesystem;

namespace {

SynthConfig small_synth() {
  SynthConfig s;
  s.num_images = 6;
  s.height = 16;
  s.width = 16;
  s.seed = 3;
  return s;
}

std::string directory_digest(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root));
  }
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += f.string() + "\n" + io::read_text(root / f);
  return io::fnv1a_hex(all);
}

}  // namespace

TEST_CASE("clean generation leaves labels untouched") {
  const auto cfg = small_synth();
  const auto tax = make_taxonomy(cfg.resolved_class_names());
  for (std::uint64_t i = 0; i < 4; ++i) {
    const auto s = synthesize_sample(cfg, tax, i);
    CHECK(s.truth == s.noisy);
    CHECK(s.optical.channels() == 3);
    CHECK(s.sar.channels() == 1);
  }
}

TEST_CASE("generation is a function of seed and index only") {
  const auto cfg = small_synth();
  const auto tax = make_taxonomy(cfg.resolved_class_names());
  const auto a = synthesize_sample(cfg, tax, 5);
  const auto b = synthesize_sample(cfg, tax, 5);
  CHECK(a.truth == b.truth);
  CHECK(a.optical == b.optical);
  CHECK(a.sar == b.sar);
  const auto c = synthesize_sample(cfg, tax, 4);
  CHECK_FALSE(a.truth == c.truth);
}

TEST_CASE("symmetric flip rate matches the configured noise") {
  const auto tax = testing::taxonomy(4);
  auto rng = derive_rng(50, {});
  const auto clean = testing::random_labels(rng, 1000, 1000, tax);
  const auto noisy = apply_symmetric_flip(clean, 0.3, rng);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < clean.pixel_count(); ++i) changed += clean.values()[i] != noisy.values()[i];
  CHECK(std::abs(double(changed) / clean.pixel_count() - 0.3) < 0.005);
}

TEST_CASE("boundary erosion only changes pixels inside the band") {
  auto cfg = small_synth();
  cfg.height = cfg.width = 48;
  const auto tax = make_taxonomy(cfg.resolved_class_names());
  const auto truth = synthesize_sample(cfg, tax, 0).truth;
  auto rng = derive_rng(51, {});
  for (int band : {1, 2}) {
    const auto in_band = boundary_band(truth, band);
    const auto noisy = apply_boundary_erosion(truth, 0.8, band, rng);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < truth.pixel_count(); ++i) {
      if (truth.values()[i] != noisy.values()[i]) {
        CHECK(in_band[i]);
        ++changed;
      }
    }
    CHECK(changed > 0);
  }
}

TEST_CASE("single-look speckle has unit mean and unit coefficient of variation") {
  auto rng = derive_rng(52, {});
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = sample_speckle(rng, 1);
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n;
  const double cv = std::sqrt(sq / n - mean * mean) / mean;
  CHECK(mean == doctest::Approx(1.0).epsilon(0.01));
  CHECK(cv == doctest::Approx(1.0).epsilon(0.02));

  double sum4 = 0.0, sq4 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = sample_speckle(rng, 4);
    sum4 += v;
    sq4 += v * v;
  }
  const double m4 = sum4 / n;
  CHECK(std::sqrt(sq4 / n - m4 * m4) / m4 == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("classes are separable in both modalities") {
  auto cfg = small_synth();
  cfg.height = cfg.width = 48;
  const auto tax = make_taxonomy(cfg.resolved_class_names());
  std::vector<double> opt_sum(4, 0.0), sar_sum(4, 0.0);
  std::vector<int> count(4, 0);
  for (std::uint64_t i = 0; i < 4; ++i) {
    const auto s = synthesize_sample(cfg, tax, i);
    for (int y = 0; y < 48; ++y) {
      for (int x = 0; x < 48; ++x) {
        const int c = s.truth.at(y, x);
        opt_sum[c] += s.optical.at(y, x, 0) + s.optical.at(y, x, 1) + 2 * s.optical.at(y, x, 2);
        sar_sum[c] += s.sar.at(y, x, 0);
        ++count[c];
      }
    }
  }
  auto between_variance = [&](const std::vector<double>& sums) {
    std::vector<double> means;
    for (int c = 0; c < 4; ++c) {
      if (count[c]) means.push_back(sums[c] / count[c]);
    }
    double mu = 0.0;
    for (double m : means) mu += m / means.size();
    double var = 0.0;
    for (double m : means) var += (m - mu) * (m - mu);
    return var;
  };
  CHECK(between_variance(opt_sum) > 1e-4);
  CHECK(between_variance(sar_sum) > 1e-4);
}

TEST_CASE("generate then load round trip") {
  testing::TempDir dir("data");
  auto cfg = small_synth();
  cfg.label_noise_rate = 0.2;
  const auto spec = generate_synthetic(cfg, dir.path() / "ds");
  CHECK(spec.total_samples() == 6);
  const auto ds = load_dataset(dir.path() / "ds");
  CHECK(ds.size("train") + ds.size("val") + ds.size("test") == 6);
  CHECK(ds.size("test") == 0);
  CHECK(ds.spec().synth.has_value());
  const auto tax = ds.taxonomy();
  for (const char* split : {"train", "val"}) {
    for (const auto& s : ds.samples(split)) {
      const auto idx = std::stoull(s.stem.substr(1));
      const auto ref = synthesize_sample(cfg, tax, idx);
      CHECK(*s.optical == ref.optical);
      CHECK(*s.sar == ref.sar);
      CHECK(*s.labels == ref.noisy);
      CHECK(*s.labels_clean == ref.truth);
    }
  }
}

TEST_CASE("regeneration is byte-identical") {
  testing::TempDir dir("data");
  const auto cfg = small_synth();
  generate_synthetic(cfg, dir.path() / "a");
  generate_synthetic(cfg, dir.path() / "b");
  CHECK(directory_digest(dir.path() / "a") == directory_digest(dir.path() / "b"));
}

TEST_CASE("load errors list every offending path") {
  testing::TempDir dir("data");
  generate_synthetic(small_synth(), dir.path() / "ds");
  fs::remove(dir.path() / "ds/train/sar/s00000.png");
  {
    std::ofstream f(dir.path() / "ds/train/images/s00001.png", std::ios::trunc);
    f << "garbage";
  }
  try {
    load_dataset(dir.path() / "ds");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("train/sar/s00000.png") != std::string::npos);
    CHECK(msg.find("train/images/s00001.png") != std::string::npos);
  }
}

TEST_CASE("empty split directories load as zero-length splits") {
  testing::TempDir dir("data");
  generate_synthetic(small_synth(), dir.path() / "ds");
  for (const auto& e : fs::directory_iterator(dir.path() / "ds/val/images")) fs::remove(e.path());
  for (const char* sub : {"sar", "labels", "labels_clean"}) {
    for (const auto& e : fs::directory_iterator(dir.path() / "ds/val" / sub)) fs::remove(e.path());
  }
  const auto ds = load_dataset(dir.path() / "ds");
  CHECK(ds.size("val") == 0);
  CHECK(ds.size("train") > 0);
}

TEST_CASE("labels are remapped by class name") {
  testing::TempDir dir("data");
  generate_synthetic(small_synth(), dir.path() / "ds");
  const auto base = load_dataset(dir.path() / "ds");
  const auto names = base.taxonomy()->names();
  const auto reordered = make_taxonomy({names[3], names[2], names[1], names[0]});
  const auto ds = load_dataset(dir.path() / "ds", reordered);
  const auto& a = *base.samples("train")[0].labels_clean;
  const auto& b = *ds.samples("train")[0].labels_clean;
  for (std::size_t i = 0; i < a.pixel_count(); ++i) CHECK(b.values()[i] == 3 - a.values()[i]);
  CHECK_THROWS_AS(load_dataset(dir.path() / "ds", make_taxonomy({"sea", names[0]})), ConfigError);
}

TEST_CASE("unwritable roots fail before generating") {
  testing::TempDir dir("data");
  {
    std::ofstream f(dir.path() / "file");
    f << "x";
  }
  CHECK_THROWS_AS(generate_synthetic(small_synth(), dir.path() / "file" / "ds"), std::exception);
}

TEST_CASE("synth config validation and strict json") {
  auto cfg = small_synth();
  cfg.sar_blur_ratio = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = small_synth();
  cfg.label_noise_rate = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  const Json j = to_json(small_synth());
  CHECK(to_json(synth_config_from_json(j, "synth")) == j);
  Json bad = j;
  bad["speckel_looks"] = 3;
  CHECK_THROWS_WITH_AS(synth_config_from_json(bad, "synth"), doctest::Contains("synth.speckel_looks"),
                       ConfigError);
}
