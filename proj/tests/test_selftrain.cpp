#include <doctest.h>

#include <cmath>

#include "landcover/checkpoint.hpp"
#include "landcover/errors.hpp"
#include "landcover/selftrain.hpp"
#include "test_support.hpp"

using namespace landcover;

namespace {

ModelConfig tiny_model() {
  ModelConfig m;
  m.width = 4;
  m.depth = 1;
  m.norm_groups = 2;
  m.num_classes = 3;
  m.seed = 3;
  return m;
}

ParameterSet filled(const ParameterSet& like, double v) {
  ParameterSet out = like;
  for (auto& [name, arr] : out.arrays()) std::fill(arr.values.begin(), arr.values.end(), v);
  return out;
}

Stage1Data tiny_data(const TaxonomyPtr& tax, std::uint64_t seed) {
  Rng rng = derive_rng(seed);
  Stage1Data d;
  d.taxonomy = tax;
  for (int i = 0; i < 4; ++i) {
    d.src_images.push_back(testing::random_image(rng, 8, 8, 3));
    d.src_labels.push_back(testing::random_labels(rng, 8, 8, tax));
    d.tgt_images.push_back(testing::random_image(rng, 8, 8, 3));
  }
  d.val_images.push_back(testing::random_image(rng, 8, 8, 3));
  d.val_labels.push_back(testing::random_labels(rng, 8, 8, tax));
  return d;
}

Stage1Config tiny_stage1() {
  Stage1Config cfg;
  cfg.iter_num = 3;
  cfg.optimizer.lr = 1e-2;
  cfg.eval_interval = 2;
  cfg.tau = 0.5;
  return cfg;
}

}  // namespace

TEST_CASE("ema update reference values") {
  const auto init = init_params(tiny_model());
  TeacherStudentState s{filled(init, 1.0), filled(init, 0.0), 0.9, 0};
  const auto next = ema_update(s);
  CHECK(next.iteration == 1);
  for (const auto& [name, arr] : next.teacher.arrays()) {
    for (double v : arr.values) CHECK(v == doctest::Approx(0.9).epsilon(1e-15));
  }
  CHECK(next.student == s.student);

  s.alpha = 0.0;
  CHECK(ema_update(s).teacher == s.student);
}

TEST_CASE("ema against a fixed student decays geometrically") {
  const auto init = init_params(tiny_model());
  TeacherStudentState s{filled(init, 1.0), filled(init, 0.0), 0.999, 0};
  for (int i = 0; i < 100; ++i) s = ema_update(s);
  const double expected = std::pow(0.999, 100);
  CHECK(std::abs(expected - 0.90479) < 1e-5);
  for (const auto& [name, arr] : s.teacher.arrays()) {
    for (double v : arr.values) CHECK(std::abs(v - expected) < 1e-12);
  }
  CHECK(s.iteration == 100);
}

TEST_CASE("ema contracts the teacher-student distance") {
  Rng rng = derive_rng(4);
  auto m = tiny_model();
  const auto a = init_params(m);
  m.seed = 99;
  const auto b = init_params(m);
  for (double alpha : {0.0, 0.5, 0.9, 0.999}) {
    TeacherStudentState s{a, b, alpha, 0};
    const auto next = ema_update(s);
    for (const auto& [name, arr] : next.teacher.arrays()) {
      for (std::size_t i = 0; i < arr.values.size(); ++i) {
        const double before = std::abs(a.at(name).values[i] - b.at(name).values[i]);
        const double after = std::abs(arr.values[i] - b.at(name).values[i]);
        CHECK(after <= alpha * before + 1e-15);
      }
    }
  }
}

TEST_CASE("ema rejects invalid alpha and mismatched layouts") {
  const auto init = init_params(tiny_model());
  CHECK_THROWS_AS(ema_update({init, init, 1.0, 0}), ValidationError);
  CHECK_THROWS_AS(ema_update({init, init, -0.1, 0}), ValidationError);
  auto other = tiny_model();
  other.width = 6;
  other.norm_groups = 3;
  CHECK_THROWS_AS(ema_update({init, init_params(other), 0.5, 0}), ValidationError);
}

TEST_CASE("confidence weight equals brute-force counting") {
  Rng rng = derive_rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 2 + trial % 4;
    const auto p = testing::random_probmap(rng, 5, 7, k, 4.0);
    int hits = 0;
    for (int y = 0; y < 5; ++y) {
      for (int x = 0; x < 7; ++x) {
        double best = 0.0;
        for (int c = 0; c < k; ++c) best = std::max(best, p.at(y, x, c));
        if (best >= 0.968) ++hits;
      }
    }
    CHECK(confidence_weight(p, 0.968) == static_cast<double>(hits) / 35.0);
  }
}

TEST_CASE("confidence weight properties") {
  Rng rng = derive_rng(18);
  const auto tax = testing::taxonomy(4);
  std::vector<ProbMap> probs;
  for (int i = 0; i < 3; ++i) probs.push_back(testing::random_probmap(rng, 6, 6, 4, 3.0));

  SUBCASE("non-increasing in tau and bounded") {
    double prev = 1.0;
    for (double tau = 0.05; tau < 1.0; tau += 0.05) {
      const double w = confidence_weight(probs[0], tau);
      CHECK(w >= 0.0);
      CHECK(w <= prev);
      prev = w;
    }
  }
  SUBCASE("small tau accepts every pixel") {
    for (const auto& p : probs) CHECK(confidence_weight(p, 1e-9) == 1.0);
  }
  SUBCASE("per-image weights do not depend on batch order") {
    const auto fwd = pseudo_from_probs(probs, tax, 0.6);
    std::vector<ProbMap> rev(probs.rbegin(), probs.rend());
    const auto bwd = pseudo_from_probs(rev, tax, 0.6);
    for (std::size_t i = 0; i < probs.size(); ++i) {
      CHECK(fwd.weights[i] == bwd.weights[probs.size() - 1 - i]);
      CHECK(fwd.masks[i] == bwd.masks[probs.size() - 1 - i]);
    }
  }
  SUBCASE("tau outside (0,1) is rejected") {
    CHECK_THROWS_AS(pseudo_from_probs(probs, tax, 0.0), ValidationError);
    CHECK_THROWS_AS(pseudo_from_probs(probs, tax, 1.0), ValidationError);
  }
}

TEST_CASE("pseudo labels are the argmax of the teacher") {
  Rng rng = derive_rng(19);
  const auto tax = testing::taxonomy(3);
  const auto m = tiny_model();
  const SegmentationNet net(m);
  const auto params = init_params(m);
  std::vector<RasterImage> imgs{testing::random_image(rng, 8, 8, 3)};
  const auto pseudo = generate_pseudo(net, params, imgs, tax, 0.5);
  const auto probs = softmax_probs(net.forward(params, imgs[0]));
  CHECK(pseudo.masks[0] == argmax_classes(probs, tax));
  CHECK(pseudo.weights[0] == confidence_weight(probs, 0.5));
}

TEST_CASE("stage-1 step with zero learning rate leaves the student unchanged") {
  const auto tax = testing::taxonomy(3);
  const auto m = tiny_model();
  const SegmentationNet net(m);
  const auto data = tiny_data(tax, 1);
  auto cfg = tiny_stage1();
  cfg.optimizer.lr = 0.0;
  cfg.optimizer.weight_decay = 0.0;
  const auto init = init_params(m);
  auto teacher = init;
  teacher.arrays().begin()->second.values[0] += 0.5;
  TeacherStudentState s{teacher, init, 0.9, 0};
  Rng rng = derive_rng(2);
  const auto r = stage1_step(net, s, OptimizerState::for_params(init),
                             {std::span(data.src_images).subspan(0, 2),
                              std::span(data.src_labels).subspan(0, 2),
                              std::span(data.tgt_images).subspan(0, 2)},
                             cfg, rng);
  CHECK(r.state.student == init);
  CHECK(r.state.iteration == 1);
  CHECK(r.state.teacher == ema_update(TeacherStudentState{teacher, init, 0.9, 0}).teacher);
  CHECK(std::isfinite(r.loss.total));
  CHECK(r.loss.per_term.count("L_S") == 1);
  CHECK(r.loss.per_term.count("L_T") == 1);
}

TEST_CASE("stage-1 step rejects malformed batches") {
  const auto tax = testing::taxonomy(3);
  const auto m = tiny_model();
  const SegmentationNet net(m);
  const auto data = tiny_data(tax, 1);
  const auto init = init_params(m);
  Rng rng = derive_rng(2);
  CHECK_THROWS_AS(stage1_step(net, {init, init, 0.9, 0}, OptimizerState::for_params(init),
                              {std::span(data.src_images).subspan(0, 2),
                               std::span(data.src_labels).subspan(0, 1),
                               std::span(data.tgt_images).subspan(0, 2)},
                              tiny_stage1(), rng),
                  ValidationError);
}

TEST_CASE("stage-1 runs are reproducible") {
  const auto tax = testing::taxonomy(3);
  const auto data = tiny_data(tax, 7);
  testing::TempDir a("s1a"), b("s1b");
  const auto ra = run_stage1(tiny_model(), tiny_stage1(), data, a.path(), "h");
  const auto rb = run_stage1(tiny_model(), tiny_stage1(), data, b.path(), "h");
  CHECK(ra.params == rb.params);
  CHECK(ra.final_val_miou == rb.final_val_miou);
  std::ifstream fa(ra.metrics_log), fb(rb.metrics_log);
  const std::string la((std::istreambuf_iterator<char>(fa)), {});
  const std::string lb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(la == lb);

  auto other = tiny_stage1();
  other.seed = 1;
  testing::TempDir c("s1c");
  CHECK_FALSE(run_stage1(tiny_model(), other, data, c.path(), "h").params == ra.params);
}

TEST_CASE("stage-1 metrics log records every iteration") {
  const auto tax = testing::taxonomy(3);
  const auto data = tiny_data(tax, 7);
  testing::TempDir dir("s1log");
  const auto r = run_stage1(tiny_model(), tiny_stage1(), data, dir.path(), "h");
  std::ifstream in(r.metrics_log);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto rec = Json::parse(line);
    ++n;
    CHECK(rec.at("iter") == n);
    CHECK(rec.contains("L_S"));
    CHECK(rec.contains("L_T"));
    CHECK(rec.contains("mean_lambda"));
    CHECK(rec.contains("val_miou") == (n == 2 || n == 3));
  }
  CHECK(n == 3);
  const auto ckpt = load_checkpoint(r.checkpoint);
  CHECK(ckpt.iteration == 3);
  CHECK(ckpt.params == r.params);
}

TEST_CASE("zero iterations checkpoint the initialization") {
  const auto tax = testing::taxonomy(3);
  const auto data = tiny_data(tax, 7);
  auto cfg = tiny_stage1();
  cfg.iter_num = 0;
  testing::TempDir dir("s1zero");
  const auto r = run_stage1(tiny_model(), cfg, data, dir.path(), "h");
  CHECK(load_checkpoint(r.checkpoint).params == init_params(tiny_model()));
  CHECK(r.final_val_miou.has_value());
}

TEST_CASE("stage-1 rejects a model that does not match the data") {
  const auto tax = testing::taxonomy(3);
  const auto data = tiny_data(tax, 7);
  testing::TempDir dir("s1bad");
  auto m = tiny_model();
  m.num_classes = 5;
  CHECK_THROWS_AS(run_stage1(m, tiny_stage1(), data, dir.path(), "h"), ConfigError);
  m = tiny_model();
  m.in_channels = 1;
  CHECK_THROWS_AS(run_stage1(m, tiny_stage1(), data, dir.path(), "h"), ConfigError);
}

TEST_CASE("divergence is reported with the iteration and loss terms") {
  LossValue v;
  v.per_term = {{"L_S", 1.0}, {"L_T", NAN}};
  v.total = NAN;
  try {
    check_finite(v, 12, "stage 1");
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("12") != std::string::npos);
    CHECK(msg.find("L_T") != std::string::npos);
    CHECK(msg.find("L_S") != std::string::npos);
  }
  v.per_term["L_T"] = 2.0;
  v.total = 3.0;
  CHECK_NOTHROW(check_finite(v, 1, "stage 1"));
}
