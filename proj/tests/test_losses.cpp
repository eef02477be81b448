#include <doctest.h>

#include "landcover/errors.hpp"
#include "test_support.hpp"

using namespace landcover;

namespace {

using testing::batch_labels;
using testing::batch_logits;
using testing::lovasz_oracle;

testing::LogitLoss wrap(std::function<LossResult(const std::vector<ProbMap>&)> f) {
  return [f](const std::vector<DenseArray3>& logits, std::vector<DenseArray3>* grad) {
    auto r = f(testing::probs_of(logits));
    if (grad) *grad = std::move(r.grad_logits);
    return r.value.total;
  };
}

}  // namespace

TEST_CASE("cross-entropy reference values") {
  const auto t = testing::taxonomy(4);
  std::vector<ProbMap> uniform{ProbMap(1, 2, 4, std::vector<double>(8, 0.25))};
  std::vector<LabelMask> labels{LabelMask(1, 2, {0, 3}, t)};
  CHECK(ce_loss(uniform, labels).value.total == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  std::vector<LabelMask> ignored{LabelMask::filled(1, 2, 255, t)};
  const auto empty = ce_loss(uniform, ignored);
  CHECK(empty.value.empty_support);
  CHECK(empty.value.total == 0.0);
  for (double g : empty.grad_logits[0].values) CHECK(g == 0.0);
}

TEST_CASE("weighted cross-entropy excludes zero-weight images from the normalizer") {
  auto rng = derive_rng(20, {});
  const auto t = testing::taxonomy(3);
  auto logits = batch_logits(rng, 2, 4, 4, 3);
  auto probs = testing::probs_of(logits);
  auto labels = batch_labels(rng, 2, 4, 4, t, 0.0);
  const std::vector<double> w{0.0, 0.5};
  const auto weighted = ce_loss(probs, labels, w);
  const std::vector<ProbMap> second{probs[1]};
  const std::vector<LabelMask> second_labels{labels[1]};
  CHECK(weighted.value.total ==
        doctest::Approx(0.5 * ce_loss(second, second_labels).value.total).epsilon(1e-12));
  CHECK(weighted.value.valid_pixel_count == 16);
  for (double g : weighted.grad_logits[0].values) CHECK(g == 0.0);
  const std::vector<double> bad{0.5, 1.5};
  CHECK_THROWS_AS(ce_loss(probs, labels, bad), ValidationError);
}

TEST_CASE("reverse cross-entropy closed form on a uniform pixel") {
  const auto t = testing::taxonomy(4);
  std::vector<ProbMap> uniform{ProbMap(1, 1, 4, std::vector<double>(4, 0.25))};
  std::vector<LabelMask> labels{LabelMask(1, 1, {2}, t)};
  const double eps = 1e-4;
  const double expected = -0.25 * std::log(1.0 + eps) - 0.75 * std::log(eps);
  CHECK(std::abs(sce_term(uniform, labels, SceConfig{eps, 1, 1}).value.total - expected) < 1e-12);
  CHECK(expected == doctest::Approx(6.9077).epsilon(1e-4));
}

TEST_CASE("reverse cross-entropy is bounded below by -log(1+eps)") {
  auto rng = derive_rng(21, {});
  const auto t = testing::taxonomy(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto probs = testing::probs_of(batch_logits(rng, 2, 3, 3, 5));
    auto labels = batch_labels(rng, 2, 3, 3, t);
    CHECK(sce_term(probs, labels, {}).value.total >= -std::log1p(1e-4));
  }
}

TEST_CASE("lovasz_grad hand examples") {
  const std::vector<double> a{1.0, 0.0};
  const std::vector<double> b{0.0, 1.0};
  auto ga = lovasz_grad(a);
  auto gb = lovasz_grad(b);
  CHECK(ga[0] == doctest::Approx(1.0));
  CHECK(ga[1] == doctest::Approx(0.0));
  CHECK(gb[0] == doctest::Approx(0.5));
  CHECK(gb[1] == doctest::Approx(0.5));
}

TEST_CASE("lovasz-softmax matches the prefix-set Jaccard oracle") {
  auto rng = derive_rng(22, {});
  const auto t = testing::taxonomy(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto probs = testing::probs_of(batch_logits(rng, 2, 6, 6, 3));
    auto labels = batch_labels(rng, 2, 6, 6, t, 0.1);
    CHECK(std::abs(lovasz_softmax(probs, labels).value.total - lovasz_oracle(probs, labels)) < 1e-12);
  }
}

TEST_CASE("lovasz-softmax extremes") {
  const auto t = testing::taxonomy(2);
  std::vector<LabelMask> labels{LabelMask(1, 2, {0, 1}, t)};
  std::vector<ProbMap> perfect{ProbMap(1, 2, 2, {1.0, 0.0, 0.0, 1.0})};
  std::vector<ProbMap> wrong{ProbMap(1, 2, 2, {0.0, 1.0, 1.0, 0.0})};
  CHECK(lovasz_softmax(perfect, labels).value.total == doctest::Approx(0.0));
  CHECK(lovasz_softmax(wrong, labels).value.total == doctest::Approx(1.0));
}

TEST_CASE("lovasz class modes") {
  const auto t = testing::taxonomy(3);
  std::vector<LabelMask> labels{LabelMask(1, 2, {0, 0}, t)};
  std::vector<ProbMap> probs{ProbMap(1, 2, 3, {0.5, 0.3, 0.2, 0.6, 0.2, 0.2})};
  const double present = lovasz_softmax(probs, labels, LovaszClassMode::present).value.total;
  const double all = lovasz_softmax(probs, labels, LovaszClassMode::all).value.total;
  CHECK(present == doctest::Approx(lovasz_oracle(probs, labels)));
  CHECK(all != doctest::Approx(present));
}

TEST_CASE("analytic gradients match finite differences") {
  auto rng = derive_rng(23, {});
  for (int k : {2, 3, 5}) {
    const auto t = testing::taxonomy(k);
    for (int trial = 0; trial < 3; ++trial) {
      auto logits = batch_logits(rng, 2, 4, 4, k);
      auto labels = batch_labels(rng, 2, 4, 4, t, 0.1);
      const std::vector<double> w{0.3, 0.9};
      CHECK(testing::gradient_relative_error(
                wrap([&](const auto& p) { return ce_loss(p, labels); }), logits) < 1e-3);
      CHECK(testing::gradient_relative_error(
                wrap([&](const auto& p) { return ce_loss(p, labels, w); }), logits) < 1e-3);
      CHECK(testing::gradient_relative_error(
                wrap([&](const auto& p) { return sce_term(p, labels, {}); }), logits) < 1e-3);
      if (testing::lovasz_kink_gap(testing::probs_of(logits), labels) > 1e-3) {
        CHECK(testing::gradient_relative_error(
                  wrap([&](const auto& p) { return lovasz_softmax(p, labels); }), logits) < 1e-3);
        CHECK(testing::gradient_relative_error(
                  wrap([&](const auto& p) { return stage2_loss(p, labels, {1e-4, 1.0, 0.7}, 0.5); }),
                  logits) < 1e-3);
      }
    }
  }
}

TEST_CASE("stage-2 composite reduces to cross-entropy") {
  auto rng = derive_rng(24, {});
  const auto t = testing::taxonomy(3);
  auto probs = testing::probs_of(batch_logits(rng, 2, 4, 4, 3));
  auto labels = batch_labels(rng, 2, 4, 4, t, 0.1);
  const auto ce = ce_loss(probs, labels);
  const auto s2 = stage2_loss(probs, labels, {1e-4, 1.0, 0.0}, 0.0);
  CHECK(s2.value.total == ce.value.total);
  for (std::size_t i = 0; i < probs.size(); ++i) CHECK(s2.grad_logits[i].values == ce.grad_logits[i].values);
  CHECK(s2.value.per_term.count("L_ce") == 1);
  CHECK(s2.value.per_term.count("L_sce") == 1);
  CHECK(s2.value.per_term.count("L_lovasz") == 1);

  const auto full = stage2_loss(probs, labels, {1e-4, 0.8, 0.6}, 0.4);
  double sum = 0.0;
  for (const auto& [name, v] : full.value.per_term) sum += full.value.weights.at(name) * v;
  CHECK(full.value.total == doctest::Approx(sum).epsilon(1e-12));
}

TEST_CASE("stage-1 composite is source plus weighted target cross-entropy") {
  auto rng = derive_rng(25, {});
  const auto t = testing::taxonomy(4);
  auto sp = testing::probs_of(batch_logits(rng, 2, 4, 4, 4));
  auto tp = testing::probs_of(batch_logits(rng, 2, 4, 4, 4));
  auto sl = batch_labels(rng, 2, 4, 4, t);
  auto tl = batch_labels(rng, 2, 4, 4, t);
  const std::vector<double> w{1.0, 0.25};
  const auto r = stage1_loss(sp, sl, tp, tl, w);
  CHECK(r.value.per_term.at("L_S") == ce_loss(sp, sl).value.total);
  CHECK(r.value.per_term.at("L_T") == ce_loss(tp, tl, w).value.total);
  CHECK(r.value.total == r.value.per_term.at("L_S") + r.value.per_term.at("L_T"));

  const std::vector<double> zero{0.0, 0.0};
  const auto src_only = stage1_loss(sp, sl, tp, tl, zero);
  CHECK(src_only.value.per_term.at("L_T") == 0.0);
  CHECK(src_only.value.total == src_only.value.per_term.at("L_S"));
}

TEST_CASE("loss inputs are validated") {
  const auto t3 = testing::taxonomy(3);
  std::vector<ProbMap> probs{ProbMap(1, 1, 2, {0.5, 0.5})};
  std::vector<LabelMask> labels{LabelMask(1, 1, {0}, t3)};
  CHECK_THROWS_AS(ce_loss(probs, labels), ValidationError);
  CHECK_THROWS_AS(SceConfig({0.0, 1, 1}).validate(), ValidationError);
}
