#include "landcover/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "landcover/errors.hpp"

namespace landcover {

namespace {

constexpr double kLogFloor = std::numeric_limits<double>::min();

void check_pairs(std::span<const ProbMap> probs,
                 std::span<const LabelMask> labels) {
  if (probs.empty()) throw ValidationError("loss needs at least one image");
  if (probs.size() != labels.size()) {
    throw ValidationError("probability and label batch sizes differ");
  }
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i].height() != labels[i].height() ||
        probs[i].width() != labels[i].width()) {
      throw ValidationError("probability and label shapes differ");
    }
    if (probs[i].num_classes() != labels[i].num_classes()) {
      throw ValidationError("probability map K differs from taxonomy K");
    }
  }
}

std::vector<DenseArray3> zero_grads(std::span<const ProbMap> probs) {
  std::vector<DenseArray3> grads;
  grads.reserve(probs.size());
  for (const auto& p : probs) {
    grads.emplace_back(p.height(), p.width(), p.num_classes());
  }
  return grads;
}

LossValue single_term(const char* name, double total, std::int64_t valid) {
  LossValue v;
  v.total = total;
  v.per_term[name] = total;
  v.weights[name] = 1.0;
  v.valid_pixel_count = valid;
  v.empty_support = valid == 0;
  return v;
}

std::int64_t count_valid(const LabelMask& mask) {
  std::int64_t n = 0;
  for (std::size_t p = 0; p < mask.pixel_count(); ++p) n += !mask.is_ignored(p);
  return n;
}

void axpy(double alpha, const std::vector<DenseArray3>& x,
          std::vector<DenseArray3>& y) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < x[i].values.size(); ++j) {
      y[i].values[j] += alpha * x[i].values[j];
    }
  }
}

}  // namespace

void SceConfig::validate() const {
  if (!(epsilon > 0.0)) throw ValidationError("sce epsilon must be positive");
  if (!(weight_ce >= 0.0) || !(weight_sce >= 0.0)) {
    throw ValidationError("loss weights must be non-negative");
  }
}

void probs_grad_to_logits(std::span<const double> probs,
                          std::span<double> grad_inout) {
  double dot = 0.0;
  for (std::size_t c = 0; c < probs.size(); ++c) dot += probs[c] * grad_inout[c];
  for (std::size_t c = 0; c < probs.size(); ++c) {
    grad_inout[c] = probs[c] * (grad_inout[c] - dot);
  }
}

LossResult ce_loss(std::span<const ProbMap> probs,
                   std::span<const LabelMask> labels,
                   std::span<const double> image_weights) {
  check_pairs(probs, labels);
  if (!image_weights.empty() && image_weights.size() != probs.size()) {
    throw ValidationError("image weight count differs from batch size");
  }
  auto weight_of = [&](std::size_t i) {
    return image_weights.empty() ? 1.0 : image_weights[i];
  };
  std::int64_t valid = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double w = weight_of(i);
    if (!(w >= 0.0 && w <= 1.0)) throw ValidationError("image weight outside [0,1]");
    if (w > 0.0) valid += count_valid(labels[i]);
  }

  LossResult out{single_term("ce", 0.0, valid), zero_grads(probs)};
  if (valid == 0) return out;

  const double inv_n = 1.0 / static_cast<double>(valid);
  const int k = probs.front().num_classes();
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double w = weight_of(i);
    if (w == 0.0) continue;
    auto& grad = out.grad_logits[i].values;
    for (std::size_t p = 0; p < labels[i].pixel_count(); ++p) {
      if (labels[i].is_ignored(p)) continue;
      const int y = labels[i].values()[p];
      const auto row = probs[i].pixel(p);
      sum += w * std::log(std::max(row[y], kLogFloor));
      for (int c = 0; c < k; ++c) {
        grad[p * k + c] = w * (row[c] - (c == y ? 1.0 : 0.0)) * inv_n;
      }
    }
  }
  out.value = single_term("ce", -sum * inv_n, valid);
  return out;
}

LossResult sce_term(std::span<const ProbMap> probs,
                    std::span<const LabelMask> labels, const SceConfig& cfg) {
  cfg.validate();
  check_pairs(probs, labels);
  std::int64_t valid = 0;
  for (const auto& m : labels) valid += count_valid(m);

  LossResult out{single_term("sce", 0.0, valid), zero_grads(probs)};
  if (valid == 0) return out;

  const double inv_n = 1.0 / static_cast<double>(valid);
  const double log_hit = std::log1p(cfg.epsilon);
  const double log_miss = std::log(cfg.epsilon);
  const int k = probs.front().num_classes();
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    auto& grad = out.grad_logits[i].values;
    for (std::size_t p = 0; p < labels[i].pixel_count(); ++p) {
      if (labels[i].is_ignored(p)) continue;
      const int y = labels[i].values()[p];
      const auto row = probs[i].pixel(p);
      auto g = std::span<double>(grad).subspan(p * k, k);
      for (int c = 0; c < k; ++c) {
        const double log_target = c == y ? log_hit : log_miss;
        sum -= row[c] * log_target;
        g[c] = -log_target * inv_n;
      }
      probs_grad_to_logits(row, g);
    }
  }
  out.value = single_term("sce", sum * inv_n, valid);
  return out;
}

std::vector<double> lovasz_grad(std::span<const double> sorted_foreground) {
  const double gts = std::accumulate(sorted_foreground.begin(),
                                     sorted_foreground.end(), 0.0);
  std::vector<double> g(sorted_foreground.size());
  double cum_fg = 0.0, cum_bg = 0.0, prev = 0.0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    cum_fg += sorted_foreground[k];
    cum_bg += 1.0 - sorted_foreground[k];
    const double jaccard = 1.0 - (gts - cum_fg) / (gts + cum_bg);
    g[k] = jaccard - prev;
    prev = jaccard;
  }
  return g;
}

LossResult lovasz_softmax(std::span<const ProbMap> probs,
                          std::span<const LabelMask> labels,
                          LovaszClassMode mode) {
  check_pairs(probs, labels);
  const int k = probs.front().num_classes();

  struct PixelRef {
    std::size_t image;
    std::size_t pixel;
    int label;
  };
  std::vector<PixelRef> pixels;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    for (std::size_t p = 0; p < labels[i].pixel_count(); ++p) {
      if (!labels[i].is_ignored(p)) pixels.push_back({i, p, labels[i].values()[p]});
    }
  }
  const auto valid = static_cast<std::int64_t>(pixels.size());
  LossResult out{single_term("lovasz", 0.0, valid), zero_grads(probs)};
  if (pixels.empty()) return out;

  std::vector<int> classes;
  for (int c = 0; c < k; ++c) {
    const bool present = std::any_of(pixels.begin(), pixels.end(),
                                     [c](const PixelRef& r) { return r.label == c; });
    if (mode == LovaszClassMode::all || present) classes.push_back(c);
  }
  const double inv_classes = 1.0 / static_cast<double>(classes.size());

  // Gradient with respect to probabilities, converted to logits at the end.
  std::vector<DenseArray3> grad_probs = zero_grads(probs);
  std::vector<double> errors(pixels.size()), fg(pixels.size()), sorted_fg(pixels.size());
  std::vector<std::size_t> order(pixels.size());
  double total = 0.0;
  for (int c : classes) {
    for (std::size_t n = 0; n < pixels.size(); ++n) {
      const auto& r = pixels[n];
      const double pc = probs[r.image].pixel(r.pixel)[c];
      fg[n] = r.label == c ? 1.0 : 0.0;
      errors[n] = r.label == c ? 1.0 - pc : pc;
    }
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return errors[a] > errors[b];
    });
    for (std::size_t n = 0; n < order.size(); ++n) sorted_fg[n] = fg[order[n]];
    const auto g = lovasz_grad(sorted_fg);
    double class_loss = 0.0;
    for (std::size_t n = 0; n < order.size(); ++n) {
      const auto& r = pixels[order[n]];
      class_loss += errors[order[n]] * g[n];
      // d(error)/d(p_c) is -1 on foreground pixels and +1 elsewhere.
      const double sign = r.label == c ? -1.0 : 1.0;
      grad_probs[r.image].values[r.pixel * k + c] += sign * g[n] * inv_classes;
    }
    total += class_loss;
  }

  for (std::size_t i = 0; i < probs.size(); ++i) {
    for (std::size_t p = 0; p < probs[i].pixel_count(); ++p) {
      if (labels[i].is_ignored(p)) continue;
      auto g = std::span<double>(grad_probs[i].values).subspan(p * k, k);
      probs_grad_to_logits(probs[i].pixel(p), g);
    }
  }
  out.value = single_term("lovasz", total * inv_classes, valid);
  out.grad_logits = std::move(grad_probs);
  return out;
}

Stage1LossResult stage1_loss(std::span<const ProbMap> src_probs,
                             std::span<const LabelMask> src_labels,
                             std::span<const ProbMap> tgt_probs,
                             std::span<const LabelMask> tgt_pseudo,
                             std::span<const double> tgt_weights) {
  auto src = ce_loss(src_probs, src_labels);
  auto tgt = ce_loss(tgt_probs, tgt_pseudo, tgt_weights);
  Stage1LossResult out;
  out.value.per_term = {{"L_S", src.value.total}, {"L_T", tgt.value.total}};
  out.value.weights = {{"L_S", 1.0}, {"L_T", 1.0}};
  out.value.total = src.value.total + tgt.value.total;
  out.value.valid_pixel_count = src.value.valid_pixel_count + tgt.value.valid_pixel_count;
  out.value.empty_support = out.value.valid_pixel_count == 0;
  out.src_grad_logits = std::move(src.grad_logits);
  out.tgt_grad_logits = std::move(tgt.grad_logits);
  return out;
}

LossResult stage2_loss(std::span<const ProbMap> probs,
                       std::span<const LabelMask> pseudo_labels,
                       const SceConfig& sce, double lovasz_weight,
                       LovaszClassMode mode) {
  sce.validate();
  if (!(lovasz_weight >= 0.0)) {
    throw ValidationError("lovasz weight must be non-negative");
  }
  auto ce = ce_loss(probs, pseudo_labels);
  auto rce = sce_term(probs, pseudo_labels, sce);
  auto lov = lovasz_softmax(probs, pseudo_labels, mode);

  LossResult out{{}, zero_grads(probs)};
  out.value.per_term = {{"L_ce", ce.value.total},
                        {"L_sce", rce.value.total},
                        {"L_lovasz", lov.value.total}};
  out.value.weights = {{"L_ce", sce.weight_ce},
                       {"L_sce", sce.weight_sce},
                       {"L_lovasz", lovasz_weight}};
  out.value.total = sce.weight_ce * ce.value.total +
                    sce.weight_sce * rce.value.total +
                    lovasz_weight * lov.value.total;
  out.value.valid_pixel_count = ce.value.valid_pixel_count;
  out.value.empty_support = ce.value.empty_support;
  if (sce.weight_ce != 0.0) axpy(sce.weight_ce, ce.grad_logits, out.grad_logits);
  if (sce.weight_sce != 0.0) axpy(sce.weight_sce, rce.grad_logits, out.grad_logits);
  if (lovasz_weight != 0.0) axpy(lovasz_weight, lov.grad_logits, out.grad_logits);
  return out;
}

}  // namespace landcover
