#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "landcover/raster.hpp"

namespace landcover {

// Scalar loss with its named terms. total == sum(weights[k] * per_term[k]).
struct LossValue {
  double total = 0.0;
  std::map<std::string, double> per_term;
  std::map<std::string, double> weights;
  std::int64_t valid_pixel_count = 0;
  // No pixel contributed (everything ignored or zero-weighted).
  bool empty_support = false;
};

// A loss together with its gradient with respect to the logits that
// produced the probability maps, one H x W x K array per image.
struct LossResult {
  LossValue value;
  std::vector<DenseArray3> grad_logits;
};

struct SceConfig {
  double epsilon = 1e-4;
  double weight_ce = 1.0;
  double weight_sce = 1.0;

  void validate() const;
};

enum class LovaszClassMode { present, all };

// Mean over valid pixels of -lambda_i * log p[y]. Images with zero weight
// are excluded from the valid-pixel normalizer.
LossResult ce_loss(std::span<const ProbMap> probs,
                   std::span<const LabelMask> labels,
                   std::span<const double> image_weights = {});

// Reverse cross-entropy: mean over valid pixels of
// -sum_c p[c] * log(onehot[c] + eps).
LossResult sce_term(std::span<const ProbMap> probs,
                    std::span<const LabelMask> labels, const SceConfig& cfg);

// Lovasz extension of the Jaccard loss, averaged over classes.
LossResult lovasz_softmax(std::span<const ProbMap> probs,
                          std::span<const LabelMask> labels,
                          LovaszClassMode mode = LovaszClassMode::present);

struct Stage1LossResult {
  LossValue value;  // terms L_S and L_T
  std::vector<DenseArray3> src_grad_logits;
  std::vector<DenseArray3> tgt_grad_logits;
};

Stage1LossResult stage1_loss(std::span<const ProbMap> src_probs,
                             std::span<const LabelMask> src_labels,
                             std::span<const ProbMap> tgt_probs,
                             std::span<const LabelMask> tgt_pseudo,
                             std::span<const double> tgt_weights);

// weight_ce * L_ce + weight_sce * L_sce + lovasz_weight * L_lovasz.
LossResult stage2_loss(std::span<const ProbMap> probs,
                       std::span<const LabelMask> pseudo_labels,
                       const SceConfig& sce, double lovasz_weight,
                       LovaszClassMode mode = LovaszClassMode::present);

// Pulls a gradient with respect to probabilities back through softmax.
void probs_grad_to_logits(std::span<const double> probs,
                          std::span<double> grad_inout);

// The Jaccard-extension weights g_k for a sorted foreground indicator.
std::vector<double> lovasz_grad(std::span<const double> sorted_foreground);

}  // namespace landcover
