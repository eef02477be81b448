#pragma once

#include <optional>
#include <span>
#include <vector>

#include "landcover/metrics.hpp"
#include "landcover/models.hpp"
#include "landcover/raster.hpp"

namespace landcover {

// Sliding-window prediction. Overlapping tile probabilities are averaged
// with uniform weights; the last tile in each axis is aligned to the edge.
// Each tile is run on a window extended by `context` pixels per side
// (clipped to the image) and only the tile itself is kept.
struct TileConfig {
  int size = 256;
  double overlap = 0.5;
  int context = -1;  // negative: size / 4

  void validate(const ModelConfig& model) const;
  int effective_context() const noexcept { return context < 0 ? size / 4 : context; }
};

ProbMap predict(const SegmentationNet& net, const ParameterSet& params,
                const RasterImage& image,
                const std::optional<TileConfig>& tile = std::nullopt);

enum class EnsembleMode { probability, logit };

// Probability mode: elementwise mean. Logit mode: softmax of the mean
// log-probability, which equals softmax of the mean logits.
ProbMap ensemble(std::span<const ProbMap> maps,
                 EnsembleMode mode = EnsembleMode::probability);

// Confusion matrix of argmax predictions against reference masks.
ConfusionMatrix evaluate(const SegmentationNet& net, const ParameterSet& params,
                         std::span<const RasterImage> images,
                         std::span<const LabelMask> truths,
                         const std::optional<TileConfig>& tile = std::nullopt);

}  // namespace landcover
