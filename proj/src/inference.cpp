#include "landcover/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "landcover/errors.hpp"

namespace landcover {

namespace {

std::vector<int> tile_origins(int extent, int size, int stride) {
  if (extent <= size) return {0};
  std::vector<int> out;
  for (int p = 0; p + size < extent; p += stride) out.push_back(p);
  out.push_back(extent - size);
  return out;
}

RasterImage crop_image(const RasterImage& image, int y0, int x0, int h, int w) {
  const int c = image.channels();
  std::vector<double> v(static_cast<std::size_t>(h) * w * c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < c; ++k) {
        v[(static_cast<std::size_t>(y) * w + x) * c + k] = image.at(y0 + y, x0 + x, k);
      }
    }
  }
  return RasterImage(h, w, c, image.modality(), std::move(v), image.normalization());
}

// Mean that depends only on the multiset of values: members are sorted
// first, and a list of identical values returns that value unchanged.
double order_free_mean(std::vector<double>& values) {
  std::sort(values.begin(), values.end());
  const double base = values.front();
  double offset = 0.0;
  for (double v : values) offset += v - base;
  return base + offset / static_cast<double>(values.size());
}

}  // namespace

void TileConfig::validate(const ModelConfig& model) const {
  if (size < model.size_multiple()) {
    throw ConfigError("tile size " + std::to_string(size) + " is smaller than the model's " +
                      std::to_string(model.size_multiple()) + "-pixel size multiple");
  }
  if (!(overlap >= 0.0 && overlap < 1.0)) throw ConfigError("tile overlap must lie in [0,1)");
  if (context < -1) throw ConfigError("tile context must be >= 0, or -1 for the default");
}

ProbMap predict(const SegmentationNet& net, const ParameterSet& params,
                const RasterImage& image, const std::optional<TileConfig>& tile) {
  if (!tile) return softmax_probs(net.forward(params, image));
  tile->validate(net.config());
  const int h = image.height(), w = image.width(), k = net.config().num_classes;
  if (h <= tile->size && w <= tile->size) return softmax_probs(net.forward(params, image));

  const int stride = std::max(1, static_cast<int>(std::lround(tile->size * (1.0 - tile->overlap))));
  const int margin = tile->effective_context();
  const int th = std::min(tile->size, h), tw = std::min(tile->size, w);
  std::vector<double> sum(static_cast<std::size_t>(h) * w * k, 0.0);
  std::vector<int> count(static_cast<std::size_t>(h) * w, 0);
  for (int y0 : tile_origins(h, tile->size, stride)) {
    for (int x0 : tile_origins(w, tile->size, stride)) {
      const int cy0 = std::max(0, y0 - margin), cx0 = std::max(0, x0 - margin);
      const int cy1 = std::min(h, y0 + th + margin), cx1 = std::min(w, x0 + tw + margin);
      const ProbMap p =
          softmax_probs(net.forward(params, crop_image(image, cy0, cx0, cy1 - cy0, cx1 - cx0)));
      for (int y = 0; y < th; ++y) {
        for (int x = 0; x < tw; ++x) {
          const std::size_t dst = static_cast<std::size_t>(y0 + y) * w + (x0 + x);
          ++count[dst];
          for (int c = 0; c < k; ++c) sum[dst * k + c] += p.at(y0 + y - cy0, x0 + x - cx0, c);
        }
      }
    }
  }
  for (std::size_t i = 0; i < count.size(); ++i) {
    for (int c = 0; c < k; ++c) sum[i * k + c] /= count[i];
  }
  return ProbMap(h, w, k, std::move(sum));
}

ProbMap ensemble(std::span<const ProbMap> maps, EnsembleMode mode) {
  if (maps.empty()) throw ValidationError("ensemble needs at least one prediction");
  const auto& first = maps.front();
  for (const auto& m : maps) {
    if (m.height() != first.height() || m.width() != first.width() ||
        m.num_classes() != first.num_classes()) {
      throw ValidationError("ensemble members differ in shape or class count");
    }
  }
  const std::size_t n = first.values().size();
  const int k = first.num_classes();
  constexpr double kFloor = std::numeric_limits<double>::min();
  std::vector<double> out(n);
  std::vector<double> members(maps.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t m = 0; m < maps.size(); ++m) {
      const double v = maps[m].values()[i];
      members[m] = mode == EnsembleMode::probability ? v : std::log(std::max(v, kFloor));
    }
    out[i] = order_free_mean(members);
  }
  if (mode == EnsembleMode::logit) {
    for (std::size_t p = 0; p < n; p += k) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) mx = std::max(mx, out[p + c]);
      double s = 0.0;
      for (int c = 0; c < k; ++c) {
        out[p + c] = std::exp(out[p + c] - mx);
        s += out[p + c];
      }
      for (int c = 0; c < k; ++c) out[p + c] /= s;
    }
  }
  return ProbMap(first.height(), first.width(), k, std::move(out));
}

ConfusionMatrix evaluate(const SegmentationNet& net, const ParameterSet& params,
                         std::span<const RasterImage> images, std::span<const LabelMask> truths,
                         const std::optional<TileConfig>& tile) {
  if (images.size() != truths.size()) {
    throw ValidationError("evaluate needs one reference mask per image");
  }
  ConfusionMatrix cm(net.config().num_classes);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto pred = argmax_classes(predict(net, params, images[i], tile), truths[i].taxonomy());
    cm.add(truths[i], pred);
  }
  return cm;
}

}  // namespace landcover
