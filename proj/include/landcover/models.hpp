#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "landcover/raster.hpp"

namespace landcover {

struct ModelConfig {
  int in_channels = 3;
  int num_classes = 4;
  int width = 16;        // channels at full resolution, doubled per level
  int depth = 3;         // number of 2x down/up stages
  int norm_groups = 4;   // group-norm groups (gcd with channel count)
  std::uint64_t seed = 0;

  void validate() const;
  int size_multiple() const noexcept { return 1 << depth; }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ParamArray {
  std::vector<int> shape;
  std::vector<double> values;

  friend bool operator==(const ParamArray&, const ParamArray&) = default;
};

// Named parameter arrays. Keys and shapes are fixed by the ModelConfig.
class ParameterSet {
 public:
  using Map = std::map<std::string, ParamArray>;

  ParameterSet() = default;
  explicit ParameterSet(Map arrays) : arrays_(std::move(arrays)) {}

  const Map& arrays() const noexcept { return arrays_; }
  Map& arrays() noexcept { return arrays_; }
  const ParamArray& at(const std::string& name) const;
  ParamArray& at(const std::string& name);
  bool contains(const std::string& name) const { return arrays_.count(name) > 0; }

  std::size_t parameter_count() const;
  bool same_layout(const ParameterSet& other) const;
  ParameterSet zeros_like() const;
  bool all_finite() const;

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  Map arrays_;
};

// Seeded He-normal convolutions, unit/zero norm affine, zero head bias.
ParameterSet init_params(const ModelConfig& cfg);

// Numerically stable per-pixel softmax over the channel axis.
ProbMap softmax_probs(const DenseArray3& logits);
std::vector<ProbMap> softmax_probs(std::span<const DenseArray3> logits);

// Plain convolutional encoder-decoder with skip connections:
// [conv3x3 -> group norm -> ReLU] blocks, 2x2 average pooling down,
// nearest-neighbour upsampling, and a 1x1 classifier head. Convolutions use
// replicate padding; inputs are edge-padded to a multiple of 2^depth and
// logits cropped back.
class SegmentationNet {
 public:
  // Activations retained by forward_train() for the backward pass.
  class Trace {
   public:
    Trace();
    ~Trace();
    Trace(Trace&&) noexcept;
    Trace& operator=(Trace&&) noexcept;

    struct Impl;

   private:
    friend class SegmentationNet;
    std::unique_ptr<Impl> impl_;
  };

  struct TrainForward {
    std::vector<DenseArray3> logits;
    Trace trace;
  };

  explicit SegmentationNet(ModelConfig cfg);

  const ModelConfig& config() const noexcept { return cfg_; }

  std::vector<DenseArray3> forward(const ParameterSet& params,
                                   std::span<const RasterImage> images) const;
  DenseArray3 forward(const ParameterSet& params,
                      const RasterImage& image) const;

  TrainForward forward_train(const ParameterSet& params,
                             std::span<const RasterImage> images) const;

  // Parameter gradients summed over the traced batch.
  ParameterSet backward(const ParameterSet& params, const Trace& trace,
                        std::span<const DenseArray3> grad_logits) const;

 private:
  ModelConfig cfg_;
};

}  // namespace landcover
