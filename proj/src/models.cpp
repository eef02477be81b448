#include "landcover/models.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "landcover/errors.hpp"
#include "landcover/rng.hpp"

namespace landcover {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

constexpr double kNormEps = 1e-5;

// Channel-major feature map (C x H x W).
struct Feature {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> v;

  Feature() = default;
  Feature(int channels, int height, int width)
      : c(channels), h(height), w(width),
        v(static_cast<std::size_t>(channels) * height * width, 0.0) {}

  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
  ConstMatMap mat() const { return ConstMatMap(v.data(), c, plane()); }
  MatMap mat() { return MatMap(v.data(), c, plane()); }
};

void add_into(Feature& dst, const Feature& src) {
  for (std::size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += src.v[i];
}

// 3x3 patches with replicate padding; rows are (ci, ky, kx), columns pixels.
void im2col3(const Feature& x, RowMat& cols) {
  cols.resize(static_cast<Eigen::Index>(x.c) * 9, static_cast<Eigen::Index>(x.plane()));
  for (int ci = 0; ci < x.c; ++ci) {
    const double* src = x.v.data() + ci * x.plane();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* row = cols.row(ci * 9 + ky * 3 + kx).data();
        for (int y = 0; y < x.h; ++y) {
          const int sy = std::clamp(y + ky - 1, 0, x.h - 1);
          for (int xx = 0; xx < x.w; ++xx) {
            const int sx = std::clamp(xx + kx - 1, 0, x.w - 1);
            row[y * x.w + xx] = src[sy * x.w + sx];
          }
        }
      }
    }
  }
}

void col2im3(const RowMat& cols, Feature& dx) {
  for (int ci = 0; ci < dx.c; ++ci) {
    double* dst = dx.v.data() + ci * dx.plane();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const double* row = cols.row(ci * 9 + ky * 3 + kx).data();
        for (int y = 0; y < dx.h; ++y) {
          const int sy = std::clamp(y + ky - 1, 0, dx.h - 1);
          for (int xx = 0; xx < dx.w; ++xx) {
            const int sx = std::clamp(xx + kx - 1, 0, dx.w - 1);
            dst[sy * dx.w + sx] += row[y * dx.w + xx];
          }
        }
      }
    }
  }
}

Feature conv3x3(const Feature& x, const ParamArray& weight) {
  const int co = weight.shape[0];
  RowMat cols;
  im2col3(x, cols);
  ConstMatMap wm(weight.values.data(), co, static_cast<Eigen::Index>(x.c) * 9);
  Feature y(co, x.h, x.w);
  y.mat().noalias() = wm * cols;
  return y;
}

void conv3x3_backward(const Feature& x, const ParamArray& weight,
                      const Feature& dy, ParamArray& dweight, Feature* dx) {
  const int co = weight.shape[0];
  RowMat cols;
  im2col3(x, cols);
  MatMap dw(dweight.values.data(), co, static_cast<Eigen::Index>(x.c) * 9);
  dw.noalias() += dy.mat() * cols.transpose();
  if (dx != nullptr) {
    ConstMatMap wm(weight.values.data(), co, static_cast<Eigen::Index>(x.c) * 9);
    RowMat dcols = wm.transpose() * dy.mat();
    *dx = Feature(x.c, x.h, x.w);
    col2im3(dcols, *dx);
  }
}

int group_count(int channels, int requested) {
  return std::gcd(channels, requested);
}

struct NormCache {
  Feature xhat;
  std::vector<double> inv_std;
};

Feature group_norm(const Feature& x, const ParamArray& gamma,
                   const ParamArray& beta, int groups, NormCache* cache) {
  const int cpg = x.c / groups;
  const std::size_t plane = x.plane();
  const double count = static_cast<double>(cpg) * plane;
  Feature y(x.c, x.h, x.w);
  Feature xhat(x.c, x.h, x.w);
  std::vector<double> inv_std(groups);
  for (int g = 0; g < groups; ++g) {
    const std::size_t begin = g * cpg * plane, end = begin + cpg * plane;
    double mean = 0.0;
    for (std::size_t i = begin; i < end; ++i) mean += x.v[i];
    mean /= count;
    double var = 0.0;
    for (std::size_t i = begin; i < end; ++i) var += (x.v[i] - mean) * (x.v[i] - mean);
    var /= count;
    inv_std[g] = 1.0 / std::sqrt(var + kNormEps);
    for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
      const double gm = gamma.values[c], bt = beta.values[c];
      for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) {
        xhat.v[i] = (x.v[i] - mean) * inv_std[g];
        y.v[i] = gm * xhat.v[i] + bt;
      }
    }
  }
  if (cache != nullptr) *cache = {std::move(xhat), std::move(inv_std)};
  return y;
}

Feature group_norm_backward(const Feature& dy, const ParamArray& gamma,
                            const NormCache& cache, int groups,
                            ParamArray& dgamma, ParamArray& dbeta) {
  const int cpg = dy.c / groups;
  const std::size_t plane = dy.plane();
  const double count = static_cast<double>(cpg) * plane;
  Feature dx(dy.c, dy.h, dy.w);
  for (int g = 0; g < groups; ++g) {
    double mean_d = 0.0, mean_dx = 0.0;
    for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
      const double gm = gamma.values[c];
      double sg = 0.0, sb = 0.0;
      for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) {
        sg += dy.v[i] * cache.xhat.v[i];
        sb += dy.v[i];
        const double d = dy.v[i] * gm;
        dx.v[i] = d;
        mean_d += d;
        mean_dx += d * cache.xhat.v[i];
      }
      dgamma.values[c] += sg;
      dbeta.values[c] += sb;
    }
    mean_d /= count;
    mean_dx /= count;
    const std::size_t begin = g * cpg * plane, end = begin + cpg * plane;
    for (std::size_t i = begin; i < end; ++i) {
      dx.v[i] = cache.inv_std[g] * (dx.v[i] - mean_d - cache.xhat.v[i] * mean_dx);
    }
  }
  return dx;
}

Feature avg_pool2(const Feature& x) {
  Feature y(x.c, x.h / 2, x.w / 2);
  for (int c = 0; c < x.c; ++c) {
    const double* src = x.v.data() + c * x.plane();
    double* dst = y.v.data() + c * y.plane();
    for (int i = 0; i < y.h; ++i) {
      for (int j = 0; j < y.w; ++j) {
        const double* a = src + (2 * i) * x.w + 2 * j;
        dst[i * y.w + j] = 0.25 * (a[0] + a[1] + a[x.w] + a[x.w + 1]);
      }
    }
  }
  return y;
}

Feature avg_pool2_backward(const Feature& dy) {
  Feature dx(dy.c, dy.h * 2, dy.w * 2);
  for (int c = 0; c < dy.c; ++c) {
    const double* src = dy.v.data() + c * dy.plane();
    double* dst = dx.v.data() + c * dx.plane();
    for (int i = 0; i < dx.h; ++i) {
      for (int j = 0; j < dx.w; ++j) dst[i * dx.w + j] = 0.25 * src[(i / 2) * dy.w + j / 2];
    }
  }
  return dx;
}

Feature upsample2(const Feature& x) {
  Feature y(x.c, x.h * 2, x.w * 2);
  for (int c = 0; c < x.c; ++c) {
    const double* src = x.v.data() + c * x.plane();
    double* dst = y.v.data() + c * y.plane();
    for (int i = 0; i < y.h; ++i) {
      for (int j = 0; j < y.w; ++j) dst[i * y.w + j] = src[(i / 2) * x.w + j / 2];
    }
  }
  return y;
}

Feature upsample2_backward(const Feature& dy) {
  Feature dx(dy.c, dy.h / 2, dy.w / 2);
  for (int c = 0; c < dy.c; ++c) {
    const double* src = dy.v.data() + c * dy.plane();
    double* dst = dx.v.data() + c * dx.plane();
    for (int i = 0; i < dy.h; ++i) {
      for (int j = 0; j < dy.w; ++j) dst[(i / 2) * dx.w + j / 2] += src[i * dy.w + j];
    }
  }
  return dx;
}

Feature concat(const Feature& a, const Feature& b) {
  Feature y(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), y.v.begin());
  std::copy(b.v.begin(), b.v.end(), y.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()));
  return y;
}

std::pair<Feature, Feature> split(const Feature& y, int first_channels) {
  Feature a(first_channels, y.h, y.w), b(y.c - first_channels, y.h, y.w);
  std::copy(y.v.begin(), y.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()), a.v.begin());
  std::copy(y.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()), y.v.end(), b.v.begin());
  return {std::move(a), std::move(b)};
}

struct BlockCache {
  Feature input;
  NormCache norm;
  Feature output;  // post-ReLU
};

struct BlockParams {
  const ParamArray& conv;
  const ParamArray& gamma;
  const ParamArray& beta;
};

BlockParams block_params(const ParameterSet& params, const std::string& name) {
  return {params.at(name + ".conv.weight"), params.at(name + ".norm.gamma"),
          params.at(name + ".norm.beta")};
}

Feature run_block(const BlockParams& p, const Feature& x, int norm_groups,
                  BlockCache* cache) {
  Feature z = conv3x3(x, p.conv);
  const int groups = group_count(z.c, norm_groups);
  NormCache nc;
  Feature y = group_norm(z, p.gamma, p.beta, groups, cache ? &nc : nullptr);
  for (auto& v : y.v) v = std::max(v, 0.0);
  if (cache != nullptr) *cache = {x, std::move(nc), y};
  return y;
}

// Returns the gradient with respect to the block input when want_dx is set.
Feature block_backward(const BlockParams& p, const BlockCache& cache,
                       Feature dy, int norm_groups, ParameterSet& grads,
                       const std::string& name, bool want_dx) {
  for (std::size_t i = 0; i < dy.v.size(); ++i) {
    if (cache.output.v[i] <= 0.0) dy.v[i] = 0.0;
  }
  const int groups = group_count(dy.c, norm_groups);
  Feature dz = group_norm_backward(dy, p.gamma, cache.norm, groups,
                                   grads.at(name + ".norm.gamma"),
                                   grads.at(name + ".norm.beta"));
  Feature dx;
  conv3x3_backward(cache.input, p.conv, dz, grads.at(name + ".conv.weight"),
                   want_dx ? &dx : nullptr);
  return dx;
}

std::vector<int> level_channels(const ModelConfig& cfg) {
  std::vector<int> ch(cfg.depth + 1);
  for (int l = 0; l <= cfg.depth; ++l) ch[l] = cfg.width << l;
  return ch;
}

std::string enc_name(int level) { return "enc" + std::to_string(level); }
std::string dec_name(int level) { return "dec" + std::to_string(level); }

// HWC raster to CHW feature, edge-padded to the given size.
Feature to_feature(const RasterImage& image, int padded_h, int padded_w) {
  Feature f(image.channels(), padded_h, padded_w);
  for (int c = 0; c < f.c; ++c) {
    for (int y = 0; y < padded_h; ++y) {
      const int sy = std::min(y, image.height() - 1);
      for (int x = 0; x < padded_w; ++x) {
        const int sx = std::min(x, image.width() - 1);
        f.v[c * f.plane() + y * padded_w + x] = image.at(sy, sx, c);
      }
    }
  }
  return f;
}

int round_up(int value, int multiple) {
  return (value + multiple - 1) / multiple * multiple;
}

}  // namespace

struct SegmentationNet::Trace::Impl {
  struct ImageTrace {
    int height = 0;
    int width = 0;
    std::vector<BlockCache> enc;
    std::vector<BlockCache> dec;
  };
  std::vector<ImageTrace> images;
};

SegmentationNet::Trace::Trace() : impl_(std::make_unique<Impl>()) {}
SegmentationNet::Trace::~Trace() = default;
SegmentationNet::Trace::Trace(Trace&&) noexcept = default;
SegmentationNet::Trace& SegmentationNet::Trace::operator=(Trace&&) noexcept = default;

void ModelConfig::validate() const {
  if (in_channels != 1 && in_channels != 3) {
    throw ValidationError("model in_channels must be 1 or 3");
  }
  if (num_classes < 2) throw ValidationError("model needs at least 2 classes");
  if (width < 4) throw ValidationError("model width must be >= 4");
  if (depth < 1 || depth > 8) throw ValidationError("model depth must be in [1, 8]");
  if (norm_groups < 1) throw ValidationError("norm_groups must be positive");
}

const ParamArray& ParameterSet::at(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return it->second;
}

ParamArray& ParameterSet::at(const std::string& name) {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParameterSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, a] : arrays_) n += a.values.size();
  return n;
}

bool ParameterSet::same_layout(const ParameterSet& other) const {
  if (arrays_.size() != other.arrays_.size()) return false;
  auto it = other.arrays_.begin();
  for (const auto& [name, a] : arrays_) {
    if (name != it->first || a.shape != it->second.shape) return false;
    ++it;
  }
  return true;
}

ParameterSet ParameterSet::zeros_like() const {
  Map out;
  for (const auto& [name, a] : arrays_) {
    out.emplace(name, ParamArray{a.shape, std::vector<double>(a.values.size(), 0.0)});
  }
  return ParameterSet(std::move(out));
}

bool ParameterSet::all_finite() const {
  for (const auto& [_, a] : arrays_) {
    for (double v : a.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

ParameterSet init_params(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng = derive_rng(cfg.seed, {0x5e9a11ULL});
  ParameterSet::Map arrays;
  auto add_conv = [&](const std::string& name, int co, int ci, int k) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (ci * k * k)));
    ParamArray a{{co, ci, k, k}, std::vector<double>(static_cast<std::size_t>(co) * ci * k * k)};
    for (auto& v : a.values) v = dist(rng);
    arrays.emplace(name, std::move(a));
  };
  auto add_block = [&](const std::string& name, int ci, int co) {
    add_conv(name + ".conv.weight", co, ci, 3);
    arrays.emplace(name + ".norm.gamma", ParamArray{{co}, std::vector<double>(co, 1.0)});
    arrays.emplace(name + ".norm.beta", ParamArray{{co}, std::vector<double>(co, 0.0)});
  };

  const auto ch = level_channels(cfg);
  add_block(enc_name(0), cfg.in_channels, ch[0]);
  for (int l = 1; l <= cfg.depth; ++l) add_block(enc_name(l), ch[l - 1], ch[l]);
  for (int l = cfg.depth - 1; l >= 0; --l) add_block(dec_name(l), ch[l + 1] + ch[l], ch[l]);

  std::normal_distribution<double> head_dist(0.0, std::sqrt(1.0 / ch[0]));
  ParamArray head{{cfg.num_classes, ch[0], 1, 1},
                  std::vector<double>(static_cast<std::size_t>(cfg.num_classes) * ch[0])};
  for (auto& v : head.values) v = head_dist(rng);
  arrays.emplace("head.weight", std::move(head));
  arrays.emplace("head.bias", ParamArray{{cfg.num_classes}, std::vector<double>(cfg.num_classes, 0.0)});
  return ParameterSet(std::move(arrays));
}

ProbMap softmax_probs(const DenseArray3& logits) {
  const int k = logits.channels;
  std::vector<double> out(logits.values.size());
  for (std::size_t p = 0; p < logits.pixel_count(); ++p) {
    const double* z = logits.values.data() + p * k;
    double* q = out.data() + p * k;
    const double zmax = *std::max_element(z, z + k);
    double sum = 0.0;
    for (int c = 0; c < k; ++c) {
      q[c] = std::exp(z[c] - zmax);
      sum += q[c];
    }
    for (int c = 0; c < k; ++c) q[c] /= sum;
  }
  return ProbMap(logits.height, logits.width, k, std::move(out));
}

std::vector<ProbMap> softmax_probs(std::span<const DenseArray3> logits) {
  std::vector<ProbMap> out;
  out.reserve(logits.size());
  for (const auto& l : logits) out.push_back(softmax_probs(l));
  return out;
}

SegmentationNet::SegmentationNet(ModelConfig cfg) : cfg_(cfg) { cfg_.validate(); }

namespace {

DenseArray3 run_network(const ModelConfig& cfg, const ParameterSet& params,
                        const RasterImage& image,
                        SegmentationNet::Trace::Impl::ImageTrace* trace) {
  if (image.channels() != cfg.in_channels) {
    throw ValidationError("image has " + std::to_string(image.channels()) +
                          " channels, model expects " + std::to_string(cfg.in_channels));
  }
  const int mult = cfg.size_multiple();
  const int ph = round_up(image.height(), mult), pw = round_up(image.width(), mult);
  const int d = cfg.depth;

  std::vector<BlockCache> enc_cache(trace ? d + 1 : 0), dec_cache(trace ? d : 0);
  std::vector<Feature> skips(d + 1);
  skips[0] = run_block(block_params(params, enc_name(0)), to_feature(image, ph, pw),
                       cfg.norm_groups, trace ? &enc_cache[0] : nullptr);
  for (int l = 1; l <= d; ++l) {
    skips[l] = run_block(block_params(params, enc_name(l)), avg_pool2(skips[l - 1]),
                         cfg.norm_groups, trace ? &enc_cache[l] : nullptr);
  }
  Feature x = skips[d];
  for (int l = d - 1; l >= 0; --l) {
    x = run_block(block_params(params, dec_name(l)), concat(upsample2(x), skips[l]),
                  cfg.norm_groups, trace ? &dec_cache[l] : nullptr);
  }

  const auto& hw = params.at("head.weight");
  const auto& hb = params.at("head.bias");
  const int k = cfg.num_classes;
  RowMat scores = ConstMatMap(hw.values.data(), k, x.c) * x.mat();
  DenseArray3 logits(image.height(), image.width(), k);
  for (int y = 0; y < image.height(); ++y) {
    for (int xx = 0; xx < image.width(); ++xx) {
      for (int c = 0; c < k; ++c) {
        logits.at(y, xx, c) = scores(c, y * pw + xx) + hb.values[c];
      }
    }
  }
  if (trace != nullptr) {
    trace->height = image.height();
    trace->width = image.width();
    trace->enc = std::move(enc_cache);
    trace->dec = std::move(dec_cache);
  }
  return logits;
}

}  // namespace

DenseArray3 SegmentationNet::forward(const ParameterSet& params,
                                     const RasterImage& image) const {
  return run_network(cfg_, params, image, nullptr);
}

std::vector<DenseArray3> SegmentationNet::forward(
    const ParameterSet& params, std::span<const RasterImage> images) const {
  std::vector<DenseArray3> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(run_network(cfg_, params, img, nullptr));
  return out;
}

SegmentationNet::TrainForward SegmentationNet::forward_train(
    const ParameterSet& params, std::span<const RasterImage> images) const {
  TrainForward out;
  out.trace.impl_->images.resize(images.size());
  out.logits.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    out.logits.push_back(run_network(cfg_, params, images[i], &out.trace.impl_->images[i]));
  }
  return out;
}

ParameterSet SegmentationNet::backward(
    const ParameterSet& params, const Trace& trace,
    std::span<const DenseArray3> grad_logits) const {
  const auto& traces = trace.impl_->images;
  if (grad_logits.size() != traces.size()) {
    throw ValidationError("gradient batch size differs from traced batch");
  }
  ParameterSet grads = params.zeros_like();
  const int d = cfg_.depth;
  const int k = cfg_.num_classes;
  const auto& hw = params.at("head.weight");

  for (std::size_t i = 0; i < traces.size(); ++i) {
    const auto& t = traces[i];
    const auto& gl = grad_logits[i];
    if (gl.height != t.height || gl.width != t.width || gl.channels != k) {
      throw ValidationError("logit gradient shape differs from forward output");
    }
    const Feature& head_in = t.dec[0].output;
    Feature dscores(k, head_in.h, head_in.w);
    for (int y = 0; y < t.height; ++y) {
      for (int x = 0; x < t.width; ++x) {
        for (int c = 0; c < k; ++c) {
          dscores.v[c * dscores.plane() + y * head_in.w + x] = gl.at(y, x, c);
        }
      }
    }
    MatMap(grads.at("head.weight").values.data(), k, head_in.c).noalias() +=
        dscores.mat() * head_in.mat().transpose();
    auto& db = grads.at("head.bias").values;
    for (int c = 0; c < k; ++c) db[c] += dscores.mat().row(c).sum();

    Feature dx(head_in.c, head_in.h, head_in.w);
    dx.mat().noalias() = ConstMatMap(hw.values.data(), k, head_in.c).transpose() * dscores.mat();

    std::vector<Feature> dskip(d + 1);
    for (int l = 0; l < d; ++l) {
      Feature dcat = block_backward(block_params(params, dec_name(l)), t.dec[l], std::move(dx),
                                    cfg_.norm_groups, grads, dec_name(l), true);
      const int up_channels = cfg_.width << (l + 1);
      auto [dup, ds] = split(dcat, up_channels);
      dskip[l] = std::move(ds);
      dx = upsample2_backward(dup);
    }
    // dx now holds the gradient for the deepest encoder output.
    for (int l = d; l >= 1; --l) {
      if (l < d) add_into(dx, dskip[l]);
      Feature din = block_backward(block_params(params, enc_name(l)), t.enc[l], std::move(dx),
                                   cfg_.norm_groups, grads, enc_name(l), true);
      dx = avg_pool2_backward(din);
    }
    add_into(dx, dskip[0]);
    block_backward(block_params(params, enc_name(0)), t.enc[0], std::move(dx),
                   cfg_.norm_groups, grads, enc_name(0), false);
  }
  return grads;
}

}  // namespace landcover
