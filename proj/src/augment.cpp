#include "landcover/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "landcover/errors.hpp"

namespace landcover {

namespace {

void check_prob(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ValidationError(std::string(name) + " must lie in [0,1]");
  }
}

// Source coordinate and blend weight for half-pixel-center resampling.
struct Tap {
  int lo;
  int hi;
  double frac;
};

std::vector<Tap> bilinear_taps(int in_size, int out_size) {
  std::vector<Tap> taps(out_size);
  const double scale = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_size - 1));
    const int lo = static_cast<int>(std::floor(src));
    const int hi = std::min(lo + 1, in_size - 1);
    taps[o] = {lo, hi, src - lo};
  }
  return taps;
}

// Fractional-coverage weights of input cells for each output cell.
std::vector<std::vector<std::pair<int, double>>> area_weights(int in_size,
                                                              int out_size) {
  std::vector<std::vector<std::pair<int, double>>> weights(out_size);
  const double scale = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    const double start = o * scale;
    const double end = (o + 1) * scale;
    for (int i = static_cast<int>(std::floor(start));
         i < std::min(in_size, static_cast<int>(std::ceil(end))); ++i) {
      const double overlap = std::min(end, i + 1.0) - std::max(start, double(i));
      if (overlap > 0.0) weights[o].emplace_back(i, overlap / scale);
    }
  }
  return weights;
}

RasterImage resize_area(const RasterImage& image, int out_h, int out_w) {
  const int c = image.channels();
  const auto wy = area_weights(image.height(), out_h);
  const auto wx = area_weights(image.width(), out_w);
  std::vector<double> out(static_cast<std::size_t>(out_h) * out_w * c, 0.0);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      double* dst = &out[(static_cast<std::size_t>(y) * out_w + x) * c];
      for (auto [sy, fy] : wy[y]) {
        for (auto [sx, fx] : wx[x]) {
          for (int ch = 0; ch < c; ++ch) dst[ch] += fy * fx * image.at(sy, sx, ch);
        }
      }
    }
  }
  // Weights sum to one up to rounding; keep the convex-hull property exact.
  const auto values = image.values();
  for (int ch = 0; ch < c; ++ch) {
    double lo = values[ch], hi = values[ch];
    for (std::size_t i = ch; i < values.size(); i += c) {
      lo = std::min(lo, values[i]);
      hi = std::max(hi, values[i]);
    }
    for (std::size_t i = ch; i < out.size(); i += c) out[i] = std::clamp(out[i], lo, hi);
  }
  return RasterImage(out_h, out_w, c, image.modality(), std::move(out),
                     image.normalization());
}

RasterImage crop(const RasterImage& image, int y0, int x0, int h, int w) {
  const int c = image.channels();
  std::vector<double> out(static_cast<std::size_t>(h) * w * c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        out[(static_cast<std::size_t>(y) * w + x) * c + ch] =
            image.at(y0 + y, x0 + x, ch);
      }
    }
  }
  return RasterImage(h, w, c, image.modality(), std::move(out),
                     image.normalization());
}

LabelMask crop(const LabelMask& mask, int y0, int x0, int h, int w) {
  std::vector<std::int32_t> out(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out[static_cast<std::size_t>(y) * w + x] = mask.at(y0 + y, x0 + x);
    }
  }
  return LabelMask(h, w, std::move(out), mask.taxonomy());
}

// Generic remap: dst(y, x) = src(map(y, x)). Works on any raster layout.
template <typename Fn>
RasterImage remap_image(const RasterImage& image, int out_h, int out_w,
                        Fn&& source_of) {
  const int c = image.channels();
  std::vector<double> out(static_cast<std::size_t>(out_h) * out_w * c);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const auto [sy, sx] = source_of(y, x);
      for (int ch = 0; ch < c; ++ch) {
        out[(static_cast<std::size_t>(y) * out_w + x) * c + ch] =
            image.at(sy, sx, ch);
      }
    }
  }
  return RasterImage(out_h, out_w, c, image.modality(), std::move(out),
                     image.normalization());
}

template <typename Fn>
LabelMask remap_mask(const LabelMask& mask, int out_h, int out_w,
                     Fn&& source_of) {
  std::vector<std::int32_t> out(static_cast<std::size_t>(out_h) * out_w);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const auto [sy, sx] = source_of(y, x);
      out[static_cast<std::size_t>(y) * out_w + x] = mask.at(sy, sx);
    }
  }
  return LabelMask(out_h, out_w, std::move(out), mask.taxonomy());
}

RasterImage vflip(const RasterImage& image) {
  const int h = image.height();
  return remap_image(image, h, image.width(), [h](int y, int x) {
    return std::pair{h - 1 - y, x};
  });
}

LabelMask vflip(const LabelMask& mask) {
  const int h = mask.height();
  return remap_mask(mask, h, mask.width(), [h](int y, int x) {
    return std::pair{h - 1 - y, x};
  });
}

// Counter-clockwise quarter turns.
RasterImage rot90(const RasterImage& image, int turns) {
  const int h = image.height(), w = image.width();
  switch (turns & 3) {
    case 1:
      return remap_image(image, w, h, [w](int y, int x) { return std::pair{x, w - 1 - y}; });
    case 2:
      return remap_image(image, h, w, [h, w](int y, int x) { return std::pair{h - 1 - y, w - 1 - x}; });
    case 3:
      return remap_image(image, w, h, [h](int y, int x) { return std::pair{h - 1 - x, y}; });
    default:
      return image;
  }
}

LabelMask rot90(const LabelMask& mask, int turns) {
  const int h = mask.height(), w = mask.width();
  switch (turns & 3) {
    case 1:
      return remap_mask(mask, w, h, [w](int y, int x) { return std::pair{x, w - 1 - y}; });
    case 2:
      return remap_mask(mask, h, w, [h, w](int y, int x) { return std::pair{h - 1 - y, w - 1 - x}; });
    case 3:
      return remap_mask(mask, w, h, [h](int y, int x) { return std::pair{h - 1 - x, y}; });
    default:
      return mask;
  }
}

AugmentedPair rotate_free(const RasterImage& image, const LabelMask& mask,
                          double degrees) {
  const int h = image.height(), w = image.width(), c = image.channels();
  const double rad = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  std::vector<double> img(image.values().size(), 0.0);
  std::vector<std::int32_t> lab(mask.pixel_count(), mask.ignore_value());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Inverse rotation of the destination pixel center.
      const double dy = y - cy, dx = x - cx;
      const double sy = cy + cs * dy - sn * dx;
      const double sx = cx + sn * dy + cs * dx;
      const std::size_t dst = static_cast<std::size_t>(y) * w + x;
      const int ny = static_cast<int>(std::lround(sy));
      const int nx = static_cast<int>(std::lround(sx));
      if (ny >= 0 && ny < h && nx >= 0 && nx < w) lab[dst] = mask.at(ny, nx);
      if (sy < 0.0 || sy > h - 1 || sx < 0.0 || sx > w - 1) continue;
      const int y0 = static_cast<int>(std::floor(sy));
      const int x0 = static_cast<int>(std::floor(sx));
      const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
      const double fy = sy - y0, fx = sx - x0;
      for (int ch = 0; ch < c; ++ch) {
        img[dst * c + ch] = (1 - fy) * ((1 - fx) * image.at(y0, x0, ch) + fx * image.at(y0, x1, ch)) +
                            fy * ((1 - fx) * image.at(y1, x0, ch) + fx * image.at(y1, x1, ch));
      }
    }
  }
  return {RasterImage(h, w, c, image.modality(), std::move(img), image.normalization()),
          LabelMask(h, w, std::move(lab), mask.taxonomy())};
}

RasterImage color_jitter(const RasterImage& image,
                         const ColorJitterConfig& cfg, Rng& rng) {
  std::vector<double> v(image.values().begin(), image.values().end());
  const int c = image.channels();
  const std::size_t n = image.pixel_count();
  if (cfg.brightness > 0.0) {
    const double factor = uniform(rng, 1.0 - cfg.brightness, 1.0 + cfg.brightness);
    for (auto& x : v) x *= factor;
  }
  if (cfg.contrast > 0.0) {
    const double factor = uniform(rng, 1.0 - cfg.contrast, 1.0 + cfg.contrast);
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    for (auto& x : v) x = (x - mean) * factor + mean;
  }
  if (cfg.saturation > 0.0 && c == 3) {
    const double factor = uniform(rng, 1.0 - cfg.saturation, 1.0 + cfg.saturation);
    for (std::size_t p = 0; p < n; ++p) {
      double* px = &v[p * 3];
      const double gray = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
      for (int ch = 0; ch < 3; ++ch) px[ch] = gray + (px[ch] - gray) * factor;
    }
  }
  for (auto& x : v) x = std::clamp(x, 0.0, 1.0);
  return RasterImage(image.height(), image.width(), c, image.modality(),
                     std::move(v), image.normalization());
}

}  // namespace

void RaaConfig::validate() const {
  if (!(r1 > 0.0 && r1 <= r2 && r2 <= 1.0)) {
    throw ValidationError("RAA ratios must satisfy 0 < r1 <= r2 <= 1");
  }
  check_prob(apply_prob, "raa.apply_prob");
}

void AugmentPipelineConfig::validate() const {
  check_prob(hflip_prob, "hflip_prob");
  check_prob(vflip_prob, "vflip_prob");
  check_prob(rotate_prob, "rotate_prob");
  if (!(resized_crop.scale_min > 0.0 &&
        resized_crop.scale_min <= resized_crop.scale_max &&
        resized_crop.scale_max <= 1.0)) {
    throw ValidationError("crop scale must satisfy 0 < min <= max <= 1");
  }
  if (resized_crop.out_height < 0 || resized_crop.out_width < 0) {
    throw ValidationError("crop output size must be positive");
  }
  if (color_jitter.brightness < 0.0 || color_jitter.contrast < 0.0 ||
      color_jitter.saturation < 0.0 || color_jitter.brightness > 1.0 ||
      color_jitter.contrast > 1.0 || color_jitter.saturation > 1.0) {
    throw ValidationError("color jitter deltas must lie in [0,1]");
  }
  raa.validate();
}

RasterImage resize_bilinear(const RasterImage& image, int out_height,
                            int out_width) {
  if (out_height < 1 || out_width < 1) {
    throw ValidationError("resize target must be at least 1x1");
  }
  if (out_height == image.height() && out_width == image.width()) return image;
  const int c = image.channels();
  const auto ty = bilinear_taps(image.height(), out_height);
  const auto tx = bilinear_taps(image.width(), out_width);
  std::vector<double> out(static_cast<std::size_t>(out_height) * out_width * c);
  for (int y = 0; y < out_height; ++y) {
    const auto& a = ty[y];
    for (int x = 0; x < out_width; ++x) {
      const auto& b = tx[x];
      for (int ch = 0; ch < c; ++ch) {
        const double top = (1 - b.frac) * image.at(a.lo, b.lo, ch) + b.frac * image.at(a.lo, b.hi, ch);
        const double bot = (1 - b.frac) * image.at(a.hi, b.lo, ch) + b.frac * image.at(a.hi, b.hi, ch);
        out[(static_cast<std::size_t>(y) * out_width + x) * c + ch] =
            (1 - a.frac) * top + a.frac * bot;
      }
    }
  }
  return RasterImage(out_height, out_width, c, image.modality(),
                     std::move(out), image.normalization());
}

RasterImage degrade_resolution(const RasterImage& image, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw ValidationError("degradation ratio must lie in (0,1]");
  }
  if (ratio == 1.0) return image;
  const int h = static_cast<int>(std::ceil(ratio * image.height()));
  const int w = static_cast<int>(std::ceil(ratio * image.width()));
  return resize_bilinear(resize_area(image, h, w), image.height(), image.width());
}

LabelMask resize_nearest(const LabelMask& mask, int out_height,
                         int out_width) {
  if (out_height < 1 || out_width < 1) {
    throw ValidationError("resize target must be at least 1x1");
  }
  const double sy = static_cast<double>(mask.height()) / out_height;
  const double sx = static_cast<double>(mask.width()) / out_width;
  const int h = mask.height(), w = mask.width();
  return remap_mask(mask, out_height, out_width, [=](int y, int x) {
    return std::pair{std::min(h - 1, static_cast<int>(std::floor((y + 0.5) * sy))),
                     std::min(w - 1, static_cast<int>(std::floor((x + 0.5) * sx)))};
  });
}

RasterImage raa(const RasterImage& image, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw ValidationError("RAA ratio must lie in (0,1]");
  }
  if (ratio == 1.0) return image;
  const int h = static_cast<int>(std::ceil(ratio * image.height()));
  const int w = static_cast<int>(std::ceil(ratio * image.width()));
  if (h < 1 || w < 1) throw ValidationError("RAA downsampled size below 1 pixel");
  return resize_bilinear(resize_bilinear(image, h, w), image.height(),
                         image.width());
}

std::optional<double> sample_raa_ratio(const RaaConfig& cfg, Rng& rng) {
  cfg.validate();
  if (!bernoulli(rng, cfg.apply_prob)) return std::nullopt;
  if (cfg.r1 == cfg.r2) return cfg.r1;
  return uniform(rng, cfg.r1, cfg.r2);
}

RasterImage hflip(const RasterImage& image) {
  const int w = image.width();
  return remap_image(image, image.height(), w, [w](int y, int x) {
    return std::pair{y, w - 1 - x};
  });
}

LabelMask hflip(const LabelMask& mask) {
  const int w = mask.width();
  return remap_mask(mask, mask.height(), w, [w](int y, int x) {
    return std::pair{y, w - 1 - x};
  });
}

AugmentedPair augment_pair(const RasterImage& image, const LabelMask& mask,
                           const AugmentPipelineConfig& cfg, Rng& rng,
                           bool allow_raa) {
  cfg.validate();
  if (image.height() != mask.height() || image.width() != mask.width()) {
    throw ValidationError("image and mask are not spatially aligned");
  }
  const int h = image.height(), w = image.width();
  const int out_h = cfg.resized_crop.out_height > 0 ? cfg.resized_crop.out_height : h;
  const int out_w = cfg.resized_crop.out_width > 0 ? cfg.resized_crop.out_width : w;

  const auto& rc = cfg.resized_crop;
  const double scale = rc.scale_min == rc.scale_max ? rc.scale_min
                                                    : uniform(rng, rc.scale_min, rc.scale_max);
  const double side = std::sqrt(scale);
  const int ch = std::clamp(static_cast<int>(std::lround(side * h)), 1, h);
  const int cw = std::clamp(static_cast<int>(std::lround(side * w)), 1, w);
  const int y0 = ch < h ? uniform_int(rng, 0, h - ch) : 0;
  const int x0 = cw < w ? uniform_int(rng, 0, w - cw) : 0;

  RasterImage img = resize_bilinear(crop(image, y0, x0, ch, cw), out_h, out_w);
  LabelMask lab = resize_nearest(crop(mask, y0, x0, ch, cw), out_h, out_w);

  if (bernoulli(rng, cfg.hflip_prob)) {
    img = hflip(img);
    lab = hflip(lab);
  }
  if (bernoulli(rng, cfg.vflip_prob)) {
    img = vflip(img);
    lab = vflip(lab);
  }
  if (bernoulli(rng, cfg.rotate_prob)) {
    if (cfg.free_rotation) {
      const double deg = uniform(rng, -cfg.max_rotation_deg, cfg.max_rotation_deg);
      auto rotated = rotate_free(img, lab, deg);
      img = std::move(rotated.image);
      lab = std::move(rotated.mask);
    } else {
      // Quarter turns would change the shape of non-square outputs.
      const int turns = out_h == out_w ? uniform_int(rng, 1, 3) : 2;
      img = rot90(img, turns);
      lab = rot90(lab, turns);
    }
  }

  img = color_jitter(img, cfg.color_jitter, rng);

  if (allow_raa) {
    if (auto ratio = sample_raa_ratio(cfg.raa, rng)) img = raa(img, *ratio);
  }
  return {std::move(img), std::move(lab)};
}

}  // namespace landcover
