#include "landcover/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <memory>
#include <regex>
#include <sstream>

#include "landcover/errors.hpp"

namespace landcover::io {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  return f;
}

void png_warning_handler(png_structp, png_const_charp) {}

}  // namespace

void write_png(const std::filesystem::path& path, const PngData& data) {
  if (data.channels != 1 && data.channels != 3) {
    throw ValidationError("png writer supports 1 or 3 channels");
  }
  if (data.bit_depth != 8 && data.bit_depth != 16) {
    throw ValidationError("png writer supports 8 or 16 bit depth");
  }
  auto file = open_file(path, "wb");
  const std::size_t row_samples = static_cast<std::size_t>(data.width) * data.channels;
  const std::size_t bytes_per = data.bit_depth / 8;
  std::vector<png_byte> bytes(row_samples * bytes_per * data.height);
  for (std::size_t i = 0; i < row_samples * data.height; ++i) {
    if (bytes_per == 1) {
      bytes[i] = static_cast<png_byte>(data.samples[i]);
    } else {  // PNG stores 16-bit samples big-endian
      bytes[2 * i] = static_cast<png_byte>(data.samples[i] >> 8);
      bytes[2 * i + 1] = static_cast<png_byte>(data.samples[i] & 0xff);
    }
  }
  std::vector<png_bytep> rows(data.height);
  for (int y = 0; y < data.height; ++y) rows[y] = bytes.data() + y * row_samples * bytes_per;

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            nullptr, png_warning_handler);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png: allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png: failed writing '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, data.width, data.height, data.bit_depth,
               data.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

PngData read_png(const std::filesystem::path& path) {
  auto file = open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError("'" + path.string() + "' is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           nullptr, png_warning_handler);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("png: allocation failed");
  }
  std::vector<png_byte> bytes;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("png: corrupt file '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  const auto width = static_cast<int>(png_get_image_width(png, info));
  const auto height = static_cast<int>(png_get_image_height(png, info));
  const int channels = color == PNG_COLOR_TYPE_GRAY ? 1 : color == PNG_COLOR_TYPE_RGB ? 3 : 0;
  if (channels == 0 || (depth != 8 && depth != 16)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("'" + path.string() + "' has an unsupported PNG format");
  }
  const std::size_t row_bytes = static_cast<std::size_t>(width) * channels * (depth / 8);
  bytes.resize(row_bytes * height);
  rows.resize(height);
  for (int y = 0; y < height; ++y) rows[y] = bytes.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  PngData out{width, height, channels, depth, {}};
  out.samples.resize(static_cast<std::size_t>(width) * channels * height);
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    out.samples[i] = depth == 8 ? bytes[i]
                                : static_cast<std::uint16_t>((bytes[2 * i] << 8) | bytes[2 * i + 1]);
  }
  return out;
}

double quantize16(double value) {
  return std::round(std::clamp(value, 0.0, 1.0) * 65535.0) / 65535.0;
}

RasterImage quantize16(const RasterImage& image) {
  std::vector<double> v(image.values().begin(), image.values().end());
  for (auto& x : v) x = quantize16(x);
  return RasterImage(image.height(), image.width(), image.channels(),
                     image.modality(), std::move(v), image.normalization());
}

void write_raster(const std::filesystem::path& path, const RasterImage& image) {
  PngData data{image.width(), image.height(), image.channels(), 16, {}};
  data.samples.reserve(image.values().size());
  for (double v : image.values()) {
    data.samples.push_back(static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0)));
  }
  write_png(path, data);
}

RasterImage read_raster(const std::filesystem::path& path, Modality modality) {
  const auto data = read_png(path);
  const double scale = data.bit_depth == 16 ? 65535.0 : 255.0;
  std::vector<double> v(data.samples.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = data.samples[i] / scale;
  return RasterImage(data.height, data.width, data.channels, modality, std::move(v));
}

void write_labels(const std::filesystem::path& path, const LabelMask& mask) {
  PngData data{mask.width(), mask.height(), 1, 8, {}};
  data.samples.reserve(mask.pixel_count());
  for (auto v : mask.values()) {
    if (v < 0 || v > 255) throw ValidationError("label value does not fit in 8 bits");
    data.samples.push_back(static_cast<std::uint16_t>(v));
  }
  write_png(path, data);
}

LabelMask read_labels(const std::filesystem::path& path, TaxonomyPtr taxonomy) {
  const auto data = read_png(path);
  if (data.channels != 1 || data.bit_depth != 8) {
    throw IoError("'" + path.string() + "' is not an 8-bit single-channel label raster");
  }
  std::vector<std::int32_t> v(data.samples.begin(), data.samples.end());
  try {
    return LabelMask(data.height, data.width, std::move(v), std::move(taxonomy));
  } catch (const ValidationError& e) {
    throw IoError("'" + path.string() + "': " + e.what());
  }
}

void write_npy(const std::filesystem::path& path, const DenseArray3& array) {
  std::ostringstream header;
  header << "{'descr': '<f8', 'fortran_order': False, 'shape': (" << array.height
         << ", " << array.width << ", " << array.channels << "), }";
  std::string h = header.str();
  const std::size_t preamble = 10;
  const std::size_t total = (preamble + h.size() + 1 + 63) / 64 * 64;
  h.append(total - preamble - h.size() - 1, ' ');
  h.push_back('\n');

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "'");
  out.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(h.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  static_assert(sizeof(double) == 8);
  out.write(reinterpret_cast<const char*>(array.values.data()),
            static_cast<std::streamsize>(array.values.size() * sizeof(double)));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

DenseArray3 read_npy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  char magic[10];
  in.read(magic, 10);
  if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0 || magic[6] != 1) {
    throw IoError("'" + path.string() + "' is not a version-1 .npy file");
  }
  const std::size_t len = static_cast<unsigned char>(magic[8]) |
                          (static_cast<std::size_t>(static_cast<unsigned char>(magic[9])) << 8);
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  static const std::regex descr_re("'descr':\\s*'<f8'");
  static const std::regex order_re("'fortran_order':\\s*False");
  static const std::regex shape_re("'shape':\\s*\\((\\d+),\\s*(\\d+),\\s*(\\d+),?\\)");
  std::smatch m;
  if (!std::regex_search(header, descr_re) || !std::regex_search(header, order_re) ||
      !std::regex_search(header, m, shape_re)) {
    throw IoError("'" + path.string() + "' is not a C-order float64 (H, W, K) array");
  }
  DenseArray3 out(std::stoi(m[1]), std::stoi(m[2]), std::stoi(m[3]));
  in.read(reinterpret_cast<char*>(out.values.data()),
          static_cast<std::streamsize>(out.values.size() * sizeof(double)));
  if (!in) throw IoError("'" + path.string() + "' is truncated");
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

}  // namespace landcover::io
