#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "landcover/raster.hpp"

namespace landcover::io {

// Decoded PNG samples, interleaved, at the file's bit depth (8 or 16).
struct PngData {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (gray) or 3 (RGB)
  int bit_depth = 8;
  std::vector<std::uint16_t> samples;
};

void write_png(const std::filesystem::path& path, const PngData& data);
PngData read_png(const std::filesystem::path& path);

// Rasters are stored as 16-bit PNG; values are quantized to k/65535.
double quantize16(double value);
RasterImage quantize16(const RasterImage& image);
void write_raster(const std::filesystem::path& path, const RasterImage& image);
RasterImage read_raster(const std::filesystem::path& path, Modality modality);

// Labels are stored as 8-bit single-channel PNG.
void write_labels(const std::filesystem::path& path, const LabelMask& mask);
LabelMask read_labels(const std::filesystem::path& path, TaxonomyPtr taxonomy);

// Probability maps as little-endian float64 .npy arrays of shape (H, W, K).
void write_npy(const std::filesystem::path& path, const DenseArray3& array);
DenseArray3 read_npy(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace landcover::io
