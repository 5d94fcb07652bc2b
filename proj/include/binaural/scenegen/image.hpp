#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "binaural/core/error.hpp"

namespace binaural::scenegen {

/// 8-bit RGB raster, row-major, interleaved.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;

  RgbImage() = default;
  RgbImage(int h, int w) : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, 0) {}

  std::uint8_t& at(int y, int x, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// Metric depth in meters, row-major.
struct DepthMap {
  int height = 0;
  int width = 0;
  std::vector<double> meters;

  DepthMap() = default;
  DepthMap(int h, int w, double fill) : height(h), width(w), meters(static_cast<std::size_t>(h) * w, fill) {}

  double& at(int y, int x) { return meters[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return meters[static_cast<std::size_t>(y) * width + x]; }
};

/// 8-bit grayscale raster (heatmaps).
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;
};

namespace detail {

inline void write_png(const std::filesystem::path& path, int h, int w, png_uint_32 format, const void* data,
                      std::int32_t row_stride) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = format;
  if (!png_image_write_to_file(&img, path.c_str(), 0, data, row_stride, nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
}

inline std::vector<std::uint8_t> read_png(const std::filesystem::path& path, png_uint_32 format, int& h, int& w) {
  if (!std::filesystem::exists(path)) throw IoError("missing file " + path.string());
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw FormatError("cannot read PNG " + path.string() + ": " + img.message);
  img.format = format;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw FormatError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  h = static_cast<int>(img.height);
  w = static_cast<int>(img.width);
  return buf;
}

}  // namespace detail

inline void save_png(const std::filesystem::path& path, const RgbImage& im) {
  detail::write_png(path, im.height, im.width, PNG_FORMAT_RGB, im.rgb.data(), 0);
}

inline void save_png(const std::filesystem::path& path, const GrayImage& im) {
  detail::write_png(path, im.height, im.width, PNG_FORMAT_GRAY, im.pixels.data(), 0);
}

inline RgbImage load_png_rgb(const std::filesystem::path& path) {
  RgbImage im;
  im.rgb = detail::read_png(path, PNG_FORMAT_RGB, im.height, im.width);
  return im;
}

/// Depth is stored as 16-bit linear grayscale in millimeters.
inline void save_depth_png(const std::filesystem::path& path, const DepthMap& d) {
  std::vector<std::uint16_t> mm(d.meters.size());
  for (std::size_t i = 0; i < mm.size(); ++i) {
    const double v = std::clamp(d.meters[i] * 1000.0, 0.0, 65535.0);
    mm[i] = static_cast<std::uint16_t>(std::lround(v));
  }
  detail::write_png(path, d.height, d.width, PNG_FORMAT_LINEAR_Y, mm.data(), 0);
}

inline DepthMap load_depth_png(const std::filesystem::path& path) {
  int h = 0, w = 0;
  const auto raw = detail::read_png(path, PNG_FORMAT_LINEAR_Y, h, w);
  DepthMap d(h, w, 0.0);
  for (std::size_t i = 0; i < d.meters.size(); ++i) {
    std::uint16_t mm;
    std::memcpy(&mm, raw.data() + 2 * i, 2);
    d.meters[i] = mm / 1000.0;
  }
  return d;
}

}  // namespace binaural::scenegen
