#pragma once

#include <cmath>
#include <filesystem>

#include "binaural/evaluation/evaluate.hpp"
#include "binaural/scenegen/image.hpp"

namespace binaural::evaluation {

/// Mean over the time-frequency bins of one attention record, as a
/// [grid_h x grid_w] map.
inline Tensor<double> token_map(const fusion::AttentionRecord& r, std::int64_t grid_h, std::int64_t grid_w) {
  const auto& m = r.map;
  if (m.rank() != 3 || m.dim(0) != grid_h * grid_w)
    throw ShapeError("attention map " + shape_str(m.shape()) + " does not match a " + std::to_string(grid_h) + "x" +
                     std::to_string(grid_w) + " token grid");
  const std::int64_t bins = m.dim(1) * m.dim(2);
  Tensor<double> out({grid_h, grid_w});
  for (std::int64_t p = 0; p < grid_h * grid_w; ++p) {
    double s = 0.0;
    for (std::int64_t k = 0; k < bins; ++k) s += m[p * bins + k];
    out[p] = s / static_cast<double>(bins);
  }
  return out;
}

/// Min-max normalisation to [0, 1]; a map with zero range becomes 0.5.
inline Tensor<double> normalize(const Tensor<double>& t) {
  const auto [lo, hi] = std::minmax_element(t.vec().begin(), t.vec().end());
  Tensor<double> out(t.shape(), 0.5);
  if (*hi > *lo)
    for (std::int64_t i = 0; i < t.numel(); ++i) out[i] = (t[i] - *lo) / (*hi - *lo);
  return out;
}

/// Nearest-neighbour upsampling of a normalised map to a grey image.
inline scenegen::GrayImage heatmap_image(const Tensor<double>& norm, int height, int width) {
  scenegen::GrayImage g{height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width)};
  const std::int64_t gh = norm.dim(0), gw = norm.dim(1);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double v = norm.at(y * gh / height, x * gw / width);
      g.pixels[static_cast<std::size_t>(y) * width + x] = static_cast<std::uint8_t>(std::lround(255.0 * v));
    }
  return g;
}

/// Half-and-half blend of the frame with the heatmap in the red channel.
inline scenegen::RgbImage overlay(const scenegen::RgbImage& frame, const scenegen::GrayImage& heat) {
  if (frame.height != heat.height || frame.width != heat.width) throw ShapeError("overlay: frame and heatmap sizes differ");
  scenegen::RgbImage out(frame.height, frame.width);
  for (int y = 0; y < frame.height; ++y)
    for (int x = 0; x < frame.width; ++x) {
      const double h = heat.pixels[static_cast<std::size_t>(y) * frame.width + x];
      for (int c = 0; c < 3; ++c) {
        const double f = frame.rgb[(static_cast<std::size_t>(y) * frame.width + x) * 3 + c];
        out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(0.5 * f + 0.5 * (c == 0 ? h : 0.0)));
      }
    }
  return out;
}

/// Horizontal centre of mass of a normalised map in [0, 1] (0 = left edge).
inline double center_of_mass_x(const Tensor<double>& norm) {
  const std::int64_t gh = norm.dim(0), gw = norm.dim(1);
  double num = 0.0, den = 0.0;
  for (std::int64_t i = 0; i < gh; ++i)
    for (std::int64_t j = 0; j < gw; ++j) {
      num += norm.at(i, j) * (static_cast<double>(j) + 0.5) / static_cast<double>(gw);
      den += norm.at(i, j);
    }
  return den > 0.0 ? num / den : 0.5;
}

struct ExportedMap {
  int layer = 0;
  fusion::Modality modality{};
  std::filesystem::path heatmap, overlay;
  double com_x = 0.5;
};

struct ExportResult {
  std::string sample;
  std::vector<ExportedMap> maps;
};

inline json to_json(const ExportResult& r) {
  json maps = json::array();
  for (const auto& m : r.maps)
    maps.push_back({{"layer", m.layer},
                    {"modality", fusion::to_string(m.modality)},
                    {"heatmap", m.heatmap.filename().string()},
                    {"overlay", m.overlay.filename().string()},
                    {"com_x", m.com_x}});
  return {{"sample", r.sample}, {"maps", maps}};
}

/// One heatmap and one overlay per decoder layer and visual modality, plus
/// attention.json with the horizontal centre of mass of each map.
template <typename T>
ExportResult export_attention(const audionet::Model<T>& model, const Example& x, const std::filesystem::path& out_dir) {
  if (model.config.modality.count() == 0) throw ConfigError("audio-only model has no attention maps to export");
  const auto p = audionet::predict(model, x.mono, &x.frame, &x.depth, {.record_attention = true});
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  const auto& tower = model.config.image_tower;
  ExportResult r{x.id, {}};
  for (const auto& rec : p.attention) {
    const auto norm = normalize(token_map(rec, tower.grid_h(), tower.grid_w()));
    const auto heat = heatmap_image(norm, x.frame.height, x.frame.width);
    const auto stem = "layer" + std::to_string(rec.layer) + "_" + fusion::to_string(rec.modality);
    ExportedMap m{rec.layer, rec.modality, out_dir / (stem + "_heatmap.png"), out_dir / (stem + "_overlay.png"),
                  center_of_mass_x(norm)};
    scenegen::save_png(m.heatmap, heat);
    scenegen::save_png(m.overlay, overlay(x.frame, heat));
    r.maps.push_back(std::move(m));
  }
  scenegen::write_text(out_dir / "attention.json", to_json(r).dump(2) + "\n");
  return r;
}

}  // namespace binaural::evaluation
