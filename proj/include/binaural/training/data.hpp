#pragma once

#include "binaural/audionet/model.hpp"
#include "binaural/core/parallel.hpp"
#include "binaural/scenegen/dataset.hpp"

namespace binaural::training {

/// One dataset sample held in memory.
struct Example {
  std::string id;
  signal::Waveform stereo, mono;
  scenegen::RgbImage frame;
  scenegen::DepthMap depth;
};

inline Example load_example(const scenegen::DatasetManifest& m, const scenegen::ManifestEntry& e) {
  const auto file = [&](const std::string& rel) {
    const auto p = m.root / rel;
    if (!std::filesystem::exists(p)) throw DataError("sample " + e.id + ": missing file " + p.string());
    return p;
  };
  Example x;
  x.id = e.id;
  try {
    x.stereo = signal::load_wav(file(e.stereo));
    x.frame = scenegen::load_png_rgb(file(e.frame));
    x.depth = scenegen::load_depth_png(file(e.depth));
  } catch (const DataError&) {
    throw;
  } catch (const Error& err) {
    throw DataError("sample " + e.id + ": " + err.what());
  }
  if (!x.stereo.is_stereo()) throw DataError("sample " + e.id + ": stereo file has " + std::to_string(x.stereo.channels.size()) + " channels");
  x.mono = scenegen::mono_mix(x.stereo);
  return x;
}

/// Samples of one split in manifest order; `limit` > 0 keeps the first `limit`.
inline std::vector<Example> load_split(const scenegen::DatasetManifest& m, const std::string& split, int limit = 0,
                                       int threads = 1) {
  auto entries = m.split(split);
  if (limit > 0 && static_cast<int>(entries.size()) > limit) entries.resize(static_cast<std::size_t>(limit));
  std::vector<Example> out(entries.size());
  parallel_for(entries.size(), threads, [&](std::size_t i) { out[i] = load_example(m, *entries[i]); });
  return out;
}

/// Network input plus left/right target planes for one example.
template <typename T>
struct Features {
  audionet::ModelInput<T> input;
  Tensor<T> yl, yr;
};

template <typename T>
Features<T> features(const audionet::ModelConfig& cfg, const Example& x) {
  if (x.mono.sample_rate != cfg.sample_rate)
    throw DataError("sample " + x.id + ": rate " + std::to_string(x.mono.sample_rate) + " differs from model rate " +
                    std::to_string(cfg.sample_rate));
  if (x.frame.height != cfg.image_tower.image_height || x.frame.width != cfg.image_tower.image_width)
    throw DataError("sample " + x.id + ": frame is " + std::to_string(x.frame.height) + "x" + std::to_string(x.frame.width) +
                    ", model expects " + std::to_string(cfg.image_tower.image_height) + "x" +
                    std::to_string(cfg.image_tower.image_width));
  const auto a = signal::stft(x.mono, cfg.stft);
  Features<T> f{audionet::make_input<T>(cfg, a, &x.frame, &x.depth), {}, {}};
  f.yl = signal::stft(signal::Waveform::mono(x.stereo.sample_rate, x.stereo.left()), cfg.stft).planes.template cast<T>();
  f.yr = signal::stft(signal::Waveform::mono(x.stereo.sample_rate, x.stereo.right()), cfg.stft).planes.template cast<T>();
  return f;
}

}  // namespace binaural::training
