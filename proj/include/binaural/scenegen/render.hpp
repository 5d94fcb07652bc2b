#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>
#include <random>
#include <vector>

#include "binaural/core/random.hpp"
#include "binaural/scenegen/image.hpp"
#include "binaural/scenegen/scene.hpp"
#include "binaural/signal/fft.hpp"
#include "binaural/signal/waveform.hpp"

namespace binaural::scenegen {

inline constexpr double kHeadWidth = 0.18;      // m
inline constexpr double kSpeedOfSound = 343.0;  // m/s
inline constexpr double kBackgroundDepth = 20.0;
inline constexpr int kDelayTaps = 16;

/// Dry source waveform with unit RMS.
inline std::vector<double> source_signal(const SignalSpec& spec, std::size_t n, int sample_rate) {
  std::vector<double> x(n, 0.0);
  if (spec.kind == SignalKind::SineMixture) {
    for (std::size_t p = 0; p < 3; ++p)
      for (std::size_t i = 0; i < n; ++i)
        x[i] += spec.amps[p] *
                std::sin(2.0 * std::numbers::pi * spec.freqs[p] * static_cast<double>(i) / sample_rate + spec.phases[p]);
  } else {
    Rng rng(spec.seed);
    std::normal_distribution<double> dist;
    std::vector<std::complex<double>> buf(n);
    for (auto& v : buf) v = dist(rng);
    signal::Fft::c2c(buf, false);
    const double lo = spec.band_low, hi = 2.0 * spec.band_low;
    for (std::size_t k = 0; k < n; ++k) {
      const double f = static_cast<double>(std::min(k, n - k)) * sample_rate / static_cast<double>(n);
      if (f < lo || f > hi) buf[k] = 0.0;
    }
    signal::Fft::c2c(buf, true);
    for (std::size_t i = 0; i < n; ++i) x[i] = buf[i].real();
  }
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double rms = std::sqrt(ss / static_cast<double>(n));
  if (rms > 0.0)
    for (auto& v : x) v /= rms;
  return x;
}

/// Delays `x` by `delay` samples (may be fractional) with a 16-tap
/// Hann-windowed sinc interpolator. Output has the same length; samples
/// before the start are treated as zero.
inline std::vector<double> fractional_delay(const std::vector<double>& x, double delay) {
  const auto base = static_cast<long>(std::floor(delay));
  const long first = base - (kDelayTaps / 2 - 1);
  std::vector<double> taps(kDelayTaps);
  for (int j = 0; j < kDelayTaps; ++j) {
    const double t = static_cast<double>(first + j) - delay;
    const double sinc = t == 0.0 ? 1.0 : std::sin(std::numbers::pi * t) / (std::numbers::pi * t);
    const double win = std::abs(t) < kDelayTaps / 2.0 ? 0.5 + 0.5 * std::cos(std::numbers::pi * t / (kDelayTaps / 2.0)) : 0.0;
    taps[static_cast<std::size_t>(j)] = sinc * win;
  }
  const double dc = std::accumulate(taps.begin(), taps.end(), 0.0);
  for (auto& t : taps) t /= dc;
  const long n = static_cast<long>(x.size());
  std::vector<double> y(x.size(), 0.0);
  for (long i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < kDelayTaps; ++j) {
      const long src = i - (first + j);
      if (src >= 0 && src < n) acc += taps[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(src)];
    }
    y[static_cast<std::size_t>(i)] = acc;
  }
  return y;
}

struct EarGains {
  double left = 0.0;
  double right = 0.0;
};

/// Constant-power pan law scaled by 1/distance. Written as g(a) / g(-a) of
/// the same expression so that mirroring the azimuth swaps gains exactly.
inline EarGains pan_gains(double azimuth_deg, double distance) {
  const double a = azimuth_deg / 180.0 * (std::numbers::pi / 2.0);
  return {std::cos(std::numbers::pi / 4.0 + a) / distance, std::cos(std::numbers::pi / 4.0 - a) / distance};
}

/// Interaural delay in seconds (positive: left ear lags).
inline double interaural_delay(double azimuth_deg) {
  return kHeadWidth * std::sin(azimuth_deg * std::numbers::pi / 180.0) / kSpeedOfSound;
}

/// Ground-truth binaural rendering: pan gains per source, interaural delay on
/// the far ear, channels summed over sources.
inline signal::Waveform render_binaural(const SceneSpec& scene, int sample_rate = 16000) {
  scene.validate(sample_rate);
  const std::size_t n = scene.num_samples(sample_rate);
  std::vector<double> left(n, 0.0), right(n, 0.0);
  for (const auto& src : scene.sources) {
    auto dry = source_signal(src.signal, n, sample_rate);
    for (auto& v : dry) v *= scene.room_gain;
    const auto g = pan_gains(src.azimuth, src.distance);
    const double delay = std::abs(interaural_delay(src.azimuth)) * sample_rate;
    std::vector<double> delayed = delay > 0.0 ? fractional_delay(dry, delay) : dry;
    const auto& l = src.azimuth > 0.0 ? delayed : dry;
    const auto& r = src.azimuth < 0.0 ? delayed : dry;
    for (std::size_t i = 0; i < n; ++i) {
      left[i] += g.left * l[i];
      right[i] += g.right * r[i];
    }
  }
  return signal::Waveform::stereo(sample_rate, std::move(left), std::move(right));
}

/// Mono mixture x(t) = y_l(t) + y_r(t).
inline signal::Waveform mono_mix(const signal::Waveform& stereo) {
  if (!stereo.is_stereo()) throw ShapeError("mono_mix expects a stereo waveform");
  std::vector<double> x(stereo.num_samples());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = stereo.left()[i] + stereo.right()[i];
  return signal::Waveform::mono(stereo.sample_rate, std::move(x));
}

struct RasterConfig {
  int height = 112;
  int width = 112;
  int patch_size = 16;
  double blob_scale = 0.08;  ///< blob sigma = blob_scale * width / distance
  std::array<std::uint8_t, 3> background{32, 32, 32};

  void validate() const {
    if (height <= 0 || width <= 0 || patch_size <= 0 || height % patch_size != 0 || width % patch_size != 0)
      throw ConfigError("image size " + std::to_string(height) + "x" + std::to_string(width) +
                        " is not a positive multiple of the patch size " + std::to_string(patch_size));
  }
};

inline std::array<std::uint8_t, 3> source_color(SignalKind k) {
  return k == SignalKind::SineMixture ? std::array<std::uint8_t, 3>{230, 80, 60}
                                      : std::array<std::uint8_t, 3>{60, 120, 230};
}

namespace detail {

struct Blob {
  double center_offset;  ///< horizontal offset of the center from the image midline, pixels
  double sigma;
  double distance;
  SignalKind kind;
};

inline std::vector<Blob> blobs_far_to_near(const SceneSpec& scene, const RasterConfig& cfg) {
  std::vector<Blob> out;
  for (const auto& s : scene.sources)
    out.push_back({cfg.width * s.azimuth / 180.0, cfg.blob_scale * cfg.width / s.distance, s.distance, s.signal.kind});
  std::stable_sort(out.begin(), out.end(), [](const Blob& a, const Blob& b) { return a.distance > b.distance; });
  return out;
}

// Offsets are measured from the image midline so that mirroring the scene
// negates them exactly.
inline double dx_of(int x, int width, const Blob& b) { return (x + 0.5 - width / 2.0) - b.center_offset; }
inline double dy_of(int y, int height) { return y + 0.5 - height / 2.0; }

}  // namespace detail

/// Gaussian blob per source on a uniform background, nearest source on top.
inline RgbImage render_image(const SceneSpec& scene, const RasterConfig& cfg = {}) {
  cfg.validate();
  RgbImage im(cfg.height, cfg.width);
  const auto blobs = detail::blobs_far_to_near(scene, cfg);
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x) {
      std::array<double, 3> px{double(cfg.background[0]), double(cfg.background[1]), double(cfg.background[2])};
      for (const auto& b : blobs) {
        const double dx = detail::dx_of(x, cfg.width, b), dy = detail::dy_of(y, cfg.height);
        const double alpha = std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
        const auto col = source_color(b.kind);
        for (int c = 0; c < 3; ++c) px[c] += alpha * (col[c] - px[c]);
      }
      for (int c = 0; c < 3; ++c) im.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(px[c], 0.0, 255.0)));
    }
  return im;
}

/// Background at 20 m; inside a blob footprint (within 2 sigma) the source
/// distance, nearest source winning on overlap.
inline DepthMap render_depth(const SceneSpec& scene, const RasterConfig& cfg = {}) {
  cfg.validate();
  DepthMap d(cfg.height, cfg.width, kBackgroundDepth);
  const auto blobs = detail::blobs_far_to_near(scene, cfg);
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x)
      for (const auto& b : blobs) {
        const double dx = detail::dx_of(x, cfg.width, b), dy = detail::dy_of(y, cfg.height);
        if (dx * dx + dy * dy <= 4.0 * b.sigma * b.sigma) d.at(y, x) = std::min(d.at(y, x), b.distance);
      }
  return d;
}

}  // namespace binaural::scenegen
