#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "binaural/core/tensor.hpp"
#include "binaural/signal/fft.hpp"
#include "binaural/signal/waveform.hpp"

namespace binaural::signal {

/// Framing of the short-time Fourier transform. Frames are not centered:
/// frame t covers samples [t*hop, t*hop + window_len), zero-padded to fft_size.
struct StftParams {
  int window_len = 400;
  int hop = 160;
  int fft_size = 512;

  int num_bins() const { return fft_size / 2 + 1; }

  int num_frames(std::size_t num_samples) const {
    if (num_samples < static_cast<std::size_t>(window_len)) return 0;
    return static_cast<int>((num_samples - static_cast<std::size_t>(window_len)) / static_cast<std::size_t>(hop)) + 1;
  }

  /// Length of the overlap-add reconstruction of `frames` frames.
  std::size_t output_length(int frames) const {
    return frames <= 0 ? 0 : static_cast<std::size_t>(frames - 1) * static_cast<std::size_t>(hop) +
                                 static_cast<std::size_t>(window_len);
  }

  /// Periodic Hann window of length window_len.
  std::vector<double> window() const {
    std::vector<double> w(static_cast<std::size_t>(window_len));
    for (int n = 0; n < window_len; ++n)
      w[static_cast<std::size_t>(n)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / window_len);
    return w;
  }

  /// Shape checks plus the overlap-add condition for exact weighted
  /// overlap-add inversion: the squared window, summed over the frames that
  /// cover any steady-state sample, must stay away from zero.
  void validate() const {
    if (window_len <= 0 || hop <= 0 || fft_size <= 0) throw ConfigError("STFT sizes must be positive");
    if (!(hop <= window_len && window_len <= fft_size))
      throw ConfigError("STFT requires hop <= window_len <= fft_size");
    const auto w = window();
    double peak = 0.0;
    std::vector<double> cover(static_cast<std::size_t>(hop), 0.0);
    for (int n = 0; n < window_len; ++n) cover[static_cast<std::size_t>(n % hop)] += w[static_cast<std::size_t>(n)] * w[static_cast<std::size_t>(n)];
    for (double c : cover) peak = std::max(peak, c);
    for (double c : cover)
      if (c < 1e-6 * peak)
        throw ConfigError("STFT window/hop (" + std::to_string(window_len) + "/" + std::to_string(hop) +
                          ") violates the overlap-add condition");
  }

  friend bool operator==(const StftParams&, const StftParams&) = default;
};

/// Complex spectrogram stored as planes [2 x F x T]: plane 0 real, plane 1 imaginary.
struct Spectrogram {
  Tensor<double> planes;
  StftParams params;

  std::int64_t bins() const { return planes.dim(1); }
  std::int64_t frames() const { return planes.dim(2); }
  std::int64_t plane_size() const { return planes.dim(1) * planes.dim(2); }
};

/// Complex ratio mask [2 x F x T], entries in [-1, 1].
struct Mask {
  Tensor<double> planes;

  static Mask from(Tensor<double> t) {
    for (double v : t.vec())
      if (!(v >= -1.0 && v <= 1.0)) throw DataError("mask entries must lie in [-1, 1]");
    return Mask{std::move(t)};
  }
  static Mask zeros(const Shape& s) { return Mask{Tensor<double>(s)}; }
};

inline Spectrogram stft(const Waveform& w, const StftParams& p = {}) {
  p.validate();
  if (!w.is_mono()) throw ShapeError("stft expects a mono waveform");
  w.validate();
  const auto& x = w.channels[0];
  if (x.size() < static_cast<std::size_t>(p.window_len))
    throw LengthError("stft: " + std::to_string(x.size()) + " samples is shorter than the window (" +
                      std::to_string(p.window_len) + ")");
  const int f = p.num_bins();
  const int t = p.num_frames(x.size());
  const auto win = p.window();
  Spectrogram s{Tensor<double>({2, f, t}), p};
  std::vector<double> frame(static_cast<std::size_t>(p.fft_size));
  std::vector<std::complex<double>> bins(static_cast<std::size_t>(f));
  for (int j = 0; j < t; ++j) {
    std::fill(frame.begin(), frame.end(), 0.0);
    const std::size_t off = static_cast<std::size_t>(j) * static_cast<std::size_t>(p.hop);
    for (int n = 0; n < p.window_len; ++n)
      frame[static_cast<std::size_t>(n)] = x[off + static_cast<std::size_t>(n)] * win[static_cast<std::size_t>(n)];
    Fft::r2c(frame, bins);
    for (int k = 0; k < f; ++k) {
      s.planes.at(0, k, j) = bins[static_cast<std::size_t>(k)].real();
      s.planes.at(1, k, j) = bins[static_cast<std::size_t>(k)].imag();
    }
  }
  return s;
}

/// Weighted overlap-add inverse: sum_t w * ifft(frame_t) / sum_t w^2.
/// `weight_sum`, if given, receives the per-sample sum of squared windows so
/// callers can tell which samples were reconstructible.
inline std::vector<double> istft_samples(const Spectrogram& s, std::vector<double>* weight_sum = nullptr) {
  const auto& p = s.params;
  p.validate();
  if (s.planes.rank() != 3 || s.planes.dim(0) != 2 || s.bins() != p.num_bins())
    throw ShapeError("istft: spectrogram shape " + shape_str(s.planes.shape()) + " does not match params");
  const int t = static_cast<int>(s.frames());
  const std::size_t len = p.output_length(t);
  std::vector<double> y(len, 0.0), wsum(len, 0.0);
  const auto win = p.window();
  std::vector<std::complex<double>> bins(static_cast<std::size_t>(p.num_bins()));
  std::vector<double> frame(static_cast<std::size_t>(p.fft_size));
  for (int j = 0; j < t; ++j) {
    for (int k = 0; k < p.num_bins(); ++k)
      bins[static_cast<std::size_t>(k)] = {s.planes.at(0, k, j), s.planes.at(1, k, j)};
    Fft::c2r(bins, frame);
    const std::size_t off = static_cast<std::size_t>(j) * static_cast<std::size_t>(p.hop);
    for (int n = 0; n < p.window_len; ++n) {
      const double wv = win[static_cast<std::size_t>(n)];
      y[off + static_cast<std::size_t>(n)] += wv * frame[static_cast<std::size_t>(n)] / p.fft_size;
      wsum[off + static_cast<std::size_t>(n)] += wv * wv;
    }
  }
  for (std::size_t i = 0; i < len; ++i) y[i] = wsum[i] > 1e-10 ? y[i] / wsum[i] : 0.0;
  if (weight_sum) *weight_sum = std::move(wsum);
  return y;
}

inline Waveform istft(const Spectrogram& s, int sample_rate = 16000) {
  return Waveform::mono(sample_rate, istft_samples(s));
}

/// Overlap-add inverse pulled toward `prior` where frames give little
/// support: y = (sum_t w*frame_t + lambda*prior) / (sum_t w^2 + lambda).
/// Output has prior.size() samples; samples past the last frame equal the
/// prior. Linear in (s, prior), so per-channel outputs of a split A = L + R
/// with priors x/2 sum back to istft-consistent x.
inline std::vector<double> istft_with_prior(const Spectrogram& s, std::span<const double> prior, double lambda) {
  if (!(lambda > 0.0)) throw ConfigError("istft_with_prior: lambda must be positive");
  std::vector<double> wsum;
  auto y = istft_samples(s, &wsum);
  if (y.size() > prior.size())
    throw LengthError("istft_with_prior: prior has " + std::to_string(prior.size()) + " samples, spectrogram spans " +
                      std::to_string(y.size()));
  std::vector<double> out(prior.begin(), prior.end());
  for (std::size_t i = 0; i < y.size(); ++i)
    out[i] = (y[i] * wsum[i] + lambda * prior[i]) / (wsum[i] + lambda);
  return out;
}

/// Sample range [begin, end) of an istft output in which every sample is
/// covered by overlapping frames away from the signal edges.
inline std::pair<std::size_t, std::size_t> interior_range(const StftParams& p, int frames) {
  const std::size_t len = p.output_length(frames);
  const auto w = static_cast<std::size_t>(p.window_len);
  if (len <= 2 * w) return {0, 0};
  return {w, len - w};
}

namespace detail {
inline void require_same(const Spectrogram& a, const Tensor<double>& b, const char* op) {
  if (a.planes.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.planes.shape()) + " vs " +
                     shape_str(b.shape()));
}
}  // namespace detail

/// Complex multiplication of every bin by the mask.
inline Spectrogram apply_mask(const Spectrogram& a, const Mask& m) {
  detail::require_same(a, m.planes, "apply_mask");
  const std::int64_t n = a.plane_size();
  Spectrogram o{Tensor<double>(a.planes.shape()), a.params};
  const auto& av = a.planes;
  const auto& mv = m.planes;
  for (std::int64_t i = 0; i < n; ++i) {
    o.planes[i] = mv[i] * av[i] - mv[n + i] * av[n + i];
    o.planes[n + i] = mv[i] * av[n + i] + mv[n + i] * av[i];
  }
  return o;
}

/// Left = (A + O) / 2, right = (A - O) / 2.
inline std::pair<Spectrogram, Spectrogram> recombine(const Spectrogram& a, const Spectrogram& o) {
  detail::require_same(a, o.planes, "recombine");
  Spectrogram l{Tensor<double>(a.planes.shape()), a.params};
  Spectrogram r{Tensor<double>(a.planes.shape()), a.params};
  for (std::int64_t i = 0; i < a.planes.numel(); ++i) {
    l.planes[i] = (a.planes[i] + o.planes[i]) / 2.0;
    r.planes[i] = (a.planes[i] - o.planes[i]) / 2.0;
  }
  return {std::move(l), std::move(r)};
}

}  // namespace binaural::signal
