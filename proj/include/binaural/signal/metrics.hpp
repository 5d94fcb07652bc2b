#pragma once

#include <cmath>
#include <complex>
#include <span>
#include <utility>
#include <vector>

#include "binaural/signal/fft.hpp"
#include "binaural/signal/stft.hpp"

namespace binaural::signal {

/// Magnitude of the analytic signal, computed in the frequency domain:
/// negative frequencies zeroed, positive ones doubled, DC and Nyquist kept.
inline std::vector<double> hilbert_envelope(std::span<const double> x) {
  if (x.size() < 16) throw LengthError("hilbert_envelope needs at least 16 samples");
  const std::size_t n = x.size();
  std::vector<std::complex<double>> spec(x.begin(), x.end());
  Fft::c2c(spec, false);
  const std::size_t half = n / 2;
  for (std::size_t k = 1; k < n; ++k) {
    if (k < (n + 1) / 2)
      spec[k] *= 2.0;
    else if (!(n % 2 == 0 && k == half))
      spec[k] = 0.0;
  }
  Fft::c2c(spec, true);
  std::vector<double> env(n);
  for (std::size_t i = 0; i < n; ++i) env[i] = std::abs(spec[i]) / static_cast<double>(n);
  return env;
}

inline double l2_norm_diff(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

/// ||pred_l - gt_l||_F + ||pred_r - gt_r||_F over the [2 x F x T] planes.
inline double stft_distance(const std::pair<Spectrogram, Spectrogram>& pred,
                            const std::pair<Spectrogram, Spectrogram>& gt) {
  const auto check = [](const Spectrogram& a, const Spectrogram& b) {
    if (a.planes.shape() != b.planes.shape())
      throw ShapeError("stft_distance: shape mismatch " + shape_str(a.planes.shape()) + " vs " +
                       shape_str(b.planes.shape()));
  };
  check(pred.first, gt.first);
  check(pred.second, gt.second);
  return l2_norm_diff(pred.first.planes.span(), gt.first.planes.span()) +
         l2_norm_diff(pred.second.planes.span(), gt.second.planes.span());
}

/// (||env(pred_l) - env(gt_l)|| + ||env(pred_r) - env(gt_r)||) / 2.
inline double env_distance(const Waveform& pred, const Waveform& gt) {
  if (!pred.is_stereo() || !gt.is_stereo()) throw DataError("env_distance expects stereo waveforms");
  if (pred.sample_rate != gt.sample_rate) throw DataError("env_distance: sample rate mismatch");
  if (pred.num_samples() != gt.num_samples())
    throw DataError("env_distance: length mismatch (" + std::to_string(pred.num_samples()) + " vs " +
                    std::to_string(gt.num_samples()) + ")");
  double total = 0.0;
  for (std::size_t c = 0; c < 2; ++c) {
    const auto ep = hilbert_envelope(pred.channels[c]);
    const auto eg = hilbert_envelope(gt.channels[c]);
    total += l2_norm_diff(ep, eg);
  }
  return total / 2.0;
}

}  // namespace binaural::signal
