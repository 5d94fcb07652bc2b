#pragma once

#include <fftw3.h>

#include <complex>
#include <map>
#include <mutex>
#include <span>
#include <utility>
#include <vector>

namespace binaural::signal {

/// Thin FFTW front end. Plans are created once per (kind, size) under a lock
/// and executed through the thread-safe new-array interface. FFTW_UNALIGNED
/// keeps results independent of buffer alignment.
class Fft {
 public:
  /// Forward real-to-complex transform; out has n/2 + 1 bins.
  static void r2c(std::span<const double> in, std::span<std::complex<double>> out) {
    const int n = static_cast<int>(in.size());
    std::vector<double> tmp(in.begin(), in.end());
    fftw_execute_dft_r2c(plan(Kind::R2C, n), tmp.data(), reinterpret_cast<fftw_complex*>(out.data()));
  }

  /// Inverse complex-to-real transform, unnormalized (sum, no 1/n).
  static void c2r(std::span<const std::complex<double>> in, std::span<double> out) {
    const int n = static_cast<int>(out.size());
    std::vector<std::complex<double>> tmp(in.begin(), in.end());
    fftw_execute_dft_c2r(plan(Kind::C2R, n), reinterpret_cast<fftw_complex*>(tmp.data()), out.data());
  }

  /// In-place complex DFT; `inverse` selects the +i sign, unnormalized.
  static void c2c(std::span<std::complex<double>> data, bool inverse) {
    const int n = static_cast<int>(data.size());
    auto* p = reinterpret_cast<fftw_complex*>(data.data());
    fftw_execute_dft(plan(inverse ? Kind::C2C_INV : Kind::C2C_FWD, n), p, p);
  }

 private:
  enum class Kind { R2C, C2R, C2C_FWD, C2C_INV };

  struct Cache {
    std::mutex mu;
    std::map<std::pair<Kind, int>, fftw_plan> plans;
    ~Cache() {
      for (auto& [k, p] : plans) fftw_destroy_plan(p);
    }
  };

  static fftw_plan plan(Kind kind, int n) {
    static Cache cache;
    std::lock_guard lock(cache.mu);
    auto key = std::make_pair(kind, n);
    if (auto it = cache.plans.find(key); it != cache.plans.end()) return it->second;
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    std::vector<double> r(static_cast<std::size_t>(n));
    std::vector<std::complex<double>> c(static_cast<std::size_t>(n));
    auto* cp = reinterpret_cast<fftw_complex*>(c.data());
    fftw_plan p = nullptr;
    switch (kind) {
      case Kind::R2C: p = fftw_plan_dft_r2c_1d(n, r.data(), cp, flags); break;
      case Kind::C2R: p = fftw_plan_dft_c2r_1d(n, cp, r.data(), flags); break;
      case Kind::C2C_FWD: p = fftw_plan_dft_1d(n, cp, cp, FFTW_FORWARD, flags); break;
      case Kind::C2C_INV: p = fftw_plan_dft_1d(n, cp, cp, FFTW_BACKWARD, flags); break;
    }
    cache.plans.emplace(key, p);
    return p;
  }
};

}  // namespace binaural::signal
