#pragma once

#include <cmath>

#include "binaural/core/params.hpp"

namespace binaural::training {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment buffers laid out like the parameters.
template <typename T>
struct AdamState {
  ParamStore<T> m, v;
  std::int64_t step = 0;

  static AdamState like(const ParamStore<T>& params) { return {params.zeros_like(), params.zeros_like(), 0}; }
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam update. Moments are kept in T; the arithmetic
/// runs in double so float and double runs differ only by storage rounding.
template <typename T>
void adam_step(ParamStore<T>& params, const ParamStore<T>& grads, AdamState<T>& st, const AdamConfig& cfg) {
  if (!params.same_layout(grads) || !params.same_layout(st.m) || !params.same_layout(st.v))
    throw ShapeError("adam: parameter, gradient and moment layouts differ");
  ++st.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.at(i).vec();
    const auto& g = grads.at(i).vec();
    auto& m = st.m.at(i).vec();
    auto& v = st.v.at(i).vec();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      const double mk = cfg.beta1 * static_cast<double>(m[k]) + (1.0 - cfg.beta1) * gk;
      const double vk = cfg.beta2 * static_cast<double>(v[k]) + (1.0 - cfg.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double upd = cfg.lr * (mk / c1) / (std::sqrt(vk / c2) + cfg.eps);
      p[k] = static_cast<T>(static_cast<double>(p[k]) - upd);
    }
  }
}

}  // namespace binaural::training
