#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "binaural/core/params.hpp"
#include "binaural/core/random.hpp"

namespace binaural::training {

/// One scalar coordinate inside a ParamStore.
struct GradCoord {
  std::size_t param = 0;
  std::int64_t offset = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;           ///< "name[offset]" of the worst coordinate
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  std::vector<std::string> non_finite;  ///< coordinates with non-finite gradients

  bool passed(double tol) const { return non_finite.empty() && checked > 0 && max_rel_error < tol; }
};

/// Probe signature: builds the graph on `tape` (routing parameter gradients
/// into `grads` when non-null) and returns a scalar.
using Probe = std::function<ad::Var<double>(ad::Tape<double>&, const ParamStore<double>&, ParamStore<double>*)>;

namespace detail {
inline std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6e", v);
  return buf;
}
}  // namespace detail

inline double relative_error(double fd, double an) {
  return std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
}

/// Five-point central-difference check of analytic gradients at `coords`. Coordinates
/// whose perturbation flips the sign pattern of a non-smooth activation
/// (a kink crossing) are skipped and counted instead of compared.
inline GradCheckResult grad_check(ParamStore<double>& params, const Probe& probe,
                                  std::span<const GradCoord> coords, double eps = 1e-5) {
  GradCheckResult res;
  ParamStore<double> grads = params.zeros_like();
  std::uint64_t base_sig = 0;
  {
    ad::Tape<double> tape(true);
    tape.set_track_kinks(true);
    auto out = probe(tape, params, &grads);
    base_sig = tape.kink_signature();
    tape.backward(out);
  }
  const auto eval = [&](std::uint64_t& sig) {
    ad::Tape<double> tape(false);
    tape.set_track_kinks(true);
    const double v = probe(tape, params, nullptr).value()[0];
    sig = tape.kink_signature();
    return v;
  };
  for (const auto& c : coords) {
    const std::string label = params.names()[c.param] + "[" + std::to_string(c.offset) + "]";
    double& x = params.at(c.param)[c.offset];
    const double x0 = x;
    std::uint64_t sig[4] = {};
    double f[4];
    const double offs[4] = {eps, -eps, 2 * eps, -2 * eps};
    for (int k = 0; k < 4; ++k) {
      x = x0 + offs[k];
      f[k] = eval(sig[k]);
    }
    x = x0;
    const double an = grads.at(c.param)[c.offset];
    const double fd = (8.0 * (f[0] - f[1]) - (f[2] - f[3])) / (12.0 * eps);
    if (!std::isfinite(an) || !std::isfinite(fd)) {
      res.non_finite.push_back(label);
      continue;
    }
    if (std::any_of(std::begin(sig), std::end(sig), [&](std::uint64_t v) { return v != base_sig; })) {
      ++res.skipped_kinks;
      continue;
    }
    ++res.checked;
    const double err = relative_error(fd, an);
    if (err >= res.max_rel_error) {
      res.max_rel_error = err;
      res.worst = label + " fd=" + detail::sci(fd) + " an=" + detail::sci(an);
    }
  }
  return res;
}

/// Every coordinate of every parameter whose name starts with `prefix`.
inline std::vector<GradCoord> all_coords(const ParamStore<double>& params, const std::string& prefix = "") {
  std::vector<GradCoord> out;
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params.names()[i].rfind(prefix, 0) == 0)
      for (std::int64_t k = 0; k < params.at(i).numel(); ++k) out.push_back({i, k});
  return out;
}

/// Optional coordinate filter: keep(name, offset).
using CoordFilter = std::function<bool(const std::string&, std::int64_t)>;

/// `n` coordinates drawn uniformly (without replacement) from the parameters
/// matching any of `prefixes` (all parameters when empty).
inline std::vector<GradCoord> sample_coords(const ParamStore<double>& params, std::size_t n, std::uint64_t seed,
                                            const std::vector<std::string>& prefixes = {},
                                            const CoordFilter& keep = {}) {
  std::vector<GradCoord> pool;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params.names()[i];
    const bool match = prefixes.empty() || std::any_of(prefixes.begin(), prefixes.end(), [&](const auto& p) {
                         return name.rfind(p, 0) == 0;
                       });
    if (match)
      for (std::int64_t k = 0; k < params.at(i).numel(); ++k)
        if (!keep || keep(name, k)) pool.push_back({i, k});
  }
  Rng rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  if (pool.size() > n) pool.resize(n);
  return pool;
}

/// Draws coordinates until `n` have been compared (kink crossings are
/// replaced by fresh draws), giving up after 4n candidates.
inline GradCheckResult grad_check_random(ParamStore<double>& params, const Probe& probe, std::size_t n,
                                         std::uint64_t seed, const std::vector<std::string>& prefixes = {},
                                         double eps = 1e-5, const CoordFilter& keep = {}) {
  auto pool = sample_coords(params, 4 * n, seed, prefixes, keep);
  GradCheckResult total;
  std::size_t next = 0;
  while (total.checked < n && next < pool.size()) {
    const std::size_t take = std::min(n - total.checked, pool.size() - next);
    auto part = grad_check(params, probe, std::span<const GradCoord>(pool).subspan(next, take), eps);
    next += take;
    total.checked += part.checked;
    total.skipped_kinks += part.skipped_kinks;
    total.non_finite.insert(total.non_finite.end(), part.non_finite.begin(), part.non_finite.end());
    if (part.checked > 0 && part.max_rel_error >= total.max_rel_error) {
      total.max_rel_error = part.max_rel_error;
      total.worst = part.worst;
    }
  }
  return total;
}

}  // namespace binaural::training
