#pragma once

#include <chrono>
#include <complex>
#include <cstdio>
#include <functional>

#include "binaural/audionet/model.hpp"
#include "binaural/scenegen/dataset.hpp"
#include "binaural/training/grad_check.hpp"
#include "binaural/training/loss.hpp"

namespace binaural::cli {

struct CheckResult {
  std::string name;
  double value = 0.0;  ///< measured worst case
  double limit = 0.0;  ///< pass iff value < limit (or <= for the "le" checks)
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

namespace vdetail {

inline std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> x(n);
  for (auto& v : x) v = d(rng);
  return x;
}

inline Tensor<double> randn(Shape s, std::uint64_t seed, double std = 1.0) { return normal_tensor<double>(std::move(s), std, seed); }

// does not drop coordinates whose exact gradient is zero by softmax shift invariance
inline bool not_key_bias(const std::string& n, std::int64_t k, std::int64_t d) {
  return !(n.ends_with("attn.qkv.b") && k >= d && k < 2 * d);
}

inline void widen(ParamStore<double>& ps, const std::string& prefix, double f) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& n = ps.names()[i];
    if (n.starts_with(prefix) && (n.ends_with(".w") || n.ends_with("pos")))
      for (auto& v : ps.at(i).vec()) v *= f;
  }
}

}  // namespace vdetail

inline CheckResult check_stft_roundtrip(int n) {
  const signal::StftParams p;
  double worst = 0.0;
  for (int s = 0; s < n; ++s) {
    const auto x = vdetail::noise(10080, 1000 + static_cast<std::uint64_t>(s));
    const auto spec = signal::stft(signal::Waveform::mono(16000, x), p);
    const auto y = signal::istft_samples(spec);
    const auto [b, e] = signal::interior_range(p, static_cast<int>(spec.frames()));
    double num = 0, den = 0;
    for (std::size_t i = b; i < e; ++i) {
      num += (x[i] - y[i]) * (x[i] - y[i]);
      den += x[i] * x[i];
    }
    worst = std::max(worst, std::sqrt(num / den));
  }
  return {"istft(stft(x)) interior relative error, " + std::to_string(n) + " signals", worst, 1e-4, worst < 1e-4};
}

inline CheckResult check_apply_mask(int n) {
  double worst = 0.0;
  for (int s = 0; s < n; ++s) {
    const signal::Spectrogram a{vdetail::randn({2, 257, 61}, 2000 + s), {}};
    auto mt = vdetail::randn({2, 257, 61}, 3000 + s);
    for (auto& v : mt.vec()) v = std::tanh(v);
    const auto m = signal::Mask::from(mt);
    const auto o = signal::apply_mask(a, m);
    const std::int64_t k = a.plane_size();
    for (std::int64_t i = 0; i < k; ++i) {
      const auto ref = std::complex<double>(m.planes[i], m.planes[k + i]) * std::complex<double>(a.planes[i], a.planes[k + i]);
      worst = std::max({worst, std::abs(ref.real() - o.planes[i]), std::abs(ref.imag() - o.planes[k + i])});
    }
  }
  return {"apply_mask vs std::complex oracle, " + std::to_string(n) + " spectrograms", worst, 1e-12, worst <= 1e-12};
}

inline CheckResult check_recombination(int n) {
  double worst = 0.0;
  Rng rng(4000);
  std::uniform_int_distribution<int> fd(1, 300), td(1, 80);
  std::uniform_real_distribution<double> sc(-6, 6);
  for (int s = 0; s < n; ++s) {
    const std::int64_t f = fd(rng), t = td(rng);
    const double amp = std::pow(10.0, sc(rng));
    const signal::Spectrogram a{vdetail::randn({2, f, t}, rng(), amp), {}};
    auto mt = vdetail::randn({2, f, t}, rng());
    for (auto& v : mt.vec()) v = std::tanh(v);
    const auto o = signal::apply_mask(a, signal::Mask::from(mt));
    const auto [l, r] = signal::recombine(a, o);
    for (std::int64_t i = 0; i < a.planes.numel(); ++i)
      worst = std::max(worst, std::abs(l.planes[i] + r.planes[i] - a.planes[i]) / std::max(1.0, std::abs(a.planes[i])));
  }
  return {"recombination Yl+Yr = A, " + std::to_string(n) + " random cases", worst, 1e-6, worst <= 1e-6};
}

inline CheckResult check_cosine(int n) {
  double worst = 0.0, out_of_range = 0.0;
  Rng rng(5000);
  std::uniform_int_distribution<int> dim(1, 40);
  for (int s = 0; s < n; ++s) {
    const int p = dim(rng), d = dim(rng), q = dim(rng);
    const auto fv = vdetail::randn({p, d}, rng()), fa = vdetail::randn({d, q}, rng());
    ad::Tape<double> tape(false);
    const auto out = ad::cosine_attention(tape.constant(fv), tape.constant(fa)).value();
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < q; ++j) {
        double dot = 0, nv = 0, na = 0;
        for (int k = 0; k < d; ++k) {
          dot += fv.at(i, k) * fa.at(k, j);
          nv += fv.at(i, k) * fv.at(i, k);
          na += fa.at(k, j) * fa.at(k, j);
        }
        const double ref = dot / (std::sqrt(nv) * std::sqrt(na) + 1e-8);
        worst = std::max(worst, std::abs(ref - out.at(i, j)));
        out_of_range = std::max(out_of_range, std::abs(out.at(i, j)) - 1.0);
      }
  }
  CheckResult r{"cosine attention vs nested loops, " + std::to_string(n) + " cases", worst, 1e-12,
                worst <= 1e-12 && out_of_range <= 0.0};
  if (out_of_range > 0.0) r.detail = "entry outside [-1, 1] by " + training::detail::sci(out_of_range);
  return r;
}

inline CheckResult grad_result(const std::string& name, const training::GradCheckResult& g) {
  CheckResult r{name + " (" + std::to_string(g.checked) + " coords)", g.max_rel_error, 1e-4,
                g.max_rel_error < 1e-4 && g.non_finite.empty() && g.checked > 0, g.worst};
  if (!g.non_finite.empty()) r.detail = "non-finite gradient: " + g.non_finite.front();
  return r;
}

inline CheckResult check_grad_cosine() {
  ParamStore<double> ps;
  ps.add("fv", vdetail::randn({5, 3}, 1));
  ps.add("fa", vdetail::randn({3, 9}, 2));
  const auto w = vdetail::randn({5, 9}, 3);
  const training::Probe probe = [&](ad::Tape<double>& t, const ParamStore<double>& p, ParamStore<double>* g) {
    return ad::weighted_sum(ad::cosine_attention(p.bind(t, "fv", g), p.bind(t, "fa", g)), w);
  };
  const auto coords = training::all_coords(ps);
  return grad_result("grad check: cosine attention", training::grad_check(ps, probe, coords));
}

inline CheckResult check_grad_alignment() {
  ParamStore<double> ps;
  fusion::init_alignment(ps, fusion::Modality::Image, 64, {64, 64, 32, 16, 8}, 11);
  ps.add("v", vdetail::randn({49, 64}, 12));
  const auto w = vdetail::randn({49, 16}, 13);
  const training::Probe probe = [&](ad::Tape<double>& t, const ParamStore<double>& p, ParamStore<double>* g) {
    return ad::weighted_sum(fusion::align(p.bind(t, "v", g), fusion::Modality::Image, 4, Binder<double>{t, p, g, ""}), w);
  };
  return grad_result("grad check: alignment", training::grad_check_random(ps, probe, 300, 14, {"align.image4", "v"}));
}

inline CheckResult check_grad_encoder_conv() {
  ParamStore<double> ps;
  ps.add("x", vdetail::randn({2, 16, 8}, 21));
  ps.add("w", vdetail::randn({4, 2, 4, 4}, 22, 0.3));
  ps.add("b", vdetail::randn({4}, 23, 0.1));
  const auto wt = vdetail::randn({4, 8, 4}, 24);
  const training::Probe probe = [&](ad::Tape<double>& t, const ParamStore<double>& p, ParamStore<double>* g) {
    const auto y = ad::conv2d(p.bind(t, "x", g), p.bind(t, "w", g), p.bind(t, "b", g), 2, 1);
    return ad::weighted_sum(ad::leaky_relu(y, 0.2), wt);
  };
  const auto coords = training::all_coords(ps);
  return grad_result("grad check: encoder convolution", training::grad_check(ps, probe, coords));
}

inline CheckResult check_grad_decoder_conv() {
  ParamStore<double> ps;
  ps.add("x", vdetail::randn({5, 8, 4}, 31));
  ps.add("w", vdetail::randn({5, 3, 4, 4}, 32, 0.3));
  ps.add("b", vdetail::randn({3}, 33, 0.1));
  const auto wt = vdetail::randn({3, 17, 8}, 34);
  const training::Probe probe = [&](ad::Tape<double>& t, const ParamStore<double>& p, ParamStore<double>* g) {
    const auto y = ad::conv_transpose2d(p.bind(t, "x", g), p.bind(t, "w", g), p.bind(t, "b", g), 2, 1, 1, 0);
    return ad::weighted_sum(ad::tanh(y), wt);
  };
  const auto coords = training::all_coords(ps);
  return grad_result("grad check: decoder transposed convolution", training::grad_check(ps, probe, coords));
}

inline CheckResult check_grad_tower(std::uint64_t seed = 41) {
  const vision::TowerConfig cfg;
  ParamStore<double> ps;
  vision::init_tower(ps, "t.", cfg, seed);
  vdetail::widen(ps, "t.", 5.0);
  const auto img = vdetail::randn({3, 112, 112}, seed + 1, 0.5);
  const auto w = vdetail::randn({49, 64}, seed + 2);
  const training::Probe probe = [&](ad::Tape<double>& t, const ParamStore<double>& p, ParamStore<double>* g) {
    return ad::weighted_sum(vision::extract(img, cfg, Binder<double>{t, p, g, "t."}), w);
  };
  const auto n = static_cast<std::size_t>(ps.scalar_count() / 100);
  const auto d = cfg.token_dim;
  return grad_result("grad check: tower blocks, 1% of parameters",
                     training::grad_check_random(ps, probe, n, seed + 3, {}, 1e-5,
                                                 [d](const std::string& nm, std::int64_t k) { return vdetail::not_key_bias(nm, k, d); }));
}

inline CheckResult check_grad_full_model(std::size_t per_group) {
  const audionet::ModelConfig cfg;
  auto ps = audionet::init_params<double>(cfg, 51);
  vdetail::widen(ps, "image.", 5.0);
  vdetail::widen(ps, "depth.", 5.0);
  scenegen::GeneratorConfig gen;
  gen.max_sources = 2;
  const auto scene = scenegen::draw_scene(gen, 52);
  const auto stereo = scenegen::render_binaural(scene);
  const auto frame = scenegen::render_image(scene);
  const auto depth = scenegen::render_depth(scene);
  const auto in = audionet::make_input<double>(cfg, signal::stft(scenegen::mono_mix(stereo), cfg.stft), &frame, &depth);
  const auto yl = signal::stft(signal::Waveform::mono(16000, stereo.left()), cfg.stft).planes;
  const auto yr = signal::stft(signal::Waveform::mono(16000, stereo.right()), cfg.stft).planes;
  const training::Probe probe = [&](ad::Tape<double>& t, const ParamStore<double>& p, ParamStore<double>* g) {
    return training::binaural_loss(audionet::forward_graph(cfg, Binder<double>{t, p, g, ""}, in), yl, yr);
  };
  const auto d = cfg.image_tower.token_dim;
  training::GradCheckResult total;
  std::uint64_t seed = 53;
  for (const auto* group : {"enc", "dec", "align.", "image.", "depth."}) {
    const auto r = training::grad_check_random(ps, probe, per_group, seed++, {group}, 5e-4,
                                               [d](const std::string& nm, std::int64_t k) { return vdetail::not_key_bias(nm, k, d); });
    total.checked += r.checked;
    total.non_finite.insert(total.non_finite.end(), r.non_finite.begin(), r.non_finite.end());
    if (r.max_rel_error >= total.max_rel_error) {
      total.max_rel_error = r.max_rel_error;
      total.worst = r.worst;
    }
  }
  return grad_result("grad check: full model loss", total);
}

inline CheckResult check_mirror(int n) {
  scenegen::GeneratorConfig gen;
  double worst = 0.0;
  bool center_exact = true;
  for (int s = 0; s < n; ++s) {
    const auto sc = scenegen::draw_scene(gen, derive_seed(6000, static_cast<std::uint64_t>(s)));
    const auto a = scenegen::render_binaural(sc), b = scenegen::render_binaural(sc.mirrored());
    for (std::size_t i = 0; i < a.num_samples(); ++i)
      worst = std::max({worst, std::abs(a.left()[i] - b.right()[i]), std::abs(a.right()[i] - b.left()[i])});
    auto c = sc;
    for (auto& src : c.sources) src.azimuth = 0.0;
    const auto z = scenegen::render_binaural(c);
    center_exact = center_exact && z.left() == z.right();
  }
  CheckResult r{"oracle mirror equivariance, " + std::to_string(n) + " scenes", worst, 1e-6, worst <= 1e-6 && center_exact};
  if (!center_exact) r.detail = "azimuth-0 scene gave different channels";
  return r;
}

/// Runs the suite; `quick` trims sample counts, not tolerances.
inline std::vector<CheckResult> run_verification(bool quick, const std::function<void(const CheckResult&)>& each = {}) {
  std::vector<std::pair<std::string, std::function<CheckResult()>>> checks{
      {"stft round trip", [&] { return check_stft_roundtrip(quick ? 20 : 100); }},
      {"apply_mask", [&] { return check_apply_mask(quick ? 3 : 20); }},
      {"recombination", [&] { return check_recombination(quick ? 100 : 1000); }},
      {"cosine attention", [&] { return check_cosine(quick ? 10 : 100); }},
      {"grad check: cosine attention", [] { return check_grad_cosine(); }},
      {"grad check: alignment", [] { return check_grad_alignment(); }},
      {"grad check: encoder convolution", [] { return check_grad_encoder_conv(); }},
      {"grad check: decoder transposed convolution", [] { return check_grad_decoder_conv(); }},
      {"grad check: tower blocks", [] { return check_grad_tower(); }},
      {"grad check: full model", [&] { return check_grad_full_model(quick ? 10 : 40); }},
      {"oracle mirror equivariance", [&] { return check_mirror(quick ? 20 : 100); }},
  };
  std::vector<CheckResult> out;
  for (const auto& [label, c] : checks) {
    const auto t0 = std::chrono::steady_clock::now();
    CheckResult r;
    try {
      r = c();
    } catch (const std::exception& e) {
      r.name = label;
      r.pass = false;
      r.detail = std::string("threw: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (each) each(r);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string format_check(const CheckResult& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-4s %-58s %11.3e  (limit %.0e, %.1fs)", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.value,
                r.limit, r.seconds);
  std::string s = buf;
  if (!r.pass && !r.detail.empty()) s += "  " + r.detail;
  return s;
}

}  // namespace binaural::cli
