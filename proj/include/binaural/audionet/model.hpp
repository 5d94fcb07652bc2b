#pragma once

#include <cmath>
#include <functional>
#include <tuple>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "binaural/core/ops.hpp"
#include "binaural/core/params.hpp"
#include "binaural/core/random.hpp"
#include "binaural/fusion/attention.hpp"
#include "binaural/scenegen/image.hpp"
#include "binaural/signal/stft.hpp"
#include "binaural/vision/tower.hpp"

namespace binaural::audionet {

using json = nlohmann::json;
using fusion::ModalityFlags;

inline constexpr int kKernel = 4;
inline constexpr int kStride = 2;
inline constexpr int kPad = 1;

/// What the depth tower sees: the rendered depth map, or the RGB frame.
enum class DepthInput { DepthMap, Rgb };

inline std::string to_string(DepthInput d) { return d == DepthInput::DepthMap ? "depth-map" : "rgb"; }

inline DepthInput depth_input_from(const std::string& s) {
  if (s == "depth-map") return DepthInput::DepthMap;
  if (s == "rgb") return DepthInput::Rgb;
  throw ValidationError("unknown depth input mode '" + s + "' (expected depth-map or rgb)");
}

struct ModelConfig {
  int sample_rate = 16000;
  signal::StftParams stft;
  std::vector<int> encoder_widths{8, 16, 32, 64, 64};
  std::vector<int> decoder_widths{64, 32, 16, 8};  ///< outputs of decoder layers 1..n-1; layer n emits 2
  double leaky_slope = 0.2;
  double input_scale = 0.1;  ///< applied to the mixture spectrogram before the encoder
  int time_multiple = 32;
  ModalityFlags modality;
  DepthInput depth_input = DepthInput::DepthMap;
  vision::TowerConfig image_tower;
  vision::TowerConfig depth_tower;

  int num_layers() const { return static_cast<int>(encoder_widths.size()); }
  int bottleneck_width() const { return encoder_widths.back(); }

  /// Channel width d_i of the decoder feature map entering layer i (1-based).
  int decoder_input_width(int i) const { return i == 1 ? bottleneck_width() : decoder_widths[static_cast<std::size_t>(i - 2)]; }

  /// Output channels of decoder layer i.
  int decoder_output_width(int i) const { return i == num_layers() ? 2 : decoder_widths[static_cast<std::size_t>(i - 1)]; }

  /// Encoder layer whose activation is the skip input of decoder layer i.
  int skip_layer(int i) const { return num_layers() + 1 - i; }

  /// Declared concatenated input width of decoder layer i.
  int decoder_concat_width(int i) const {
    int w = decoder_input_width(i);
    w += modality.count() * image_tower.num_tokens();
    if (i >= 2) w += encoder_widths[static_cast<std::size_t>(skip_layer(i) - 1)];
    return w;
  }

  /// Per-layer widths d_i that alignment maps visual features to.
  std::vector<int> alignment_widths() const {
    std::vector<int> d;
    for (int i = 1; i <= num_layers(); ++i) d.push_back(decoder_input_width(i));
    return d;
  }

  void validate() const {
    stft.validate();
    if (encoder_widths.size() < 2) throw ConfigError("encoder needs at least 2 layers");
    if (decoder_widths.size() + 1 != encoder_widths.size())
      throw ConfigError("decoder needs " + std::to_string(encoder_widths.size() - 1) +
                        " hidden widths to mirror the encoder, got " + std::to_string(decoder_widths.size()));
    for (int w : encoder_widths)
      if (w <= 0) throw ConfigError("encoder widths must be positive");
    for (int w : decoder_widths)
      if (w <= 0) throw ConfigError("decoder widths must be positive");
    if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky_slope must lie in [0, 1)");
    if (!(input_scale > 0.0)) throw ConfigError("input_scale must be positive");
    const int need = 1 << num_layers();
    if (time_multiple <= 0 || time_multiple % need != 0)
      throw ConfigError("time_multiple must be a multiple of " + std::to_string(need));
    image_tower.validate();
    depth_tower.validate();
    if (image_tower.feature_dim() != bottleneck_width() || depth_tower.feature_dim() != bottleneck_width())
      throw ConfigError("visual feature width 4d must equal the audio bottleneck width " +
                        std::to_string(bottleneck_width()));
    if (image_tower.num_tokens() != depth_tower.num_tokens() || image_tower.image_height != depth_tower.image_height ||
        image_tower.image_width != depth_tower.image_width)
      throw ConfigError("image and depth towers must share the patch grid");
    if (depth_input == DepthInput::Rgb && depth_tower.input_channels != 3)
      throw ConfigError("rgb depth input requires a 3-channel depth tower");
  }

  friend bool operator==(const ModelConfig& a, const ModelConfig& b) { return to_json(a) == to_json(b); }

  friend json to_json(const ModelConfig& c) {
    return {{"sample_rate", c.sample_rate},
            {"stft", {{"window_len", c.stft.window_len}, {"hop", c.stft.hop}, {"fft_size", c.stft.fft_size}}},
            {"encoder_widths", c.encoder_widths},
            {"decoder_widths", c.decoder_widths},
            {"leaky_slope", c.leaky_slope},
            {"input_scale", c.input_scale},
            {"time_multiple", c.time_multiple},
            {"modality", fusion::to_string(c.modality)},
            {"depth_input", to_string(c.depth_input)},
            {"image_tower", vision::to_json(c.image_tower)},
            {"depth_tower", vision::to_json(c.depth_tower)}};
  }
};

inline void apply_json(ModelConfig& c, const json& j) {
  for (const auto& [k, v] : j.items()) {
    if (k == "sample_rate") c.sample_rate = v.get<int>();
    else if (k == "stft") {
      for (const auto& [sk, sv] : v.items()) {
        if (sk == "window_len") c.stft.window_len = sv.get<int>();
        else if (sk == "hop") c.stft.hop = sv.get<int>();
        else if (sk == "fft_size") c.stft.fft_size = sv.get<int>();
        else throw ValidationError("unknown stft config key '" + sk + "'");
      }
    } else if (k == "encoder_widths") c.encoder_widths = v.get<std::vector<int>>();
    else if (k == "decoder_widths") c.decoder_widths = v.get<std::vector<int>>();
    else if (k == "leaky_slope") c.leaky_slope = v.get<double>();
    else if (k == "input_scale") c.input_scale = v.get<double>();
    else if (k == "time_multiple") c.time_multiple = v.get<int>();
    else if (k == "modality") c.modality = fusion::modality_from(v.get<std::string>());
    else if (k == "depth_input") c.depth_input = depth_input_from(v.get<std::string>());
    else if (k == "image_tower") vision::apply_json(c.image_tower, v);
    else if (k == "depth_tower") vision::apply_json(c.depth_tower, v);
    else throw ValidationError("unknown model config key '" + k + "'");
  }
}

namespace detail {

inline std::string enc(int i) { return "enc" + std::to_string(i); }
inline std::string dec(int i) { return "dec" + std::to_string(i); }

// He-style scale for a leaky-ReLU layer with the given fan-in.
inline double he_std(double fan_in, double slope) { return std::sqrt(2.0 / ((1.0 + slope * slope) * fan_in)); }

}  // namespace detail

inline constexpr double kFinalLayerScale = 0.1;

/// Registers every parameter of the model. Towers and alignment layers exist
/// only for enabled modalities.
template <typename T>
ParamStore<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore<T> ps;
  const int n = cfg.num_layers();
  int in = 2;
  for (int i = 1; i <= n; ++i) {
    const int out = cfg.encoder_widths[static_cast<std::size_t>(i - 1)];
    const auto name = detail::enc(i);
    ps.add(name + ".w", normal_tensor<T>({out, in, kKernel, kKernel}, detail::he_std(in * kKernel * kKernel, cfg.leaky_slope),
                                         derive_seed(seed, name + ".w")));
    ps.add(name + ".b", Tensor<T>({out}));
    in = out;
  }
  for (int i = 1; i <= n; ++i) {
    const int cin = cfg.decoder_concat_width(i), out = cfg.decoder_output_width(i);
    const auto name = detail::dec(i);
    // each output of a stride-2 transposed conv sees in * k^2 / s^2 inputs
    double std = detail::he_std(cin * kKernel * kKernel / (kStride * kStride), cfg.leaky_slope);
    if (i == n) std *= kFinalLayerScale;
    ps.add(name + ".w", normal_tensor<T>({cin, out, kKernel, kKernel}, std, derive_seed(seed, name + ".w")));
    ps.add(name + ".b", Tensor<T>({out}));
  }
  if (cfg.modality.image) {
    vision::init_tower(ps, "image.", cfg.image_tower, derive_seed(seed, "image"));
    fusion::init_alignment(ps, fusion::Modality::Image, cfg.image_tower.feature_dim(), cfg.alignment_widths(),
                           derive_seed(seed, "align.image"));
  }
  if (cfg.modality.depth) {
    vision::init_tower(ps, "depth.", cfg.depth_tower, derive_seed(seed, "depth"));
    fusion::init_alignment(ps, fusion::Modality::Depth, cfg.depth_tower.feature_dim(), cfg.alignment_widths(),
                           derive_seed(seed, "align.depth"));
  }
  return ps;
}

/// Encoder output: bottleneck features and every layer's activation
/// (skips[i-1] is layer i; skips.back() is the bottleneck).
template <typename T>
struct Encoded {
  ad::Var<T> features;
  std::vector<ad::Var<T>> skips;
};

/// Stride-2 convolutions with leaky ReLU over the [2 x F x T] input.
template <typename T>
Encoded<T> encode(ad::Var<T> a, const ModelConfig& cfg, const Binder<T>& bind) {
  if (a.value().rank() != 3 || a.dim(0) != 2)
    throw ShapeError("encoder expects a [2 x F x T] spectrogram, got " + shape_str(a.shape()));
  Encoded<T> out;
  auto x = a;
  for (int i = 1; i <= cfg.num_layers(); ++i) {
    if (x.dim(1) < kKernel / 2 || x.dim(2) < kKernel / 2)
      throw ShapeError("encoder layer " + std::to_string(i) + " input " + shape_str(x.shape()) + " too small");
    const auto name = detail::enc(i);
    x = ad::leaky_relu(ad::conv2d(x, bind(name + ".w"), bind(name + ".b"), kStride, kPad), static_cast<T>(cfg.leaky_slope));
    out.skips.push_back(x);
  }
  out.features = x;
  return out;
}

/// Supplies the fused attention for decoder layer i given the current
/// decoder feature map; nullopt when no modality is enabled.
template <typename T>
using Provider = std::function<std::optional<ad::Var<T>>(int, ad::Var<T>)>;

/// Mask decoder: per layer [features | attention | skip] -> transposed conv.
/// Hidden layers use leaky ReLU, the last tanh. Output [2 x out_f x out_t].
template <typename T>
ad::Var<T> decode(const Encoded<T>& enc, const Provider<T>& provider, const ModelConfig& cfg, const Binder<T>& bind,
                  std::int64_t out_f, std::int64_t out_t) {
  const int n = cfg.num_layers();
  if (static_cast<int>(enc.skips.size()) != n) throw ShapeError("decoder needs one skip per encoder layer");
  auto x = enc.features;
  for (int i = 1; i <= n; ++i) {
    std::vector<ad::Var<T>> parts{x};
    if (auto att = provider ? provider(i, x) : std::nullopt) {
      if (att->dim(1) != x.dim(1) || att->dim(2) != x.dim(2))
        throw ShapeError("layer " + std::to_string(i) + " attention " + shape_str(att->shape()) +
                         " does not match decoder features " + shape_str(x.shape()));
      parts.push_back(*att);
    }
    if (i >= 2) parts.push_back(enc.skips[static_cast<std::size_t>(cfg.skip_layer(i) - 1)]);
    const auto cat = parts.size() == 1 ? parts[0] : ad::concat0(parts);
    if (cat.dim(0) != cfg.decoder_concat_width(i))
      throw ShapeError("decoder layer " + std::to_string(i) + " receives " + std::to_string(cat.dim(0)) +
                       " channels, config declares " + std::to_string(cfg.decoder_concat_width(i)));
    // target grid: the next skip's grid, or the network input for the last layer
    std::int64_t th = out_f, tw = out_t;
    if (i < n) {
      const auto& s = enc.skips[static_cast<std::size_t>(cfg.skip_layer(i + 1) - 1)];
      th = s.dim(1);
      tw = s.dim(2);
    }
    const std::int64_t ph = th - kStride * cat.dim(1), pw = tw - kStride * cat.dim(2);
    if (ph < 0 || ph >= kStride || pw < 0 || pw >= kStride)
      throw ShapeError("decoder layer " + std::to_string(i) + " cannot reach " + std::to_string(th) + "x" +
                       std::to_string(tw) + " from " + shape_str(cat.shape()));
    const auto name = detail::dec(i);
    const auto y = ad::conv_transpose2d(cat, bind(name + ".w"), bind(name + ".b"), kStride, kPad, ph, pw);
    x = i == n ? ad::tanh(y) : ad::leaky_relu(y, static_cast<T>(cfg.leaky_slope));
  }
  return x;
}

/// Zero-pads the time axis of [C x F x T] up to a multiple of `m`.
template <typename T>
Tensor<T> pad_time(const Tensor<T>& a, int m) {
  const std::int64_t c = a.dim(0), f = a.dim(1), t = a.dim(2);
  const std::int64_t tp = (t + m - 1) / m * m;
  Tensor<T> out({c, f, tp});
  for (std::int64_t r = 0; r < c * f; ++r)
    for (std::int64_t j = 0; j < t; ++j) out[r * tp + j] = a[r * t + j];
  return out;
}

/// Per-sample network inputs in the working precision.
template <typename T>
struct ModelInput {
  Tensor<T> mixture;                ///< A as [2 x F x T]
  std::optional<Tensor<T>> image;   ///< [3 x H x W]
  std::optional<Tensor<T>> depth;   ///< depth-tower input
};

template <typename T>
ModelInput<T> make_input(const ModelConfig& cfg, const signal::Spectrogram& a, const scenegen::RgbImage* frame,
                         const scenegen::DepthMap* depth) {
  ModelInput<T> in{a.planes.template cast<T>(), std::nullopt, std::nullopt};
  const auto need = [&](bool ok, const char* what) {
    if (!ok) throw DataError(std::string("model with modality ") + fusion::to_string(cfg.modality) + " needs a " + what);
  };
  if (cfg.modality.image) {
    need(frame != nullptr, "frame");
    in.image = vision::image_tensor<T>(*frame);
  }
  if (cfg.modality.depth) {
    if (cfg.depth_input == DepthInput::DepthMap) {
      need(depth != nullptr, "depth map");
      in.depth = vision::depth_tensor<T>(*depth, cfg.depth_tower.input_channels);
    } else {
      need(frame != nullptr, "frame");
      in.depth = vision::image_tensor<T>(*frame);
    }
  }
  return in;
}

struct ForwardOptions {
  bool record_attention = false;
  bool force_zero_mask = false;
};

template <typename T>
struct ForwardGraph {
  ad::Var<T> mask;        ///< [2 x F x T]
  ad::Var<T> difference;  ///< predicted O = M * A
  ad::Var<T> mixture;     ///< A (constant)
  std::vector<fusion::AttentionRecord> attention;
};

/// Builds the full graph: encoder, towers, per-layer fusion, decoder, mask.
template <typename T>
ForwardGraph<T> forward_graph(const ModelConfig& cfg, const Binder<T>& bind, const ModelInput<T>& in,
                              const ForwardOptions& opt = {}) {
  const auto& a = in.mixture;
  if (a.rank() != 3 || a.dim(0) != 2 || a.dim(1) != cfg.stft.num_bins())
    throw ShapeError("mixture spectrogram must be [2 x " + std::to_string(cfg.stft.num_bins()) + " x T], got " +
                     shape_str(a.shape()));
  const std::int64_t f = a.dim(1), t = a.dim(2);
  ForwardGraph<T> g;
  g.mixture = bind.tape.constant_ref(a);
  if (opt.force_zero_mask) {
    g.mask = bind.tape.constant(Tensor<T>(a.shape()));
  } else {
    Tensor<T> scaled = pad_time(a, cfg.time_multiple);
    for (auto& v : scaled.vec()) v *= static_cast<T>(cfg.input_scale);
    const std::int64_t padded_t = scaled.dim(2);
    const auto enc = encode(bind.tape.constant(std::move(scaled)), cfg, bind);
    std::optional<ad::Var<T>> fi, fd;
    if (cfg.modality.image) {
      if (!in.image) throw DataError("image modality enabled but no frame given");
      fi = vision::extract(*in.image, cfg.image_tower, bind.scoped("image."));
    }
    if (cfg.modality.depth) {
      if (!in.depth) throw DataError("depth modality enabled but no depth input given");
      fd = vision::extract(*in.depth, cfg.depth_tower, bind.scoped("depth."));
    }
    fusion::AttentionProvider<T> provider(fi, fd, bind, opt.record_attention ? &g.attention : nullptr);
    Provider<T> fn;
    if (cfg.modality.count() > 0) fn = [&provider](int i, ad::Var<T> x) { return provider(i, x); };
    const auto m = decode(enc, fn, cfg, bind, f, padded_t);
    g.mask = ad::crop_last(m, t);
  }
  g.difference = ad::complex_mul(g.mask, g.mixture);
  return g;
}

/// A model: configuration plus parameters.
template <typename T>
struct Model {
  ModelConfig config;
  ParamStore<T> params;

  static Model create(const ModelConfig& cfg, std::uint64_t seed) { return {cfg, init_params<T>(cfg, seed)}; }
};

/// Inference result in double precision.
struct Prediction {
  signal::Spectrogram mixture;
  Tensor<double> mask;
  signal::Spectrogram left, right;
  signal::Waveform stereo;
  std::vector<fusion::AttentionRecord> attention;
};

inline constexpr double kPriorWeight = 1e-3;

/// Mono waveform (+ frame / depth) -> binaural prediction. Samples the
/// frames do not support fall back toward x/2 per channel, so the two
/// output channels always sum to the input.
template <typename T>
Prediction predict(const Model<T>& model, const signal::Waveform& mono, const scenegen::RgbImage* frame,
                   const scenegen::DepthMap* depth, const ForwardOptions& opt = {}) {
  const auto& cfg = model.config;
  if (!mono.is_mono()) throw ShapeError("predict expects a mono waveform");
  if (mono.sample_rate != cfg.sample_rate)
    throw DataError("input sample rate " + std::to_string(mono.sample_rate) + " differs from model rate " +
                    std::to_string(cfg.sample_rate));
  Prediction p;
  p.mixture = signal::stft(mono, cfg.stft);
  const auto in = make_input<T>(cfg, p.mixture, frame, depth);
  ad::Tape<T> tape(false);
  auto g = forward_graph(cfg, Binder<T>{tape, model.params, nullptr, ""}, in, opt);
  p.mask = g.mask.value().template cast<double>();
  p.attention = std::move(g.attention);
  const auto o = signal::apply_mask(p.mixture, signal::Mask{p.mask});
  std::tie(p.left, p.right) = signal::recombine(p.mixture, o);
  std::vector<double> half(mono.channels[0]);
  for (auto& v : half) v *= 0.5;
  p.stereo = signal::Waveform::stereo(cfg.sample_rate, signal::istft_with_prior(p.left, half, kPriorWeight),
                                      signal::istft_with_prior(p.right, half, kPriorWeight));
  return p;
}

}  // namespace binaural::audionet
