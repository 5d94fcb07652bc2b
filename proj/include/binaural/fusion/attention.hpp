#pragma once

#include <optional>
#include <string>
#include <vector>

#include "binaural/core/ops.hpp"
#include "binaural/core/params.hpp"
#include "binaural/core/random.hpp"

namespace binaural::fusion {

enum class Modality { Image, Depth };

inline std::string to_string(Modality m) { return m == Modality::Image ? "image" : "depth"; }

struct ModalityFlags {
  bool image = true;
  bool depth = true;

  int count() const { return int(image) + int(depth); }
  friend bool operator==(const ModalityFlags&, const ModalityFlags&) = default;
};

/// "audio", "audio+image", "audio+depth", "audio+image+depth".
inline std::string to_string(ModalityFlags f) {
  std::string s = "audio";
  if (f.image) s += "+image";
  if (f.depth) s += "+depth";
  return s;
}

inline ModalityFlags modality_from(const std::string& s) {
  if (s == "audio") return {false, false};
  if (s == "audio+image") return {true, false};
  if (s == "audio+depth") return {false, true};
  if (s == "audio+image+depth") return {true, true};
  throw ValidationError("unknown modality '" + s + "' (expected audio, audio+image, audio+depth or audio+image+depth)");
}

inline std::string align_name(Modality m, int layer) { return "align." + to_string(m) + std::to_string(layer); }

/// Registers alignment layers 2..n for one modality: weight [d_src x d_i]
/// and bias [d_i]. Layer 1 has none.
template <typename T>
void init_alignment(ParamStore<T>& ps, Modality m, int d_src, const std::vector<int>& layer_widths,
                    std::uint64_t seed) {
  for (std::size_t i = 1; i < layer_widths.size(); ++i) {
    const std::string n = align_name(m, static_cast<int>(i) + 1);
    const double std = 1.0 / std::sqrt(static_cast<double>(d_src));
    ps.add(n + ".w", normal_tensor<T>({d_src, layer_widths[i]}, std, derive_seed(seed, n + ".w")));
    ps.add(n + ".b", Tensor<T>({layer_widths[i]}));
  }
}

/// Per-position linear map d_src -> d_i followed by GELU; identity at layer 1.
/// `visual` is token-major [(h*w) x d_src].
template <typename T>
ad::Var<T> align(ad::Var<T> visual, Modality m, int layer, const Binder<T>& bind) {
  const std::string n = align_name(m, layer);
  if (layer == 1) {
    if (bind.params.contains(bind.prefix + n + ".w"))
      throw ConfigError("layer 1 takes raw visual features; alignment parameters " + n + " must not exist");
    return visual;
  }
  return ad::gelu(ad::add_row_bias(ad::matmul(visual, bind(n + ".w")), bind(n + ".b")));
}

/// [(h*w) x (f*t)] -> 4-D [h x w x f x t] (same storage; index (i,j,k,l)
/// sits at row i*w+j, column k*t+l).
template <typename T>
Tensor<T> to_4d(const Tensor<T>& att, std::int64_t h, std::int64_t w, std::int64_t f, std::int64_t t) {
  if (att.numel() != h * w * f * t) throw ShapeError("to_4d: size mismatch for " + shape_str(att.shape()));
  return att.reshaped({h, w, f, t});
}

/// Inverse of to_4d, producing the [(h*w) x f x t] channel form.
template <typename T>
Tensor<T> reshape_attention(const Tensor<T>& att4) {
  if (att4.rank() != 4) throw ShapeError("reshape_attention expects a 4-D tensor, got " + shape_str(att4.shape()));
  return att4.reshaped({att4.dim(0) * att4.dim(1), att4.dim(2), att4.dim(3)});
}

/// Channel concatenation of the enabled modality maps, image block first.
/// Returns nullopt when no modality is enabled.
template <typename T>
std::optional<ad::Var<T>> fuse(std::optional<ad::Var<T>> img, std::optional<ad::Var<T>> depth) {
  std::vector<ad::Var<T>> parts;
  if (img) parts.push_back(*img);
  if (depth) parts.push_back(*depth);
  if (parts.empty()) return std::nullopt;
  if (parts.size() == 2 && img->shape() != depth->shape())
    throw ShapeError("fuse: image " + shape_str(img->shape()) + " and depth " + shape_str(depth->shape()) +
                     " attention shapes differ");
  return parts.size() == 1 ? parts[0] : ad::concat0(parts);
}

/// Attention maps recorded for export: per decoder layer, per modality, the
/// [(h*w) x f x t] tensor.
struct AttentionRecord {
  int layer = 0;
  Modality modality = Modality::Image;
  std::int64_t f = 0, t = 0;
  Tensor<double> map;
};

/// Computes the fused attention at each decoder layer from the visual
/// features and the decoder's current feature map.
template <typename T>
class AttentionProvider {
 public:
  AttentionProvider(std::optional<ad::Var<T>> image, std::optional<ad::Var<T>> depth, Binder<T> bind,
                    std::vector<AttentionRecord>* record = nullptr)
      : image_(image), depth_(depth), bind_(std::move(bind)), record_(record) {}

  /// Channels contributed at every layer.
  std::int64_t channels() const {
    std::int64_t c = 0;
    if (image_) c += image_->dim(0);
    if (depth_) c += depth_->dim(0);
    return c;
  }

  /// `audio` is the decoder feature map [d_i x f_i x t_i]; the result is
  /// [(k*h*w) x f_i x t_i] or nullopt when no modality is enabled.
  std::optional<ad::Var<T>> operator()(int layer, ad::Var<T> audio) {
    if (audio.value().rank() != 3) throw ShapeError("attention provider expects [d x f x t] audio features");
    const std::int64_t d = audio.dim(0), f = audio.dim(1), t = audio.dim(2);
    const auto fa = ad::reshape(audio, {d, f * t});
    const auto one = [&](std::optional<ad::Var<T>> vis, Modality m) -> std::optional<ad::Var<T>> {
      if (!vis) return std::nullopt;
      const auto fv = align(*vis, m, layer, bind_);
      if (fv.dim(1) != d)
        throw ShapeError("layer " + std::to_string(layer) + " " + to_string(m) + " features have " +
                         std::to_string(fv.dim(1)) + " channels, decoder has " + std::to_string(d));
      const auto att = ad::cosine_attention(fv, fa);
      if (record_) record_->push_back({layer, m, f, t, att.value().template cast<double>().reshaped({att.dim(0), f, t})});
      return ad::reshape(att, {att.dim(0), f, t});
    };
    auto img = one(image_, Modality::Image);
    return fuse(std::move(img), one(depth_, Modality::Depth));
  }

 private:
  std::optional<ad::Var<T>> image_, depth_;
  Binder<T> bind_;
  std::vector<AttentionRecord>* record_;
};

}  // namespace binaural::fusion
