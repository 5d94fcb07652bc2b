#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "binaural/core/ops.hpp"
#include "binaural/core/params.hpp"
#include "binaural/core/random.hpp"
#include "binaural/scenegen/image.hpp"

namespace binaural::vision {

using json = nlohmann::json;

/// Patch-transformer tower hyperparameters.
struct TowerConfig {
  int input_channels = 3;
  int image_height = 112;
  int image_width = 112;
  int patch_size = 16;
  int token_dim = 32;
  int num_blocks = 4;
  int num_heads = 4;
  std::array<int, 4> tap_layers{1, 2, 3, 4};  ///< 1-based block indices
  int proj_dim = 16;                          ///< d: channels per tap after projection
  int mlp_ratio = 4;

  int grid_h() const { return image_height / patch_size; }
  int grid_w() const { return image_width / patch_size; }
  int num_tokens() const { return grid_h() * grid_w(); }
  int patch_len() const { return input_channels * patch_size * patch_size; }
  int feature_dim() const { return 4 * proj_dim; }

  void validate() const {
    if (input_channels < 1) throw ConfigError("tower input_channels must be positive");
    if (patch_size < 1 || image_height % patch_size != 0 || image_width % patch_size != 0 || image_height < 1 ||
        image_width < 1)
      throw ConfigError("tower image size " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                        " is not a positive multiple of patch size " + std::to_string(patch_size));
    if (token_dim < 1 || num_heads < 1 || token_dim % num_heads != 0)
      throw ConfigError("token_dim " + std::to_string(token_dim) + " not divisible by num_heads " +
                        std::to_string(num_heads));
    if (num_blocks < 1 || proj_dim < 1 || mlp_ratio < 1) throw ConfigError("tower sizes must be positive");
    for (std::size_t i = 0; i < 4; ++i) {
      if (tap_layers[i] < 1 || tap_layers[i] > num_blocks)
        throw ConfigError("tap layer " + std::to_string(tap_layers[i]) + " outside [1, num_blocks]");
      if (i > 0 && tap_layers[i] < tap_layers[i - 1]) throw ConfigError("tap layers must be sorted");
    }
  }

  friend bool operator==(const TowerConfig&, const TowerConfig&) = default;
};

inline json to_json(const TowerConfig& c) {
  return {{"input_channels", c.input_channels}, {"image_height", c.image_height}, {"image_width", c.image_width},
          {"patch_size", c.patch_size},         {"token_dim", c.token_dim},       {"num_blocks", c.num_blocks},
          {"num_heads", c.num_heads},           {"tap_layers", c.tap_layers},     {"proj_dim", c.proj_dim},
          {"mlp_ratio", c.mlp_ratio}};
}

inline void apply_json(TowerConfig& c, const json& j) {
  for (const auto& [k, v] : j.items()) {
    if (k == "input_channels") c.input_channels = v.get<int>();
    else if (k == "image_height") c.image_height = v.get<int>();
    else if (k == "image_width") c.image_width = v.get<int>();
    else if (k == "patch_size") c.patch_size = v.get<int>();
    else if (k == "token_dim") c.token_dim = v.get<int>();
    else if (k == "num_blocks") c.num_blocks = v.get<int>();
    else if (k == "num_heads") c.num_heads = v.get<int>();
    else if (k == "tap_layers") {
      const auto taps = v.get<std::vector<int>>();
      if (taps.size() != 4) throw ConfigError("exactly 4 tap layers required, got " + std::to_string(taps.size()));
      std::copy(taps.begin(), taps.end(), c.tap_layers.begin());
    } else if (k == "proj_dim") c.proj_dim = v.get<int>();
    else if (k == "mlp_ratio") c.mlp_ratio = v.get<int>();
    else throw ValidationError("unknown tower config key '" + k + "'");
  }
}

inline constexpr double kInitStd = 0.02;

/// Registers tower parameters under `prefix` (e.g. "image."). Weights are
/// N(0, 0.02), biases zero, layer-norm gains one.
template <typename T>
void init_tower(ParamStore<T>& ps, const std::string& prefix, const TowerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::int64_t D = cfg.token_dim, H = static_cast<std::int64_t>(cfg.mlp_ratio) * D;
  const auto normal = [&](const std::string& name, Shape s) {
    ps.add(prefix + name, normal_tensor<T>(std::move(s), kInitStd, derive_seed(seed, prefix + name)));
  };
  const auto zeros = [&](const std::string& name, Shape s) { ps.add(prefix + name, Tensor<T>(std::move(s))); };
  const auto ones = [&](const std::string& name, Shape s) { ps.add(prefix + name, Tensor<T>(std::move(s), T{1})); };
  normal("patch.w", {cfg.patch_len(), D});
  zeros("patch.b", {D});
  normal("pos", {cfg.num_tokens(), D});
  for (int b = 1; b <= cfg.num_blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    ones(p + "ln1.g", {D});
    zeros(p + "ln1.b", {D});
    normal(p + "attn.qkv.w", {D, 3 * D});
    zeros(p + "attn.qkv.b", {3 * D});
    normal(p + "attn.out.w", {D, D});
    zeros(p + "attn.out.b", {D});
    ones(p + "ln2.g", {D});
    zeros(p + "ln2.b", {D});
    normal(p + "mlp.fc1.w", {D, H});
    zeros(p + "mlp.fc1.b", {H});
    normal(p + "mlp.fc2.w", {H, D});
    zeros(p + "mlp.fc2.b", {D});
  }
  for (int k = 1; k <= 4; ++k) {
    normal("reassemble" + std::to_string(k) + ".w", {D, cfg.proj_dim});
    zeros("reassemble" + std::to_string(k) + ".b", {cfg.proj_dim});
  }
}

/// [C x H x W] -> [(h*w) x (C*p*p)], patches in row-major grid order, each
/// flattened as (channel, row, col).
template <typename T>
Tensor<T> patchify(const Tensor<T>& img, int patch) {
  if (img.rank() != 3) throw ShapeError("patchify expects [C x H x W], got " + shape_str(img.shape()));
  const std::int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  if (patch < 1 || H % patch != 0 || W % patch != 0)
    throw ShapeError("image " + std::to_string(H) + "x" + std::to_string(W) + " not divisible by patch size " +
                     std::to_string(patch));
  const std::int64_t gh = H / patch, gw = W / patch, len = C * patch * patch;
  Tensor<T> out({gh * gw, len});
  for (std::int64_t py = 0; py < gh; ++py)
    for (std::int64_t px = 0; px < gw; ++px) {
      T* row = out.data() + (py * gw + px) * len;
      for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t y = 0; y < patch; ++y)
          for (std::int64_t x = 0; x < patch; ++x)
            *row++ = img.at(c, py * patch + y, px * patch + x);
    }
  return out;
}

template <typename T>
ad::Var<T> linear(ad::Var<T> x, const Binder<T>& bind, const std::string& name) {
  return ad::add_row_bias(ad::matmul(x, bind(name + ".w")), bind(name + ".b"));
}

/// Tokens from flattened patches: linear projection plus positional embedding.
template <typename T>
ad::Var<T> embed_patches(ad::Var<T> patches, const Binder<T>& bind) {
  return ad::add(linear(patches, bind, "patch"), bind("pos"));
}

template <typename T>
ad::Var<T> patch_embed(const Tensor<T>& img, const TowerConfig& cfg, const Binder<T>& bind) {
  if (img.rank() != 3 || img.dim(0) != cfg.input_channels)
    throw ShapeError("tower expects " + std::to_string(cfg.input_channels) + " input channels, got " +
                     shape_str(img.shape()));
  return embed_patches(bind.tape.constant(patchify(img, cfg.patch_size)), bind);
}

/// Per-block, per-head attention probabilities [tokens x tokens].
template <typename T>
struct AttentionTrace {
  std::vector<std::vector<Tensor<T>>> heads;
};

template <typename T>
ad::Var<T> self_attention(ad::Var<T> x, const TowerConfig& cfg, const Binder<T>& bind,
                          std::vector<Tensor<T>>* trace) {
  const std::int64_t D = cfg.token_dim, dh = D / cfg.num_heads;
  const auto qkv = linear(x, bind, "attn.qkv");
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));
  std::vector<ad::Var<T>> heads;
  for (std::int64_t h = 0; h < cfg.num_heads; ++h) {
    const auto q = ad::slice_cols(qkv, h * dh, dh);
    const auto k = ad::slice_cols(qkv, D + h * dh, dh);
    const auto v = ad::slice_cols(qkv, 2 * D + h * dh, dh);
    const auto a = ad::softmax_rows(ad::scale(ad::matmul(q, ad::transpose(k)), scale));
    if (trace) trace->push_back(a.value());
    heads.push_back(ad::matmul(a, v));
  }
  return linear(ad::concat_cols(heads), bind, "attn.out");
}

/// Pre-norm transformer block: x + attn(ln(x)), then + mlp(ln(.)).
template <typename T>
ad::Var<T> block_forward(ad::Var<T> x, const TowerConfig& cfg, const Binder<T>& bind,
                         std::vector<Tensor<T>>* trace) {
  const auto h1 = ad::layer_norm(x, bind("ln1.g"), bind("ln1.b"));
  x = ad::add(x, self_attention(h1, cfg, bind, trace));
  const auto h2 = ad::layer_norm(x, bind("ln2.g"), bind("ln2.b"));
  return ad::add(x, linear(ad::gelu(linear(h2, bind, "mlp.fc1")), bind, "mlp.fc2"));
}

/// Runs all blocks and returns the token tensors after each tap layer.
template <typename T>
std::vector<ad::Var<T>> tower_forward(ad::Var<T> tokens, const TowerConfig& cfg, const Binder<T>& bind,
                                      AttentionTrace<T>* trace = nullptr) {
  cfg.validate();
  if (tokens.value().rank() != 2 || tokens.dim(0) != cfg.num_tokens() || tokens.dim(1) != cfg.token_dim)
    throw ShapeError("tower tokens must be [" + std::to_string(cfg.num_tokens()) + " x " +
                     std::to_string(cfg.token_dim) + "], got " + shape_str(tokens.shape()));
  std::vector<ad::Var<T>> taps;
  auto x = tokens;
  for (int b = 1; b <= cfg.num_blocks; ++b) {
    std::vector<Tensor<T>>* heads = nullptr;
    if (trace) heads = &trace->heads.emplace_back();
    x = block_forward(x, cfg, bind.scoped("block" + std::to_string(b) + "."), heads);
    for (int t : cfg.tap_layers)
      if (t == b) taps.push_back(x);
  }
  return taps;
}

/// Per-tap 1x1 projection to d channels, concatenated over taps. Output is
/// token-major [(h*w) x 4d]; to_chw gives the [4d x h x w] view.
template <typename T>
ad::Var<T> reassemble(const std::vector<ad::Var<T>>& taps, const Binder<T>& bind) {
  if (taps.size() != 4) throw ShapeError("reassemble expects 4 taps, got " + std::to_string(taps.size()));
  std::vector<ad::Var<T>> parts;
  for (std::size_t k = 0; k < 4; ++k) parts.push_back(linear(taps[k], bind, "reassemble" + std::to_string(k + 1)));
  return ad::concat_cols(parts);
}

template <typename T>
ad::Var<T> to_chw(ad::Var<T> tokens, const TowerConfig& cfg) {
  return ad::reshape(ad::transpose(tokens), {tokens.dim(1), cfg.grid_h(), cfg.grid_w()});
}

/// Full tower: image -> token-major features [(h*w) x 4d].
template <typename T>
ad::Var<T> extract(const Tensor<T>& img, const TowerConfig& cfg, const Binder<T>& bind,
                   AttentionTrace<T>* trace = nullptr) {
  return reassemble(tower_forward(patch_embed(img, cfg, bind), cfg, bind, trace), bind);
}

inline constexpr double kDepthScale = 20.0;

/// RGB frame -> [3 x H x W] in [0, 1].
template <typename T>
Tensor<T> image_tensor(const scenegen::RgbImage& im) {
  Tensor<T> t({3, im.height, im.width});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < im.height; ++y)
      for (int x = 0; x < im.width; ++x) t.at(c, y, x) = static_cast<T>(im.at(y, x, c) / 255.0);
  return t;
}

/// Depth map -> [channels x H x W] normalized by the 20 m background depth,
/// the same plane repeated on every channel.
template <typename T>
Tensor<T> depth_tensor(const scenegen::DepthMap& d, int channels = 1) {
  Tensor<T> t({channels, d.height, d.width});
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < d.height; ++y)
      for (int x = 0; x < d.width; ++x) t.at(c, y, x) = static_cast<T>(d.at(y, x) / kDepthScale);
  return t;
}

}  // namespace binaural::vision
