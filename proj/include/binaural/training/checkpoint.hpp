#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "binaural/audionet/model.hpp"
#include "binaural/training/optimizer.hpp"

namespace binaural::training {

using json = nlohmann::json;

inline constexpr const char* kCheckpointVersion = "1";

struct TrainConfig {
  std::int64_t steps = 10000;
  int batch = 16;
  AdamConfig adam;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_interval = 1000;
  std::int64_t val_interval = 500;
  int val_limit = 64;  ///< validation samples used for logging, 0 = all
  int threads = 1;

  void validate() const {
    if (steps < 0) throw ConfigError("steps must be non-negative");
    if (batch <= 0) throw ConfigError("batch must be positive");
    if (!(adam.lr >= 0.0)) throw ConfigError("lr must be non-negative");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0))
      throw ConfigError("adam betas must lie in [0, 1)");
    if (!(adam.eps > 0.0)) throw ConfigError("adam eps must be positive");
    if (checkpoint_interval <= 0 || val_interval <= 0) throw ConfigError("intervals must be positive");
    if (val_limit < 0) throw ConfigError("val_limit must be non-negative");
    if (threads <= 0) throw ConfigError("threads must be positive");
  }

  friend bool operator==(const TrainConfig& a, const TrainConfig& b) { return to_json(a) == to_json(b); }

  friend json to_json(const TrainConfig& c) {
    return {{"steps", c.steps},
            {"batch", c.batch},
            {"lr", c.adam.lr},
            {"beta1", c.adam.beta1},
            {"beta2", c.adam.beta2},
            {"adam_eps", c.adam.eps},
            {"seed", c.seed},
            {"checkpoint_interval", c.checkpoint_interval},
            {"val_interval", c.val_interval},
            {"val_limit", c.val_limit},
            {"threads", c.threads}};
  }
};

inline void apply_json(TrainConfig& c, const json& j) {
  for (const auto& [k, v] : j.items()) {
    if (k == "steps") c.steps = v.get<std::int64_t>();
    else if (k == "batch") c.batch = v.get<int>();
    else if (k == "lr") c.adam.lr = v.get<double>();
    else if (k == "beta1") c.adam.beta1 = v.get<double>();
    else if (k == "beta2") c.adam.beta2 = v.get<double>();
    else if (k == "adam_eps") c.adam.eps = v.get<double>();
    else if (k == "seed") c.seed = v.get<std::uint64_t>();
    else if (k == "checkpoint_interval") c.checkpoint_interval = v.get<std::int64_t>();
    else if (k == "val_interval") c.val_interval = v.get<std::int64_t>();
    else if (k == "val_limit") c.val_limit = v.get<int>();
    else if (k == "threads") c.threads = v.get<int>();
    else throw ValidationError("unknown train config key '" + k + "'");
  }
}

/// Everything needed to resume training or run inference. Batches are drawn
/// from streams derived from (train.seed, step), so (seed, step) is the
/// complete RNG state.
struct Checkpoint {
  audionet::ModelConfig model;
  TrainConfig train;
  ParamStore<float> params;
  AdamState<float> adam;
  std::int64_t step = 0;

  audionet::Model<float> as_model() const { return {model, params}; }
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline Checkpoint initial_checkpoint(const audionet::ModelConfig& model, const TrainConfig& train) {
  Checkpoint c{model, train, audionet::init_params<float>(model, derive_seed(train.seed, "init")), {}, 0};
  c.adam = AdamState<float>::like(c.params);
  return c;
}

/// Dotted paths where two configurations differ, e.g. "modality", "stft.hop".
inline std::vector<std::string> config_diff(const json& a, const json& b) {
  std::vector<std::string> out;
  for (const auto& op : json::diff(a, b)) {
    auto p = op["path"].get<std::string>();
    if (!p.empty() && p[0] == '/') p.erase(0, 1);
    std::replace(p.begin(), p.end(), '/', '.');
    out.push_back(p);
  }
  return out;
}

namespace detail {

inline void put_floats(std::string& buf, const Tensor<float>& t) {
  const std::size_t start = buf.size();
  buf.resize(start + t.vec().size() * 4);
  for (std::size_t i = 0; i < t.vec().size(); ++i) {
    auto u = std::bit_cast<std::uint32_t>(t.vec()[i]);
    if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
    std::memcpy(buf.data() + start + 4 * i, &u, 4);
  }
}

inline Tensor<float> get_floats(const std::string& buf, std::size_t& off, const Shape& shape, const std::string& name) {
  Tensor<float> t(shape);
  const std::size_t bytes = t.vec().size() * 4;
  if (off + bytes > buf.size())
    throw FormatError("checkpoint truncated at byte offset " + std::to_string(buf.size()) + " while reading '" + name +
                      "' (needs bytes " + std::to_string(off) + ".." + std::to_string(off + bytes) + ")");
  for (std::size_t i = 0; i < t.vec().size(); ++i) {
    std::uint32_t u;
    std::memcpy(&u, buf.data() + off + 4 * i, 4);
    if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
    t.vec()[i] = std::bit_cast<float>(u);
  }
  off += bytes;
  return t;
}

inline json descriptors(const ParamStore<float>& ps) {
  json d = json::array();
  for (std::size_t i = 0; i < ps.size(); ++i) d.push_back({{"name", ps.names()[i]}, {"shape", ps.at(i).shape()}});
  return d;
}

}  // namespace detail

/// Layout: one line of JSON header, then float32 little-endian tensors in
/// descriptor order (parameters, then Adam first and second moments).
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const json header{{"version", kCheckpointVersion},
                    {"model", to_json(c.model)},
                    {"train", to_json(c.train)},
                    {"step", c.step},
                    {"adam_step", c.adam.step},
                    {"rng", {{"seed", c.train.seed}, {"step", c.step}}},
                    {"tensors", detail::descriptors(c.params)},
                    {"optimizer", {"m", "v"}}};
  std::string buf = header.dump() + "\n";
  for (std::size_t i = 0; i < c.params.size(); ++i) detail::put_floats(buf, c.params.at(i));
  for (std::size_t i = 0; i < c.adam.m.size(); ++i) detail::put_floats(buf, c.adam.m.at(i));
  for (std::size_t i = 0; i < c.adam.v.size(); ++i) detail::put_floats(buf, c.adam.v.at(i));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

/// Loads a checkpoint. With `expect`, an architecture mismatch is reported
/// as a ConfigError listing the differing keys.
namespace detail {
inline Checkpoint parse_checkpoint(const std::string& buf, const audionet::ModelConfig* expect) {
  const auto nl = buf.find('\n');
  if (nl == std::string::npos) throw FormatError("checkpoint header not terminated (file is " + std::to_string(buf.size()) + " bytes)");
  json h;
  try {
    h = json::parse(buf.substr(0, nl));
  } catch (const json::parse_error& e) {
    throw FormatError("checkpoint header is not valid JSON at byte offset " + std::to_string(e.byte));
  }
  Checkpoint c;
  try {
    if (h.at("version") != kCheckpointVersion)
      throw FormatError("checkpoint version " + h.at("version").dump() + " is not supported (expected " +
                        kCheckpointVersion + ")");
    audionet::apply_json(c.model, h.at("model"));
    apply_json(c.train, h.at("train"));
    c.step = h.at("step").get<std::int64_t>();
    c.adam.step = h.at("adam_step").get<std::int64_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header malformed: ") + e.what());
  }
  if (expect && !(*expect == c.model)) {
    std::string keys;
    for (const auto& k : config_diff(to_json(*expect), to_json(c.model))) keys += (keys.empty() ? "" : ", ") + k;
    throw ConfigError("checkpoint architecture differs from the requested config at: " + keys);
  }
  // descriptors must match the architecture the header declares
  const auto ref = audionet::init_params<float>(c.model, 0);
  if (h.at("tensors") != descriptors(ref))
    throw FormatError("checkpoint tensor table does not match its model config");
  std::size_t off = nl + 1;
  for (std::size_t i = 0; i < ref.size(); ++i) c.params.add(ref.names()[i], get_floats(buf, off, ref.at(i).shape(), ref.names()[i]));
  c.adam = AdamState<float>::like(ref);
  c.adam.step = h.at("adam_step").get<std::int64_t>();
  for (std::size_t i = 0; i < ref.size(); ++i) c.adam.m.at(i) = get_floats(buf, off, ref.at(i).shape(), "adam.m/" + ref.names()[i]);
  for (std::size_t i = 0; i < ref.size(); ++i) c.adam.v.at(i) = get_floats(buf, off, ref.at(i).shape(), "adam.v/" + ref.names()[i]);
  if (off != buf.size())
    throw FormatError("checkpoint has " + std::to_string(buf.size() - off) + " trailing bytes after offset " + std::to_string(off));
  return c;
}
}  // namespace detail

inline Checkpoint load_checkpoint(const std::filesystem::path& path, const audionet::ModelConfig* expect = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return detail::parse_checkpoint(ss.str(), expect);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace binaural::training
