#pragma once

#include <algorithm>
#include <json.hpp>
#include <optional>

#include "binaural/audionet/model.hpp"
#include "binaural/core/parallel.hpp"
#include "binaural/signal/metrics.hpp"
#include "binaural/training/data.hpp"

namespace binaural::evaluation {

using json = nlohmann::json;
using training::Example;

struct SampleScore {
  std::string id;
  double stft = 0.0;
  double env = 0.0;
  friend bool operator==(const SampleScore&, const SampleScore&) = default;
};

struct Distances {
  double stft = 0.0;
  double env = 0.0;
  friend bool operator==(const Distances&, const Distances&) = default;
};

struct EvalReport {
  std::string dataset;
  std::string model;
  std::string modality;  ///< "none" for the zero-mask baseline
  std::uint64_t seed = 0;
  std::vector<SampleScore> samples;  ///< sorted by id
  Distances mean;
  std::optional<Distances> baseline;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Per-sample means, summed in id order so the result does not depend on
/// how the samples were produced.
inline Distances aggregate(std::vector<SampleScore>& samples) {
  std::sort(samples.begin(), samples.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  Distances d;
  if (samples.empty()) return d;
  for (const auto& s : samples) {
    d.stft += s.stft;
    d.env += s.env;
  }
  d.stft /= static_cast<double>(samples.size());
  d.env /= static_cast<double>(samples.size());
  return d;
}

/// Both distances of a prediction against the example's oracle stereo.
inline SampleScore score(const audionet::Prediction& p, const Example& x, const signal::StftParams& stft) {
  const auto gl = signal::stft(signal::Waveform::mono(x.stereo.sample_rate, x.stereo.left()), stft);
  const auto gr = signal::stft(signal::Waveform::mono(x.stereo.sample_rate, x.stereo.right()), stft);
  return {x.id, signal::stft_distance({p.left, p.right}, {gl, gr}), signal::env_distance(p.stereo, x.stereo)};
}

struct EvalOptions {
  bool force_zero_mask = false;
  int threads = 1;
};

template <typename T>
std::vector<SampleScore> score_all(const audionet::Model<T>& model, const std::vector<Example>& xs,
                                   const EvalOptions& opt = {}) {
  std::vector<SampleScore> out(xs.size());
  parallel_for(xs.size(), opt.threads, [&](std::size_t i) {
    const auto& x = xs[i];
    if (x.frame.height != model.config.image_tower.image_height || x.frame.width != model.config.image_tower.image_width)
      throw DataError("sample " + x.id + ": frame size does not match the model");
    const auto p = audionet::predict(model, x.mono, &x.frame, &x.depth, {.force_zero_mask = opt.force_zero_mask});
    out[i] = score(p, x, model.config.stft);
  });
  return out;
}

template <typename T>
EvalReport evaluate(const audionet::Model<T>& model, const std::vector<Example>& xs, const std::string& dataset,
                    const std::string& model_id, std::uint64_t seed, const EvalOptions& opt = {}) {
  EvalReport r;
  r.dataset = dataset;
  r.model = model_id;
  r.modality = opt.force_zero_mask ? "none" : fusion::to_string(model.config.modality);
  r.seed = seed;
  r.samples = score_all(model, xs, opt);
  r.mean = aggregate(r.samples);
  return r;
}

/// The no-spatialisation lower bound: both ears receive A/2.
inline EvalReport baseline_zero_mask(const std::vector<Example>& xs, const std::string& dataset, std::uint64_t seed,
                                     const audionet::ModelConfig& like = {}, int threads = 1) {
  auto cfg = like;
  cfg.modality = {false, false};
  if (!xs.empty()) cfg.sample_rate = xs.front().mono.sample_rate;
  const audionet::Model<float> zero{cfg, audionet::init_params<float>(cfg, 0)};
  return evaluate(zero, xs, dataset, "zero-mask", seed, {.force_zero_mask = true, .threads = threads});
}

inline std::string dataset_id(const scenegen::DatasetManifest& m, const std::string& split) {
  return m.root.filename().string() + ":" + split + ":seed=" + std::to_string(m.seed);
}

inline json to_json(const EvalReport& r) {
  json samples = json::array();
  for (const auto& s : r.samples) samples.push_back({{"id", s.id}, {"stft", s.stft}, {"env", s.env}});
  json j{{"dataset", r.dataset},
         {"model", r.model},
         {"modality", r.modality},
         {"seed", r.seed},
         {"samples", samples},
         {"mean", {{"stft", r.mean.stft}, {"env", r.mean.env}}}};
  if (r.baseline) {
    j["baseline"] = {{"stft", r.baseline->stft}, {"env", r.baseline->env}};
    j["ratio"] = {{"stft", r.mean.stft / r.baseline->stft}, {"env", r.mean.env / r.baseline->env}};
  }
  return j;
}

inline EvalReport report_from_json(const json& j) {
  try {
    EvalReport r;
    r.dataset = j.at("dataset").get<std::string>();
    r.model = j.at("model").get<std::string>();
    r.modality = j.at("modality").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& s : j.at("samples"))
      r.samples.push_back({s.at("id").get<std::string>(), s.at("stft").get<double>(), s.at("env").get<double>()});
    r.mean = {j.at("mean").at("stft").get<double>(), j.at("mean").at("env").get<double>()};
    if (j.contains("baseline")) r.baseline = Distances{j["baseline"].at("stft").get<double>(), j["baseline"].at("env").get<double>()};
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed evaluation report: ") + e.what());
  }
}

/// Recomputes the aggregates from the per-sample entries.
inline bool aggregates_consistent(const EvalReport& r, double tol = 1e-9) {
  auto s = r.samples;
  const auto d = aggregate(s);
  const auto close = [tol](double a, double b) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); };
  return close(d.stft, r.mean.stft) && close(d.env, r.mean.env);
}

}  // namespace binaural::evaluation
