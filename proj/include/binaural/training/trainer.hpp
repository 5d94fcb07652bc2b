#pragma once

#include <functional>
#include <optional>

#include "binaural/evaluation/evaluate.hpp"
#include "binaural/training/checkpoint.hpp"
#include "binaural/training/data.hpp"
#include "binaural/training/loss.hpp"

namespace binaural::training {

struct LogRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  std::optional<double> val_stft, val_env;
  friend bool operator==(const LogRecord&, const LogRecord&) = default;
};

inline json to_json(const LogRecord& r) {
  return {{"step", r.step},
          {"loss", r.loss},
          {"val_stft", r.val_stft ? json(*r.val_stft) : json(nullptr)},
          {"val_env", r.val_env ? json(*r.val_env) : json(nullptr)}};
}

/// Indices of the batch used at `step`; uniform with replacement.
inline std::vector<std::size_t> batch_indices(std::uint64_t seed, std::int64_t step, std::size_t n, int batch) {
  if (n == 0) throw DataError("training split is empty");
  Rng rng(derive_seed(derive_seed(seed, "batch"), static_cast<std::uint64_t>(step)));
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> idx(static_cast<std::size_t>(batch));
  for (auto& i : idx) i = pick(rng);
  return idx;
}

/// Per-sample loss and gradient. Gradients of one sample land in `grads`
/// (overwritten).
inline double sample_loss_grad(const audionet::ModelConfig& cfg, const ParamStore<float>& params, const Example& x,
                               ParamStore<float>& grads) {
  grads.set_zero();
  const auto f = features<float>(cfg, x);
  ad::Tape<float> tape(true);
  const auto loss = binaural_loss(audionet::forward_graph(cfg, Binder<float>{tape, params, &grads, ""}, f.input), f.yl, f.yr);
  const double l = loss.value()[0];
  if (!std::isfinite(l)) throw NumericError("non-finite loss on sample " + x.id);
  tape.backward(loss);
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!grads.at(i).all_finite()) throw NumericError("non-finite gradient for " + grads.names()[i] + " on sample " + x.id);
  return l;
}

/// Mean loss over the batch without updating anything.
inline double batch_loss(const audionet::ModelConfig& cfg, const ParamStore<float>& params,
                         const std::vector<const Example*>& batch) {
  double s = 0.0;
  for (const auto* x : batch) {
    const auto f = features<float>(cfg, *x);
    ad::Tape<float> tape(false);
    s += binaural_loss(audionet::forward_graph(cfg, Binder<float>{tape, params, nullptr, ""}, f.input), f.yl, f.yr).value()[0];
  }
  return s / static_cast<double>(batch.size());
}

/// One optimizer step on `batch`; returns the mean batch loss. Per-sample
/// gradients are reduced in batch order, so the result does not depend on
/// the thread count.
inline double train_step(Checkpoint& c, const std::vector<const Example*>& batch, int threads = 1) {
  const std::size_t b = batch.size();
  const bool serial = threads <= 1;
  std::vector<ParamStore<float>> per(serial ? 1 : b, c.params.zeros_like());
  std::vector<double> losses(b);
  auto total = c.params.zeros_like();
  const auto add = [&](const ParamStore<float>& g) {
    for (std::size_t i = 0; i < total.size(); ++i) total.at(i) += g.at(i);
  };
  try {
    if (serial) {
      for (std::size_t k = 0; k < b; ++k) {
        losses[k] = sample_loss_grad(c.model, c.params, *batch[k], per[0]);
        add(per[0]);
      }
    } else {
      parallel_for(b, threads, [&](std::size_t k) { losses[k] = sample_loss_grad(c.model, c.params, *batch[k], per[k]); });
      for (const auto& g : per) add(g);
    }
  } catch (const NumericError& e) {
    throw NumericError("step " + std::to_string(c.step + 1) + ": " + e.what());
  }
  const float inv = 1.0f / static_cast<float>(b);
  for (std::size_t i = 0; i < total.size(); ++i)
    for (auto& v : total.at(i).vec()) v *= inv;
  adam_step(c.params, total, c.adam, c.train.adam);
  ++c.step;
  double mean = 0.0;
  for (double l : losses) mean += l;
  return mean / static_cast<double>(b);
}

struct TrainData {
  std::vector<Example> train, val;
  std::string dataset;
};

inline TrainData load_train_data(const scenegen::DatasetManifest& m, const TrainConfig& tc) {
  TrainData d;
  d.train = load_split(m, "train", 0, tc.threads);
  d.val = load_split(m, "val", tc.val_limit, tc.threads);
  d.dataset = evaluation::dataset_id(m, "train");
  return d;
}

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LogRecord> log;
};

using LogSink = std::function<void(const LogRecord&)>;

/// Runs from `start` (or a fresh initialisation) up to train.steps total
/// steps. With `out`, writes train_log.jsonl, ckpt_<step>.bin at every
/// checkpoint interval and final.bin.
inline TrainResult train(const audionet::ModelConfig& model_cfg, const TrainConfig& tc, const TrainData& data,
                         const std::optional<std::filesystem::path>& out = std::nullopt,
                         const Checkpoint* start = nullptr, const LogSink& sink = {}) {
  model_cfg.validate();
  tc.validate();
  TrainResult r;
  if (start) {
    if (!(start->model == model_cfg)) {
      std::string keys;
      for (const auto& k : config_diff(to_json(model_cfg), to_json(start->model))) keys += (keys.empty() ? "" : ", ") + k;
      throw ConfigError("resume checkpoint architecture differs at: " + keys);
    }
    r.checkpoint = *start;
    r.checkpoint.train = tc;
  } else {
    r.checkpoint = initial_checkpoint(model_cfg, tc);
  }
  auto& c = r.checkpoint;
  std::ofstream log;
  if (out) {
    std::filesystem::create_directories(*out);
    log.open(*out / "train_log.jsonl", start ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot write " + (*out / "train_log.jsonl").string());
  }
  const auto validate_now = [&](LogRecord& rec) {
    if (data.val.empty()) return;
    auto scores = evaluation::score_all(c.as_model(), data.val, {.threads = tc.threads});
    const auto d = evaluation::aggregate(scores);
    rec.val_stft = d.stft;
    rec.val_env = d.env;
  };
  while (c.step < tc.steps) {
    const auto idx = batch_indices(tc.seed, c.step, data.train.size(), tc.batch);
    std::vector<const Example*> batch;
    for (auto i : idx) batch.push_back(&data.train[i]);
    LogRecord rec;
    rec.loss = train_step(c, batch, tc.threads);
    rec.step = c.step;
    if (c.step % tc.val_interval == 0 || c.step == tc.steps) validate_now(rec);
    r.log.push_back(rec);
    if (log) log << to_json(rec).dump() << "\n" << std::flush;
    if (sink) sink(rec);
    if (out && c.step % tc.checkpoint_interval == 0)
      save_checkpoint(*out / ("ckpt_" + std::to_string(c.step) + ".bin"), c);
  }
  if (out) save_checkpoint(*out / "final.bin", c);
  return r;
}

}  // namespace binaural::training
