#pragma once

#include <cstdio>

#include "binaural/evaluation/evaluate.hpp"
#include "binaural/training/trainer.hpp"

namespace binaural::evaluation {

inline const std::vector<std::string>& ablation_settings() {
  static const std::vector<std::string> s{"audio", "audio+image", "audio+depth", "audio+image+depth"};
  return s;
}

struct AblationRow {
  std::string modality;
  std::vector<EvalReport> runs;  ///< one per seed
  Distances median;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  EvalReport baseline;
  std::vector<std::uint64_t> seeds;
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw ValidationError("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Tower sizes must agree so the image and depth rows differ only in input.
inline void require_equal_towers(const audionet::ModelConfig& cfg) {
  auto full = cfg;
  full.modality = {true, true};
  const auto ps = audionet::init_params<float>(full, 0);
  const auto ni = ps.scalar_count("image."), nd = ps.scalar_count("depth.");
  if (ni != nd)
    throw ConfigError("image tower has " + std::to_string(ni) + " parameters, depth tower " + std::to_string(nd));
}

using RunSink = std::function<void(const std::string& modality, std::uint64_t seed, const training::LogRecord&)>;

/// Trains every modality setting under each seed with the shared config and
/// evaluates on `test`. With `out`, run artefacts go to out/<modality>/seed<k>.
inline AblationResult run_ablation(const audionet::ModelConfig& base, const training::TrainConfig& tc,
                                   const training::TrainData& data, const std::vector<Example>& test,
                                   const std::vector<std::uint64_t>& seeds, const std::string& dataset,
                                   const std::optional<std::filesystem::path>& out = std::nullopt,
                                   const RunSink& sink = {}) {
  if (seeds.empty()) throw ValidationError("ablation needs at least one seed");
  require_equal_towers(base);
  AblationResult r;
  r.seeds = seeds;
  r.baseline = baseline_zero_mask(test, dataset, seeds.front(), base, tc.threads);
  for (const auto& name : ablation_settings()) {
    AblationRow row{name, {}, {}};
    auto cfg = base;
    cfg.modality = fusion::modality_from(name);
    for (auto seed : seeds) {
      auto t = tc;
      t.seed = seed;
      std::optional<std::filesystem::path> dir;
      if (out) dir = *out / name / ("seed" + std::to_string(seed));
      training::LogSink s;
      if (sink) s = [&](const training::LogRecord& rec) { sink(name, seed, rec); };
      const auto res = training::train(cfg, t, data, dir, nullptr, s);
      auto rep = evaluate(res.checkpoint.as_model(), test, dataset, name + "/seed" + std::to_string(seed), seed,
                          {.threads = tc.threads});
      rep.baseline = r.baseline.mean;
      row.runs.push_back(std::move(rep));
    }
    std::vector<double> st, en;
    for (const auto& rep : row.runs) {
      st.push_back(rep.mean.stft);
      en.push_back(rep.mean.env);
    }
    row.median = {median(st), median(en)};
    r.rows.push_back(std::move(row));
  }
  return r;
}

/// Aligned plain-text table: one row per setting, median STFT and ENV.
inline std::string ablation_table(const AblationResult& r) {
  std::string s;
  char line[160];
  std::snprintf(line, sizeof line, "%-20s %10s %10s\n", "modality", "STFT", "ENV");
  s += line;
  for (const auto& row : r.rows) {
    std::snprintf(line, sizeof line, "%-20s %10.4f %10.4f\n", row.modality.c_str(), row.median.stft, row.median.env);
    s += line;
  }
  std::snprintf(line, sizeof line, "%-20s %10.4f %10.4f\n", "(zero-mask)", r.baseline.mean.stft, r.baseline.mean.env);
  s += line;
  return s;
}

inline json to_json(const AblationResult& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    json runs = json::array();
    for (const auto& rep : row.runs) runs.push_back(to_json(rep));
    rows.push_back({{"modality", row.modality}, {"median", {{"stft", row.median.stft}, {"env", row.median.env}}}, {"runs", runs}});
  }
  return {{"seeds", r.seeds}, {"baseline", to_json(r.baseline)}, {"rows", rows}};
}

}  // namespace binaural::evaluation
