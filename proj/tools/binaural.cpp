// Command-line entry point: dataset generation, training, evaluation,
// ablation, inference, attention export and self-verification.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <iostream>

#include "binaural/evaluation/ablation.hpp"
#include "binaural/evaluation/attention_export.hpp"
#include "verify.hpp"

using namespace binaural;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

/// Dataset counts and seed for gen-data; seeds per ablation row.
struct RunSettings {
  int num_train = 1000;
  int num_val = 100;
  int num_test = 200;
  std::uint64_t data_seed = 0;
  int num_seeds = 3;
};

struct RunConfig {
  scenegen::GeneratorConfig generator;
  audionet::ModelConfig model;
  training::TrainConfig train;
  RunSettings run;
};

json to_json(const RunConfig& c) {
  return {{"generator", scenegen::to_json(c.generator)},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"run",
           {{"num_train", c.run.num_train},
            {"num_val", c.run.num_val},
            {"num_test", c.run.num_test},
            {"data_seed", c.run.data_seed},
            {"num_seeds", c.run.num_seeds}}}};
}

void apply_json(RunConfig& c, const json& j) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (k == "generator") scenegen::apply_json(c.generator, v);
    else if (k == "model") audionet::apply_json(c.model, v);
    else if (k == "train") training::apply_json(c.train, v);
    else if (k == "run") {
      for (const auto& [rk, rv] : v.items()) {
        if (rk == "num_train") c.run.num_train = rv.get<int>();
        else if (rk == "num_val") c.run.num_val = rv.get<int>();
        else if (rk == "num_test") c.run.num_test = rv.get<int>();
        else if (rk == "data_seed") c.run.data_seed = rv.get<std::uint64_t>();
        else if (rk == "num_seeds") c.run.num_seeds = rv.get<int>();
        else throw ValidationError("unknown config key 'run." + rk + "'");
      }
    } else
      throw ValidationError("unknown config section '" + k + "' (expected generator, model, train or run)");
  }
}

/// "train.lr=1e-3" -> {"train": {"lr": 0.001}}; values that are not JSON
/// are taken as strings.
json override_json(const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError("--set expects key=value, got '" + kv + "'");
  const auto key = kv.substr(0, eq), raw = kv.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (std::size_t dot; (dot = key.find('.', start)) != std::string::npos; start = dot + 1) parts.push_back(key.substr(start, dot - start));
  parts.push_back(key.substr(start));
  json out = value;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    if (it->empty()) throw ValidationError("--set key '" + key + "' has an empty component");
    out = json{{*it, out}};
  }
  return out;
}

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  int threads = 1;
  int verbosity = 1;
};

RunConfig effective_config(const Common& c) {
  RunConfig rc;
  if (!c.config.empty()) {
    json j;
    try {
      j = json::parse(scenegen::read_text(c.config));
    } catch (const json::parse_error& e) {
      throw ValidationError("--config " + c.config + ": invalid JSON at byte " + std::to_string(e.byte));
    }
    try {
      apply_json(rc, j);
    } catch (const json::exception& e) {
      throw ValidationError("--config " + c.config + ": " + e.what());
    }
  }
  for (const auto& kv : c.overrides) {
    try {
      apply_json(rc, override_json(kv));
    } catch (const json::exception& e) {
      throw ValidationError("--set " + kv + ": " + e.what());
    }
  }
  rc.train.threads = c.threads;
  return rc;
}

void echo_config(const fs::path& file, const RunConfig& rc) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  scenegen::write_text(file, to_json(rc).dump(2) + "\n");
}

fs::path sibling(const fs::path& p, const std::string& suffix) {
  return p.parent_path() / (p.stem().string() + suffix);
}

void require_dataset_fits(const scenegen::DatasetManifest& m, const audionet::ModelConfig& cfg) {
  if (m.config.sample_rate != cfg.sample_rate)
    throw ValidationError("dataset sample rate " + std::to_string(m.config.sample_rate) + " differs from model.sample_rate " +
                          std::to_string(cfg.sample_rate));
  if (m.config.raster.height != cfg.image_tower.image_height || m.config.raster.width != cfg.image_tower.image_width)
    throw ValidationError("dataset frames are " + std::to_string(m.config.raster.height) + "x" +
                          std::to_string(m.config.raster.width) + " but the model expects " +
                          std::to_string(cfg.image_tower.image_height) + "x" + std::to_string(cfg.image_tower.image_width));
}

training::LogSink progress(int verbosity, const std::string& tag = "") {
  return [verbosity, tag, t0 = std::chrono::steady_clock::now()](const training::LogRecord& r) {
    if (verbosity <= 0) return;
    if (verbosity < 2 && !r.val_stft) return;
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (r.val_stft)
      std::printf("%sstep %6lld  loss %10.3f  val_stft %8.4f  val_env %7.4f  (%.0fs)\n", tag.c_str(), static_cast<long long>(r.step),
                  r.loss, *r.val_stft, *r.val_env, s);
    else
      std::printf("%sstep %6lld  loss %10.3f\n", tag.c_str(), static_cast<long long>(r.step), r.loss);
    std::fflush(stdout);
  };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mono-to-binaural audio with image/depth cross-attention"};
  app.require_subcommand(1);
  Common common;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "JSON config file (sections: generator, model, train, run)")->check(CLI::ExistingFile);
    sub->add_option("--set", common.overrides, "dotted override, e.g. train.lr=1e-3 (repeatable)");
    sub->add_option("--threads", common.threads, "worker thread cap")->check(CLI::PositiveNumber);
    sub->add_flag("-v,--verbose", [&](std::int64_t n) { common.verbosity = 1 + static_cast<int>(n); }, "more output");
    sub->add_flag("-q,--quiet", [&](std::int64_t) { common.verbosity = 0; }, "no progress output");
  };

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_common(gen);
  std::string gen_out;
  std::optional<int> n_train, n_val, n_test;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--num-train", n_train, "training scenes")->check(CLI::NonNegativeNumber);
  gen->add_option("--num-val", n_val, "validation scenes")->check(CLI::NonNegativeNumber);
  gen->add_option("--num-test", n_test, "test scenes")->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", gen_seed, "dataset seed");

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  add_common(tr);
  std::string tr_data, tr_out, tr_resume;
  std::optional<std::string> tr_modality;
  std::optional<std::int64_t> tr_steps;
  std::optional<double> tr_lr;
  std::optional<int> tr_batch;
  std::optional<std::uint64_t> tr_seed;
  tr->add_option("--data", tr_data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out", tr_out, "run directory")->required();
  tr->add_option("--modality", tr_modality, "audio, audio+image, audio+depth or audio+image+depth");
  tr->add_option("--steps", tr_steps, "total optimizer steps")->check(CLI::NonNegativeNumber);
  tr->add_option("--lr", tr_lr, "Adam learning rate")->check(CLI::NonNegativeNumber);
  tr->add_option("--batch", tr_batch, "batch size")->check(CLI::PositiveNumber);
  tr->add_option("--seed", tr_seed, "training seed");
  tr->add_option("--resume", tr_resume, "continue from a checkpoint")->check(CLI::ExistingFile);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint against the zero-mask baseline");
  add_common(ev);
  std::string ev_ckpt, ev_data, ev_report, ev_split = "test";
  ev->add_option("--ckpt", ev_ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--report", ev_report, "report JSON path")->required();
  ev->add_option("--split", ev_split, "split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));

  // ablate
  auto* ab = app.add_subcommand("ablate", "train and evaluate all four modality settings");
  add_common(ab);
  std::string ab_data, ab_out;
  std::optional<std::int64_t> ab_steps;
  std::optional<std::uint64_t> ab_seed;
  std::optional<int> ab_seeds;
  ab->add_option("--data", ab_data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  ab->add_option("--out", ab_out, "output directory")->required();
  ab->add_option("--steps", ab_steps, "steps per run")->check(CLI::NonNegativeNumber);
  ab->add_option("--seed", ab_seed, "first seed; runs use seed, seed+1, ...");
  ab->add_option("--num-seeds", ab_seeds, "seeds per setting")->check(CLI::PositiveNumber);

  // infer
  auto* inf = app.add_subcommand("infer", "spatialise a mono WAV");
  add_common(inf);
  std::string in_ckpt, in_audio, in_frame, in_depth, in_out;
  std::optional<std::string> in_modality;
  inf->add_option("--ckpt", in_ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  inf->add_option("--audio", in_audio, "mono WAV")->required()->check(CLI::ExistingFile);
  inf->add_option("--frame", in_frame, "RGB frame PNG")->check(CLI::ExistingFile);
  inf->add_option("--depth", in_depth, "16-bit depth PNG")->check(CLI::ExistingFile);
  inf->add_option("--out", in_out, "stereo WAV to write")->required();
  inf->add_option("--modality", in_modality, "must match the checkpoint");

  // export-attention
  auto* ex = app.add_subcommand("export-attention", "write per-layer attention heatmaps");
  add_common(ex);
  std::string ex_ckpt, ex_data, ex_sample, ex_out;
  ex->add_option("--ckpt", ex_ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  ex->add_option("--data", ex_data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  ex->add_option("--sample", ex_sample, "sample id, e.g. test-00003")->required();
  ex->add_option("--out", ex_out, "output directory")->required();

  // verify
  auto* ver = app.add_subcommand("verify", "run the numerical self-checks");
  bool quick = false;
  ver->add_flag("--quick", quick, "fewer random cases, same tolerances");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      auto rc = effective_config(common);
      if (n_train) rc.run.num_train = *n_train;
      if (n_val) rc.run.num_val = *n_val;
      if (n_test) rc.run.num_test = *n_test;
      if (gen_seed) rc.run.data_seed = *gen_seed;
      const auto m = scenegen::make_dataset(rc.generator, gen_out, {rc.run.num_train, rc.run.num_val, rc.run.num_test},
                                            rc.run.data_seed, static_cast<unsigned>(common.threads));
      echo_config(fs::path(gen_out) / "config.json", rc);
      if (common.verbosity > 0) std::printf("wrote %zu samples to %s\n", m.samples.size(), gen_out.c_str());
    } else if (*tr) {
      auto rc = effective_config(common);
      if (tr_modality) rc.model.modality = fusion::modality_from(*tr_modality);
      if (tr_steps) rc.train.steps = *tr_steps;
      if (tr_lr) rc.train.adam.lr = *tr_lr;
      if (tr_batch) rc.train.batch = *tr_batch;
      if (tr_seed) rc.train.seed = *tr_seed;
      rc.model.validate();
      rc.train.validate();
      const auto m = scenegen::load_manifest(tr_data);
      require_dataset_fits(m, rc.model);
      rc.generator = m.config;
      echo_config(fs::path(tr_out) / "config.json", rc);
      const auto data = training::load_train_data(m, rc.train);
      std::optional<training::Checkpoint> start;
      if (!tr_resume.empty()) start = training::load_checkpoint(tr_resume, &rc.model);
      const auto r = training::train(rc.model, rc.train, data, fs::path(tr_out), start ? &*start : nullptr,
                                     progress(common.verbosity));
      if (common.verbosity > 0)
        std::printf("finished at step %lld; checkpoint %s\n", static_cast<long long>(r.checkpoint.step),
                    (fs::path(tr_out) / "final.bin").c_str());
    } else if (*ev) {
      auto rc = effective_config(common);
      const auto ck = training::load_checkpoint(ev_ckpt);
      rc.model = ck.model;
      rc.train = ck.train;
      const auto m = scenegen::load_manifest(ev_data);
      require_dataset_fits(m, ck.model);
      rc.generator = m.config;
      const auto xs = training::load_split(m, ev_split, 0, common.threads);
      const auto id = evaluation::dataset_id(m, ev_split);
      auto rep = evaluation::evaluate(ck.as_model(), xs, id, fs::path(ev_ckpt).filename().string(), ck.train.seed,
                                      {.threads = common.threads});
      rep.baseline = evaluation::baseline_zero_mask(xs, id, ck.train.seed, ck.model, common.threads).mean;
      const fs::path report(ev_report);
      if (report.has_parent_path()) fs::create_directories(report.parent_path());
      scenegen::write_text(report, to_json(rep).dump(2) + "\n");
      echo_config(sibling(report, ".config.json"), rc);
      std::printf("%s on %zu samples: STFT %.4f (baseline %.4f, ratio %.3f)  ENV %.4f (baseline %.4f, ratio %.3f)\n",
                  rep.modality.c_str(), rep.samples.size(), rep.mean.stft, rep.baseline->stft, rep.mean.stft / rep.baseline->stft,
                  rep.mean.env, rep.baseline->env, rep.mean.env / rep.baseline->env);
    } else if (*ab) {
      auto rc = effective_config(common);
      if (ab_steps) rc.train.steps = *ab_steps;
      if (ab_seed) rc.train.seed = *ab_seed;
      if (ab_seeds) rc.run.num_seeds = *ab_seeds;
      rc.model.validate();
      rc.train.validate();
      const auto m = scenegen::load_manifest(ab_data);
      require_dataset_fits(m, rc.model);
      rc.generator = m.config;
      echo_config(fs::path(ab_out) / "config.json", rc);
      const auto data = training::load_train_data(m, rc.train);
      const auto test = training::load_split(m, "test", 0, common.threads);
      std::vector<std::uint64_t> seeds;
      for (int k = 0; k < rc.run.num_seeds; ++k) seeds.push_back(rc.train.seed + static_cast<std::uint64_t>(k));
      const auto sink = [&](const std::string& mod, std::uint64_t seed, const training::LogRecord& r) {
        static std::map<std::string, training::LogSink> sinks;
        const auto key = mod + "/seed" + std::to_string(seed);
        auto it = sinks.find(key);
        if (it == sinks.end()) it = sinks.emplace(key, progress(common.verbosity, "[" + key + "] ")).first;
        it->second(r);
      };
      const auto r = evaluation::run_ablation(rc.model, rc.train, data, test, seeds, evaluation::dataset_id(m, "test"),
                                              fs::path(ab_out), sink);
      scenegen::write_text(fs::path(ab_out) / "ablation.json", to_json(r).dump(2) + "\n");
      const auto table = evaluation::ablation_table(r);
      scenegen::write_text(fs::path(ab_out) / "ablation.txt", table);
      std::fputs(table.c_str(), stdout);
    } else if (*inf) {
      auto rc = effective_config(common);
      const auto ck = training::load_checkpoint(in_ckpt);
      if (in_modality && fusion::modality_from(*in_modality) != ck.model.modality)
        throw ValidationError("--modality " + *in_modality + " does not match the checkpoint's " +
                              fusion::to_string(ck.model.modality));
      rc.model = ck.model;
      rc.train = ck.train;
      const auto audio = signal::load_wav(in_audio);
      if (!audio.is_mono())
        throw ValidationError("--audio " + in_audio + ": expected mono, got " + std::to_string(audio.num_channels()) + " channels");
      const bool need_frame = ck.model.modality.image || (ck.model.modality.depth && ck.model.depth_input == audionet::DepthInput::Rgb);
      const bool need_depth = ck.model.modality.depth && ck.model.depth_input == audionet::DepthInput::DepthMap;
      if (need_frame && in_frame.empty())
        throw ValidationError("--frame is required for modality " + fusion::to_string(ck.model.modality));
      if (need_depth && in_depth.empty())
        throw ValidationError("--depth is required for modality " + fusion::to_string(ck.model.modality));
      std::optional<scenegen::RgbImage> frame;
      std::optional<scenegen::DepthMap> depth;
      if (!in_frame.empty()) frame = scenegen::load_png_rgb(in_frame);
      if (!in_depth.empty()) depth = scenegen::load_depth_png(in_depth);
      const auto p = audionet::predict(ck.as_model(), audio, frame ? &*frame : nullptr, depth ? &*depth : nullptr);
      signal::save_wav(in_out, p.stereo);
      echo_config(sibling(in_out, ".config.json"), rc);
      double worst = 0.0;
      for (std::size_t i = 0; i < audio.num_samples(); ++i)
        worst = std::max(worst, std::abs(p.stereo.left()[i] + p.stereo.right()[i] - audio.channels[0][i]));
      if (common.verbosity > 0)
        std::printf("wrote %s (%zu samples, max |L+R-x| = %.2e)\n", in_out.c_str(), p.stereo.num_samples(), worst);
    } else if (*ex) {
      auto rc = effective_config(common);
      const auto ck = training::load_checkpoint(ex_ckpt);
      rc.model = ck.model;
      rc.train = ck.train;
      const auto m = scenegen::load_manifest(ex_data);
      require_dataset_fits(m, ck.model);
      rc.generator = m.config;
      const auto x = training::load_example(m, m.find(ex_sample));
      const auto r = evaluation::export_attention(ck.as_model(), x, ex_out);
      echo_config(fs::path(ex_out) / "config.json", rc);
      const auto scene = scenegen::scene_from_json(json::parse(scenegen::read_text(m.root / m.find(ex_sample).scene)));
      std::printf("sample %s, source azimuths:", x.id.c_str());
      for (const auto& s : scene.sources) std::printf(" %.1f", s.azimuth);
      std::printf("\n");
      for (const auto& mp : r.maps)
        std::printf("layer %d %-5s  center-of-mass x %.3f  %s\n", mp.layer, fusion::to_string(mp.modality).c_str(), mp.com_x,
                    mp.heatmap.filename().c_str());
    } else if (*ver) {
      std::printf("verification suite%s\n", quick ? " (quick)" : "");
      const auto t0 = std::chrono::steady_clock::now();
      const auto results = cli::run_verification(quick, [](const cli::CheckResult& r) {
        std::printf("%s\n", cli::format_check(r).c_str());
        std::fflush(stdout);
      });
      const auto failed = std::count_if(results.begin(), results.end(), [](const auto& r) { return !r.pass; });
      std::printf("%zu checks, %td failed, %.1fs\n", results.size(), failed,
                  std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      return failed == 0 ? 0 : 2;
    }
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
