#pragma once

#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "binaural/core/parallel.hpp"
#include "binaural/core/random.hpp"
#include "binaural/scenegen/image.hpp"
#include "binaural/scenegen/render.hpp"
#include "binaural/scenegen/scene.hpp"
#include "binaural/signal/waveform.hpp"

namespace binaural::scenegen {

inline constexpr const char* kManifestVersion = "1";

/// Scene sampling parameters for dataset generation.
struct GeneratorConfig {
  int sample_rate = 16000;
  double duration = 0.63;
  int min_sources = 1;
  int max_sources = 3;
  double max_abs_azimuth = 90.0;
  double min_distance = 1.0;
  double max_distance = 4.0;
  double target_rms = 0.1;  ///< RMS of the mono mixture after room gain
  RasterConfig raster;

  void validate() const {
    if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
    if (min_sources < 1 || max_sources > 3 || min_sources > max_sources)
      throw ConfigError("source count range must lie within [1, 3]");
    if (!(max_abs_azimuth >= 0.0 && max_abs_azimuth <= 90.0)) throw ConfigError("max_abs_azimuth must lie in [0, 90]");
    if (!(min_distance >= 1.0 && max_distance <= 10.0 && min_distance <= max_distance))
      throw ConfigError("distance range must lie within [1, 10]");
    if (!(target_rms > 0.0)) throw ConfigError("target_rms must be positive");
    raster.validate();
  }
};

inline json to_json(const GeneratorConfig& c) {
  return {{"sample_rate", c.sample_rate},       {"duration", c.duration},
          {"min_sources", c.min_sources},       {"max_sources", c.max_sources},
          {"max_abs_azimuth", c.max_abs_azimuth}, {"min_distance", c.min_distance},
          {"max_distance", c.max_distance},     {"target_rms", c.target_rms},
          {"image_height", c.raster.height},    {"image_width", c.raster.width},
          {"patch_size", c.raster.patch_size},  {"blob_scale", c.raster.blob_scale}};
}

/// Overlays keys from `j` onto `c`; unknown keys are rejected.
inline void apply_json(GeneratorConfig& c, const json& j) {
  for (const auto& [k, v] : j.items()) {
    if (k == "sample_rate") c.sample_rate = v.get<int>();
    else if (k == "duration") c.duration = v.get<double>();
    else if (k == "min_sources") c.min_sources = v.get<int>();
    else if (k == "max_sources") c.max_sources = v.get<int>();
    else if (k == "max_abs_azimuth") c.max_abs_azimuth = v.get<double>();
    else if (k == "min_distance") c.min_distance = v.get<double>();
    else if (k == "max_distance") c.max_distance = v.get<double>();
    else if (k == "target_rms") c.target_rms = v.get<double>();
    else if (k == "image_height") c.raster.height = v.get<int>();
    else if (k == "image_width") c.raster.width = v.get<int>();
    else if (k == "patch_size") c.raster.patch_size = v.get<int>();
    else if (k == "blob_scale") c.raster.blob_scale = v.get<double>();
    else throw ValidationError("unknown generator config key '" + k + "'");
  }
}

/// Draws a random scene; the result depends only on (cfg, seed).
inline SceneSpec draw_scene(const GeneratorConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  SceneSpec sc;
  sc.duration = cfg.duration;
  sc.seed = seed;
  const int count = cfg.min_sources + static_cast<int>(u01(rng) * (cfg.max_sources - cfg.min_sources + 1));
  for (int i = 0; i < std::min(count, cfg.max_sources); ++i) {
    SourceSpec s;
    s.azimuth = uniform(-cfg.max_abs_azimuth, cfg.max_abs_azimuth);
    s.distance = uniform(cfg.min_distance, cfg.max_distance);
    s.signal.seed = rng();
    if (u01(rng) < 0.5) {
      s.signal.kind = SignalKind::SineMixture;
      const double f0 = uniform(150.0, 600.0);
      for (std::size_t p = 0; p < 3; ++p) {
        s.signal.freqs[p] = f0 * static_cast<double>(p + 1);
        s.signal.amps[p] = uniform(0.3, 1.0);
        s.signal.phases[p] = uniform(0.0, 2.0 * std::numbers::pi);
      }
    } else {
      s.signal.kind = SignalKind::NoiseBand;
      s.signal.band_low = uniform(200.0, 1500.0);
    }
    sc.sources.push_back(s);
  }
  // Normalize the mono mixture to the target RMS.
  sc.room_gain = 1.0;
  const auto mono = mono_mix(render_binaural(sc, cfg.sample_rate));
  double ss = 0.0;
  for (double v : mono.channels[0]) ss += v * v;
  const double rms = std::sqrt(ss / static_cast<double>(mono.num_samples()));
  sc.room_gain = rms > 0.0 ? cfg.target_rms / rms : 1.0;
  return sc;
}

struct ManifestEntry {
  std::string id;
  std::string split;  ///< train | val | test
  std::string stereo, frame, depth, scene;  ///< paths relative to the dataset root
};

struct DatasetManifest {
  std::string version = kManifestVersion;
  GeneratorConfig config;
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> samples;
  std::filesystem::path root;  ///< not serialized

  std::vector<const ManifestEntry*> split(const std::string& name) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& s : samples)
      if (s.split == name) out.push_back(&s);
    return out;
  }

  const ManifestEntry& find(const std::string& id) const {
    for (const auto& s : samples)
      if (s.id == id) return s;
    throw DataError("sample '" + id + "' not in manifest");
  }
};

inline json to_json(const DatasetManifest& m) {
  json samples = json::array();
  for (const auto& s : m.samples)
    samples.push_back({{"id", s.id}, {"split", s.split}, {"stereo", s.stereo}, {"frame", s.frame},
                       {"depth", s.depth}, {"scene", s.scene}});
  return {{"version", m.version}, {"seed", m.seed}, {"config", to_json(m.config)}, {"samples", samples}};
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("short write to " + p.string());
}

/// Loads and checks a manifest: version, unique ids, referenced files exist.
inline DatasetManifest load_manifest(const std::filesystem::path& root) {
  const auto path = root / "manifest.json";
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  DatasetManifest m;
  m.root = root;
  try {
    m.version = j.at("version").get<std::string>();
    if (m.version != kManifestVersion) throw FormatError(path.string() + ": unsupported manifest version " + m.version);
    m.seed = j.at("seed").get<std::uint64_t>();
    apply_json(m.config, j.at("config"));
    std::set<std::string> ids;
    for (const auto& s : j.at("samples")) {
      ManifestEntry e{s.at("id"), s.at("split"), s.at("stereo"), s.at("frame"), s.at("depth"), s.at("scene")};
      if (!ids.insert(e.id).second) throw DataError(path.string() + ": duplicate sample id " + e.id);
      for (const auto* f : {&e.stereo, &e.frame, &e.depth, &e.scene})
        if (!std::filesystem::exists(root / *f)) throw DataError("sample " + e.id + ": missing file " + (root / *f).string());
      m.samples.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return m;
}

struct SplitCounts {
  int train = 0;
  int val = 0;
  int test = 0;
};

inline std::string sample_id(const std::string& split, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%05d", split.c_str(), index);
  return buf;
}

/// Renders every artifact of one sample into `out_dir`.
inline ManifestEntry generate_sample(const GeneratorConfig& cfg, std::uint64_t dataset_seed, const std::string& split,
                                     int index, const std::filesystem::path& out_dir) {
  ManifestEntry e;
  e.id = sample_id(split, index);
  e.split = split;
  e.stereo = e.id + "_stereo.wav";
  e.frame = e.id + "_frame.png";
  e.depth = e.id + "_depth.png";
  e.scene = e.id + "_scene.json";
  const SceneSpec scene = draw_scene(cfg, derive_seed(dataset_seed, e.id));
  signal::save_wav(out_dir / e.stereo, render_binaural(scene, cfg.sample_rate));
  save_png(out_dir / e.frame, render_image(scene, cfg.raster));
  save_depth_png(out_dir / e.depth, render_depth(scene, cfg.raster));
  write_text(out_dir / e.scene, to_json(scene).dump(2) + "\n");
  return e;
}

/// Deterministic dataset generation: identical (cfg, counts, seed) produce
/// byte-identical trees regardless of `threads`.
inline DatasetManifest make_dataset(const GeneratorConfig& cfg, const std::filesystem::path& out_dir,
                                    const SplitCounts& counts, std::uint64_t seed, unsigned threads = 1) {
  cfg.validate();
  if (counts.train < 0 || counts.val < 0 || counts.test < 0) throw ValidationError("split counts must be non-negative");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<std::pair<std::string, int>> jobs;
  for (int i = 0; i < counts.train; ++i) jobs.emplace_back("train", i);
  for (int i = 0; i < counts.val; ++i) jobs.emplace_back("val", i);
  for (int i = 0; i < counts.test; ++i) jobs.emplace_back("test", i);
  DatasetManifest m;
  m.config = cfg;
  m.seed = seed;
  m.root = out_dir;
  m.samples.resize(jobs.size());
  parallel_for(jobs.size(), threads,
               [&](std::size_t i) { m.samples[i] = generate_sample(cfg, seed, jobs[i].first, jobs[i].second, out_dir); });
  write_text(out_dir / "manifest.json", to_json(m).dump(2) + "\n");
  return m;
}

}  // namespace binaural::scenegen
