#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "binaural/core/error.hpp"

namespace binaural::scenegen {

using json = nlohmann::json;

enum class SignalKind { SineMixture, NoiseBand };

inline std::string to_string(SignalKind k) { return k == SignalKind::SineMixture ? "sine-mixture" : "band-noise"; }

inline SignalKind signal_kind_from(const std::string& s) {
  if (s == "sine-mixture") return SignalKind::SineMixture;
  if (s == "band-noise") return SignalKind::NoiseBand;
  throw ValidationError("unknown signal generator '" + s + "'");
}

/// Source waveform recipe. Sine mixtures use the three partials; noise bands
/// span one octave starting at band_low and are realized from `seed`.
struct SignalSpec {
  SignalKind kind = SignalKind::SineMixture;
  std::uint64_t seed = 0;
  std::array<double, 3> freqs{};
  std::array<double, 3> amps{};
  std::array<double, 3> phases{};
  double band_low = 0.0;
};

struct SourceSpec {
  double azimuth = 0.0;   ///< degrees, positive = listener's right
  double distance = 1.0;  ///< meters
  SignalSpec signal;
};

struct SceneSpec {
  std::vector<SourceSpec> sources;
  double duration = 0.63;  ///< seconds
  double room_gain = 1.0;
  std::uint64_t seed = 0;

  void validate(int sample_rate = 16000, int min_samples = 400) const {
    if (sources.empty() || sources.size() > 3)
      throw ValidationError("scene needs 1-3 sources, got " + std::to_string(sources.size()));
    for (const auto& s : sources) {
      if (!(s.azimuth >= -90.0 && s.azimuth <= 90.0))
        throw ValidationError("source azimuth " + std::to_string(s.azimuth) + " outside [-90, 90]");
      if (!(s.distance >= 1.0 && s.distance <= 10.0))
        throw ValidationError("source distance " + std::to_string(s.distance) + " outside [1, 10]");
      if (s.signal.kind == SignalKind::NoiseBand && !(s.signal.band_low > 0.0 && 2.0 * s.signal.band_low < sample_rate / 2.0))
        throw ValidationError("noise band must lie below Nyquist");
    }
    if (!std::isfinite(room_gain) || room_gain <= 0.0) throw ValidationError("room_gain must be positive");
    if (!(duration > 0.0) || std::lround(duration * sample_rate) < min_samples)
      throw ValidationError("scene duration shorter than one STFT window");
  }

  std::size_t num_samples(int sample_rate) const {
    return static_cast<std::size_t>(std::lround(duration * sample_rate));
  }

  /// Scene with every azimuth negated (left/right mirror image).
  SceneSpec mirrored() const {
    SceneSpec m = *this;
    for (auto& s : m.sources) s.azimuth = -s.azimuth;
    return m;
  }
};

inline json to_json(const SignalSpec& s) {
  json j{{"generator", to_string(s.kind)}, {"seed", s.seed}};
  if (s.kind == SignalKind::SineMixture) {
    j["freqs"] = s.freqs;
    j["amps"] = s.amps;
    j["phases"] = s.phases;
  } else {
    j["band_low"] = s.band_low;
  }
  return j;
}

inline SignalSpec signal_from_json(const json& j) {
  SignalSpec s;
  s.kind = signal_kind_from(j.at("generator").get<std::string>());
  s.seed = j.at("seed").get<std::uint64_t>();
  if (s.kind == SignalKind::SineMixture) {
    s.freqs = j.at("freqs").get<std::array<double, 3>>();
    s.amps = j.at("amps").get<std::array<double, 3>>();
    s.phases = j.at("phases").get<std::array<double, 3>>();
  } else {
    s.band_low = j.at("band_low").get<double>();
  }
  return s;
}

inline json to_json(const SceneSpec& sc) {
  json srcs = json::array();
  for (const auto& s : sc.sources)
    srcs.push_back({{"azimuth", s.azimuth}, {"distance", s.distance}, {"signal", to_json(s.signal)}});
  return {{"sources", srcs}, {"duration", sc.duration}, {"room_gain", sc.room_gain}, {"seed", sc.seed}};
}

inline SceneSpec scene_from_json(const json& j) {
  try {
    SceneSpec sc;
    for (const auto& s : j.at("sources"))
      sc.sources.push_back({s.at("azimuth").get<double>(), s.at("distance").get<double>(),
                            signal_from_json(s.at("signal"))});
    sc.duration = j.at("duration").get<double>();
    sc.room_gain = j.at("room_gain").get<double>();
    sc.seed = j.at("seed").get<std::uint64_t>();
    return sc;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed scene description: ") + e.what());
  }
}

}  // namespace binaural::scenegen
