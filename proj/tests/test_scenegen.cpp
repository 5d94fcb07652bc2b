#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>

#include <unistd.h>

#include "binaural/scenegen/dataset.hpp"
#include "binaural/scenegen/render.hpp"
#include "binaural/signal/metrics.hpp"
#include "binaural/signal/stft.hpp"

using namespace binaural;
using namespace binaural::scenegen;
namespace fs = std::filesystem;

namespace {

SignalSpec sine(double f0, std::uint64_t seed = 1) {
  SignalSpec s;
  s.kind = SignalKind::SineMixture;
  s.seed = seed;
  s.freqs = {f0, 2 * f0, 3 * f0};
  s.amps = {1.0, 0.5, 0.25};
  s.phases = {0.1, 0.7, 1.9};
  return s;
}

SignalSpec band(double lo, std::uint64_t seed) {
  SignalSpec s;
  s.kind = SignalKind::NoiseBand;
  s.seed = seed;
  s.band_low = lo;
  return s;
}

SceneSpec scene_of(std::vector<SourceSpec> srcs) {
  SceneSpec sc;
  sc.sources = std::move(srcs);
  sc.seed = 5;
  return sc;
}

double rms(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s / static_cast<double>(x.size()));
}

fs::path temp_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("binaural_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) { return read_text(p); }

}  // namespace

TEST(Pan, GainsAndDelayAt30Degrees) {
  // closed form: phi = (az + 90) / 180 * pi/2, gl = cos(phi)/d, gr = sin(phi)/d
  const double phi = (30.0 + 90.0) / 180.0 * std::numbers::pi / 2.0;
  const auto g = pan_gains(30.0, 2.0);
  EXPECT_NEAR(g.left, std::cos(phi) / 2.0, 1e-15);
  EXPECT_NEAR(g.right, std::sin(phi) / 2.0, 1e-15);
  EXPECT_NEAR(g.left, 0.25, 1e-12);
  EXPECT_NEAR(g.right, 0.4330, 5e-5);
  EXPECT_NEAR(interaural_delay(30.0), 262.4e-6, 0.05e-6);
  EXPECT_NEAR(interaural_delay(30.0) * 16000.0, 4.20, 0.005);
}

TEST(Pan, ConstantPowerOverAzimuths) {
  for (double az = -90.0; az <= 90.0; az += 7.5) {
    const auto g = pan_gains(az, 1.0);
    EXPECT_NEAR(g.left * g.left + g.right * g.right, 1.0, 1e-14);
    const auto m = pan_gains(-az, 1.0);
    EXPECT_EQ(g.left, m.right);
    EXPECT_EQ(g.right, m.left);
  }
}

TEST(FractionalDelay, MatchesAnalyticShift) {
  const int n = 4000;
  const double f = 440.0, delay = 4.2;
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i) x[i] = std::sin(2 * std::numbers::pi * f * i / 16000.0);
  const auto y = fractional_delay(x, delay);
  double worst = 0.0;
  for (int i = 100; i < n - 100; ++i)
    worst = std::max(worst, std::abs(y[i] - std::sin(2 * std::numbers::pi * f * (i - delay) / 16000.0)));
  EXPECT_LT(worst, 2e-3);
}

TEST(FractionalDelay, IntegerDelayIsExactShift) {
  std::vector<double> x(200);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::cos(0.37 * static_cast<double>(i)) + 0.01 * i;
  const auto y = fractional_delay(x, 3.0);
  for (std::size_t i = 3; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i - 3], 1e-12);
}

TEST(RenderBinaural, AzimuthZeroChannelsIdentical) {
  const auto w = render_binaural(scene_of({{0.0, 1.0, sine(220.0)}}));
  ASSERT_EQ(w.num_samples(), 10080u);
  for (std::size_t i = 0; i < w.num_samples(); ++i) ASSERT_EQ(w.left()[i], w.right()[i]);
}

TEST(RenderBinaural, HardRightLeavesLeftSilent) {
  const auto w = render_binaural(scene_of({{90.0, 1.0, band(400.0, 3)}}));
  const double l = rms(w.left()), r = rms(w.right());
  EXPECT_GT(r, 0.5);
  EXPECT_LT(20.0 * std::log10(l / r), -60.0);
}

TEST(RenderBinaural, MirrorSwapsChannels) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> az(-90.0, 90.0), dist(1.0, 10.0);
  for (int trial = 0; trial < 20; ++trial) {
    auto sc = scene_of({{az(rng), dist(rng), sine(180.0 + trial * 13)},
                        {az(rng), dist(rng), band(300.0 + trial * 40, 100 + trial)}});
    const auto a = render_binaural(sc);
    const auto b = render_binaural(sc.mirrored());
    for (std::size_t i = 0; i < a.num_samples(); ++i) {
      ASSERT_NEAR(a.left()[i], b.right()[i], 1e-6);
      ASSERT_NEAR(a.right()[i], b.left()[i], 1e-6);
    }
  }
}

TEST(RenderBinaural, DoublingDistanceHalvesRms) {
  auto sc = scene_of({{25.0, 1.5, sine(300.0)}, {-60.0, 3.0, band(700.0, 9)}});
  const auto near = render_binaural(sc);
  for (auto& s : sc.sources) s.distance *= 2.0;
  const auto far = render_binaural(sc);
  EXPECT_NEAR(rms(far.left()) / rms(near.left()), 0.5, 0.005);
  EXPECT_NEAR(rms(far.right()) / rms(near.right()), 0.5, 0.005);
}

TEST(RenderBinaural, SeedDeterminesNoise) {
  const auto a = source_signal(band(500.0, 42), 10080, 16000);
  const auto b = source_signal(band(500.0, 42), 10080, 16000);
  const auto c = source_signal(band(500.0, 43), 10080, 16000);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  EXPECT_NEAR(rms(a), 1.0, 1e-12);
}

TEST(RenderBinaural, NoiseBandStaysInOctave) {
  const auto x = source_signal(band(1000.0, 8), 16000, 16000);
  std::vector<std::complex<double>> spec(16000 / 2 + 1);
  signal::Fft::r2c(x, spec);
  double in = 0.0, total = 0.0;
  for (std::size_t k = 0; k < spec.size(); ++k) {
    const double e = std::norm(spec[k]);
    total += e;
    if (k >= 1000 && k <= 2000) in += e;
  }
  EXPECT_GT(in / total, 0.999999);
}

TEST(RenderBinaural, InvalidScenesRejected) {
  EXPECT_THROW(render_binaural(scene_of({})), ValidationError);
  EXPECT_THROW(render_binaural(scene_of({{95.0, 1.0, sine(200)}})), ValidationError);
  EXPECT_THROW(render_binaural(scene_of({{0.0, 0.5, sine(200)}})), ValidationError);
  EXPECT_THROW(render_binaural(scene_of({{0.0, 11.0, sine(200)}})), ValidationError);
  auto sc = scene_of({{0.0, 2.0, sine(200)}});
  sc.duration = 0.01;
  EXPECT_THROW(render_binaural(sc), ValidationError);
  sc = scene_of({{0, 2, sine(200)}, {0, 2, sine(200)}, {0, 2, sine(200)}, {0, 2, sine(200)}});
  EXPECT_THROW(render_binaural(sc), ValidationError);
}

TEST(MonoMix, SumOfChannels) {
  std::vector<double> s{0.1, -0.4, 0.25, 1.0};
  const auto x = mono_mix(signal::Waveform::stereo(16000, s, s));
  ASSERT_TRUE(x.is_mono());
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(x.channels[0][i], 2 * s[i]);
  EXPECT_THROW(mono_mix(signal::Waveform::mono(16000, s)), ShapeError);
}

TEST(MonoMix, StftLinearityAndRecombination) {
  const auto y = render_binaural(scene_of({{40.0, 2.0, sine(250.0)}, {-20.0, 1.2, band(900.0, 4)}}));
  const auto x = mono_mix(y);
  const auto yl = signal::stft(signal::Waveform::mono(16000, y.left()));
  const auto yr = signal::stft(signal::Waveform::mono(16000, y.right()));
  const auto a = signal::stft(x);
  for (std::size_t i = 0; i < a.planes.numel(); ++i) ASSERT_NEAR(a.planes[i], yl.planes[i] + yr.planes[i], 1e-9);
  std::vector<double> diff(y.num_samples());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = y.left()[i] - y.right()[i];
  const auto o = signal::stft(signal::Waveform::mono(16000, diff));
  const auto [l, r] = signal::recombine(a, o);
  EXPECT_LT(max_abs_diff(l.planes, yl.planes), 1e-6);
  EXPECT_LT(max_abs_diff(r.planes, yr.planes), 1e-6);
}

TEST(Oracle, DistancesZeroToSelfPositiveToMonoSplit) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> mag(5.5, 90.0);
  for (int trial = 0; trial < 5; ++trial) {
    const double az = (trial % 2 ? 1 : -1) * mag(rng);
    const auto y = render_binaural(scene_of({{az, 1.0 + trial, trial % 2 ? sine(200.0 + 50 * trial) : band(500, trial)}}));
    const auto x = mono_mix(y);
    std::vector<double> half(x.num_samples());
    for (std::size_t i = 0; i < half.size(); ++i) half[i] = x.channels[0][i] / 2.0;
    const auto split = signal::Waveform::stereo(16000, half, half);
    const auto spec = [](const signal::Waveform& w) {
      return std::pair{signal::stft(signal::Waveform::mono(16000, w.left())),
                       signal::stft(signal::Waveform::mono(16000, w.right()))};
    };
    EXPECT_EQ(signal::env_distance(y, y), 0.0);
    EXPECT_EQ(signal::stft_distance(spec(y), spec(y)), 0.0);
    EXPECT_GT(signal::env_distance(split, y), 0.0);
    EXPECT_GT(signal::stft_distance(spec(split), spec(y)), 0.0);
  }
}

TEST(RenderImage, MirrorIsHorizontalFlip) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> az(-90.0, 90.0), dist(1.0, 10.0);
  for (int trial = 0; trial < 20; ++trial) {
    const auto sc = scene_of({{az(rng), dist(rng), sine(200)}, {az(rng), dist(rng), band(500, 1)}});
    const auto a = render_image(sc), b = render_image(sc.mirrored());
    const auto da = render_depth(sc), db = render_depth(sc.mirrored());
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width; ++x) {
        for (int c = 0; c < 3; ++c) ASSERT_EQ(a.at(y, x, c), b.at(y, a.width - 1 - x, c));
        ASSERT_EQ(da.at(y, x), db.at(y, a.width - 1 - x));
      }
  }
}

TEST(RenderImage, CenteredBlobAndBackground) {
  const auto sc = scene_of({{0.0, 2.0, sine(200)}});
  const auto im = render_image(sc);
  ASSERT_EQ(im.height, 112);
  ASSERT_EQ(im.width, 112);
  // symmetric about the vertical midline u = W/2
  for (int y = 0; y < 112; ++y)
    for (int x = 0; x < 56; ++x)
      for (int c = 0; c < 3; ++c) ASSERT_EQ(im.at(y, x, c), im.at(y, 111 - x, c));
  const auto col = source_color(SignalKind::SineMixture);
  // the two middle columns straddle u = W/2 and carry the peak
  for (int x = 0; x < 112; ++x) EXPECT_LE(im.at(56, x, 0), im.at(56, 56, 0));
  EXPECT_EQ(im.at(56, 55, 0), im.at(56, 56, 0));
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(im.at(56, 56, c), col[c], 0.05 * std::abs(col[c] - 32));
  for (int c = 0; c < 3; ++c) EXPECT_EQ(im.at(0, 0, c), 32);
  EXPECT_EQ(im.at(111, 0, 0), 32);
}

TEST(RenderImage, ColorKeyedToGenerator) {
  const auto a = render_image(scene_of({{0.0, 1.0, sine(200)}}));
  const auto b = render_image(scene_of({{0.0, 1.0, band(500, 1)}}));
  EXPECT_NE(a.at(56, 56, 2), b.at(56, 56, 2));
}

TEST(RenderImage, BadSizeIsConfigError) {
  RasterConfig cfg;
  cfg.width = 100;
  const auto sc = scene_of({{0.0, 1.0, sine(200)}});
  EXPECT_THROW(render_image(sc, cfg), ConfigError);
  EXPECT_THROW(render_depth(sc, cfg), ConfigError);
}

TEST(RenderDepth, BackgroundSourceAndNearestWins) {
  const auto d1 = render_depth(scene_of({{0.0, 3.0, sine(200)}}));
  EXPECT_EQ(d1.at(0, 0), 20.0);
  EXPECT_EQ(d1.at(56, 56), 3.0);
  const auto d2 = render_depth(scene_of({{0.0, 5.0, sine(200)}, {5.0, 2.0, band(500, 1)}}));
  EXPECT_EQ(d2.at(56, 56), 2.0);
  EXPECT_EQ(d2.at(0, 0), 20.0);
  for (double v : d2.meters) EXPECT_TRUE(v == 20.0 || v == 5.0 || v == 2.0);
}

TEST(Png, RoundTrips) {
  const auto dir = temp_dir("png");
  fs::create_directories(dir);
  const auto sc = scene_of({{30.0, 2.5, sine(200)}, {-45.0, 1.5, band(500, 1)}});
  const auto im = render_image(sc);
  save_png(dir / "a.png", im);
  EXPECT_EQ(load_png_rgb(dir / "a.png"), im);
  const auto d = render_depth(sc);
  save_depth_png(dir / "d.png", d);
  const auto back = load_depth_png(dir / "d.png");
  ASSERT_EQ(back.meters.size(), d.meters.size());
  for (std::size_t i = 0; i < d.meters.size(); ++i) EXPECT_NEAR(back.meters[i], d.meters[i], 5e-4);
  EXPECT_THROW(load_png_rgb(dir / "missing.png"), IoError);
  write_text(dir / "bad.png", "not a png");
  EXPECT_THROW(load_png_rgb(dir / "bad.png"), FormatError);
  fs::remove_all(dir);
}

TEST(SceneJson, RoundTrip) {
  const auto sc = scene_of({{30.0, 2.5, sine(200)}, {-45.0, 1.5, band(500, 77)}});
  const auto back = scene_from_json(json::parse(to_json(sc).dump()));
  EXPECT_EQ(to_json(back), to_json(sc));
  EXPECT_THROW(scene_from_json(json::parse("{\"sources\": 3}")), FormatError);
  EXPECT_THROW(signal_from_json(json::parse(R"({"generator": "chirp", "seed": 1})")), ValidationError);
}

TEST(Dataset, DrawnScenesValidAndNormalized) {
  GeneratorConfig cfg;
  for (std::uint64_t s = 0; s < 30; ++s) {
    const auto sc = draw_scene(cfg, derive_seed(9, s));
    EXPECT_NO_THROW(sc.validate());
    EXPECT_GE(sc.sources.size(), 1u);
    EXPECT_LE(sc.sources.size(), 3u);
    EXPECT_NEAR(rms(mono_mix(render_binaural(sc)).channels[0]), cfg.target_rms, 1e-9);
  }
}

TEST(Dataset, CountsIdsAndDurations) {
  const auto dir = temp_dir("counts");
  GeneratorConfig cfg;
  cfg.max_sources = 2;
  const auto m = make_dataset(cfg, dir, {100, 20, 20}, 7, 2);
  std::set<std::string> ids;
  for (const auto& s : m.samples) ids.insert(s.id);
  EXPECT_EQ(ids.size(), 140u);
  EXPECT_EQ(m.split("train").size(), 100u);
  EXPECT_EQ(m.split("val").size(), 20u);
  EXPECT_EQ(m.split("test").size(), 20u);
  const auto loaded = load_manifest(dir);
  EXPECT_EQ(to_json(loaded), to_json(m));
  for (const auto* s : loaded.split("test")) {
    const auto w = signal::load_wav(dir / s->stereo);
    EXPECT_EQ(w.num_samples(), 10080u);
    EXPECT_TRUE(w.is_stereo());
  }
  fs::remove_all(dir);
}

TEST(Dataset, ByteIdenticalAndSampleIsolation) {
  const auto a = temp_dir("det_a"), b = temp_dir("det_b"), c = temp_dir("det_c");
  GeneratorConfig cfg;
  make_dataset(cfg, a, {6, 2, 2}, 123, 1);
  make_dataset(cfg, b, {6, 2, 2}, 123, 3);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path().filename();
  }
  EXPECT_EQ(files, 10u * 4 + 1);
  fs::create_directories(c);
  const auto one = generate_sample(cfg, 123, "val", 1, c);
  for (const auto* f : {&one.stereo, &one.frame, &one.depth, &one.scene}) EXPECT_EQ(slurp(c / *f), slurp(a / *f));
  const auto other = temp_dir("det_d");
  make_dataset(cfg, other, {6, 2, 2}, 124, 1);
  EXPECT_NE(slurp(a / "train-00000_stereo.wav"), slurp(other / "train-00000_stereo.wav"));
  for (const auto& d : {a, b, c, other}) fs::remove_all(d);
}

TEST(Dataset, ManifestErrors) {
  const auto dir = temp_dir("manifest");
  make_dataset(GeneratorConfig{}, dir, {2, 0, 0}, 1);
  fs::remove(dir / "train-00001_frame.png");
  EXPECT_THROW(load_manifest(dir), DataError);
  write_text(dir / "manifest.json", "{\"version\": \"2\"}");
  EXPECT_THROW(load_manifest(dir), FormatError);
  write_text(dir / "manifest.json", "{oops");
  EXPECT_THROW(load_manifest(dir), FormatError);
  EXPECT_THROW(load_manifest(dir / "nowhere"), IoError);
  GeneratorConfig bad;
  bad.max_sources = 4;
  EXPECT_THROW(make_dataset(bad, dir, {1, 0, 0}, 1), ConfigError);
  EXPECT_THROW(apply_json(bad, json::parse(R"({"colour": 1})")), ValidationError);
  fs::remove_all(dir);
}
