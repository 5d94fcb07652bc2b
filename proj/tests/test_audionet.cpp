#include <gtest/gtest.h>

#include <random>

#include "binaural/audionet/model.hpp"
#include "binaural/scenegen/render.hpp"
#include "binaural/training/grad_check.hpp"
#include "binaural/training/loss.hpp"

using namespace binaural;
using namespace binaural::audionet;

namespace {

Tensor<double> randn(Shape s, std::uint64_t seed, double std = 1.0) { return normal_tensor<double>(std::move(s), std, seed); }

struct Sample {
  signal::Waveform mono, stereo;
  scenegen::RgbImage frame;
  scenegen::DepthMap depth;
};

Sample make_sample(double az, double dist, std::uint64_t seed) {
  scenegen::SceneSpec sc;
  scenegen::SignalSpec s;
  s.kind = scenegen::SignalKind::NoiseBand;
  s.seed = seed;
  s.band_low = 400.0;
  sc.sources.push_back({az, dist, s});
  sc.room_gain = 0.1;
  Sample out;
  out.stereo = scenegen::render_binaural(sc);
  out.mono = scenegen::mono_mix(out.stereo);
  out.frame = scenegen::render_image(sc);
  out.depth = scenegen::render_depth(sc);
  return out;
}

ModelInput<double> input_of(const ModelConfig& cfg, const Sample& s) {
  return make_input<double>(cfg, signal::stft(s.mono, cfg.stft), &s.frame, &s.depth);
}

/// Small configuration for exhaustive random trials.
ModelConfig tiny_config() {
  ModelConfig c;
  c.stft = {64, 32, 64};
  c.encoder_widths = {2, 3, 4, 4, 4};
  c.decoder_widths = {4, 3, 3, 2};
  for (auto* t : {&c.image_tower, &c.depth_tower}) {
    t->image_height = t->image_width = 32;
    t->token_dim = 4;
    t->num_heads = 2;
    t->num_blocks = 1;
    t->tap_layers = {1, 1, 1, 1};
    t->proj_dim = 1;
  }
  return c;
}

}  // namespace

TEST(Encoder, ShapesForDefaultWidths) {
  const ModelConfig cfg;
  const auto ps = init_params<double>(cfg, 1);
  ad::Tape<double> tape(false);
  const auto enc = encode(tape.constant(randn({2, 257, 64}, 2)), cfg, Binder<double>{tape, ps, nullptr, ""});
  EXPECT_EQ(enc.features.shape(), (Shape{64, 8, 2}));
  ASSERT_EQ(enc.skips.size(), 5u);
  const std::vector<Shape> want{{8, 128, 32}, {16, 64, 16}, {32, 32, 8}, {64, 16, 4}, {64, 8, 2}};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(enc.skips[i].shape(), want[i]);
}

TEST(Encoder, ZeroInputZeroBiasesGivesZero) {
  const ModelConfig cfg;
  const auto ps = init_params<double>(cfg, 1);
  ad::Tape<double> tape(false);
  const auto enc = encode(tape.constant(Tensor<double>({2, 257, 64})), cfg, Binder<double>{tape, ps, nullptr, ""});
  for (const auto& s : enc.skips)
    for (double v : s.value().vec()) ASSERT_EQ(v, 0.0);
  EXPECT_THROW(encode(tape.constant(Tensor<double>({1, 257, 64})), cfg, Binder<double>{tape, ps, nullptr, ""}),
               ShapeError);
}

TEST(Decoder, DeclaredWidths) {
  ModelConfig cfg;
  EXPECT_EQ(cfg.decoder_concat_width(1), 64 + 98);
  EXPECT_EQ(cfg.decoder_concat_width(2), 64 + 98 + 64);
  EXPECT_EQ(cfg.decoder_concat_width(3), 32 + 98 + 32);
  EXPECT_EQ(cfg.decoder_concat_width(4), 16 + 98 + 16);
  EXPECT_EQ(cfg.decoder_concat_width(5), 8 + 98 + 8);
  cfg.modality = {false, false};
  EXPECT_EQ(cfg.decoder_concat_width(1), 64);
  const auto ps = init_params<double>(cfg, 1);
  EXPECT_EQ(ps["dec1.w"].dim(0), 64);
  EXPECT_FALSE(ps.contains("image.patch.w"));
  EXPECT_FALSE(ps.contains("align.depth2.w"));
}

TEST(Decoder, OutputShapeForAnyLength) {
  ModelConfig cfg;
  const auto ps = init_params<double>(cfg, 3);
  const auto s = make_sample(20.0, 2.0, 1);
  for (std::size_t n : {400u, 4000u, 10080u, 11000u}) {
    std::vector<double> x(s.mono.channels[0].begin(), s.mono.channels[0].begin() + static_cast<long>(std::min<std::size_t>(n, 10080)));
    x.resize(n, 0.01);
    const auto a = signal::stft(signal::Waveform::mono(16000, x));
    ad::Tape<double> tape(false);
    const auto g = forward_graph(cfg, Binder<double>{tape, ps, nullptr, ""}, make_input<double>(cfg, a, &s.frame, &s.depth));
    EXPECT_EQ(g.mask.shape(), (Shape{2, 257, a.frames()}));
  }
}

TEST(Decoder, MaskBoundedOverRandomTrials) {
  auto cfg = tiny_config();
  cfg.input_scale = 50.0;
  std::mt19937_64 rng(5);
  double worst = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const auto ps = init_params<double>(cfg, rng());
    ModelInput<double> in{randn({2, 33, 5}, rng(), 3.0), randn({3, 32, 32}, rng()), randn({3, 32, 32}, rng())};
    ad::Tape<double> tape(false);
    const auto g = forward_graph(cfg, Binder<double>{tape, ps, nullptr, ""}, in);
    for (double v : g.mask.value().vec()) worst = std::max(worst, std::abs(v));
  }
  EXPECT_LE(worst, 1.0);
  EXPECT_GT(worst, 0.5);
}

TEST(Decoder, WrongParameterShapeIsShapeError) {
  ModelConfig cfg;
  auto ps = init_params<double>(cfg, 3);
  ps["dec3.w"] = Tensor<double>({161, 16, 4, 4});
  const auto s = make_sample(20.0, 2.0, 1);
  ad::Tape<double> tape(false);
  EXPECT_THROW(forward_graph(cfg, Binder<double>{tape, ps, nullptr, ""}, input_of(cfg, s)), ShapeError);
}

TEST(Forward, RecombinationAndZeroMask) {
  ModelConfig cfg;
  const Model<double> model = Model<double>::create(cfg, 4);
  const auto s = make_sample(-35.0, 1.5, 2);
  const auto p = predict(model, s.mono, &s.frame, &s.depth);
  for (std::int64_t i = 0; i < p.mixture.planes.numel(); ++i)
    ASSERT_NEAR(p.left.planes[i] + p.right.planes[i], p.mixture.planes[i], 1e-6);
  ASSERT_EQ(p.stereo.num_samples(), s.mono.num_samples());
  for (std::size_t i = 0; i < p.stereo.num_samples(); ++i)
    ASSERT_NEAR(p.stereo.left()[i] + p.stereo.right()[i], s.mono.channels[0][i], 1e-4);
  const auto z = predict(model, s.mono, &s.frame, &s.depth, {.force_zero_mask = true});
  for (std::int64_t i = 0; i < z.mixture.planes.numel(); ++i) {
    ASSERT_EQ(z.left.planes[i], z.mixture.planes[i] / 2);
    ASSERT_EQ(z.right.planes[i], z.mixture.planes[i] / 2);
  }
  for (std::size_t i = 0; i < z.stereo.num_samples(); ++i)
    ASSERT_NEAR(z.stereo.left()[i], s.mono.channels[0][i] / 2, 1e-9);
}

TEST(Forward, MissingInputsAndRateMismatch) {
  ModelConfig cfg;
  const auto model = Model<double>::create(cfg, 4);
  const auto s = make_sample(10.0, 1.5, 2);
  EXPECT_THROW(predict(model, s.mono, nullptr, &s.depth), DataError);
  EXPECT_THROW(predict(model, s.mono, &s.frame, nullptr), DataError);
  EXPECT_THROW(predict(model, signal::Waveform::mono(8000, s.mono.channels[0]), &s.frame, &s.depth), DataError);
  EXPECT_THROW(predict(model, s.stereo, &s.frame, &s.depth), ShapeError);
  cfg.modality = {false, false};
  EXPECT_NO_THROW(predict(Model<double>::create(cfg, 4), s.mono, nullptr, nullptr));
}

TEST(Forward, AudioOnlyDiffersOnlyThroughAttentionChannels) {
  ModelConfig full;
  ModelConfig audio = full;
  audio.modality = {false, false};
  auto pf = init_params<double>(full, 8);
  auto pa = init_params<double>(audio, 9);
  for (int i = 1; i <= 5; ++i) {
    const auto n = "enc" + std::to_string(i);
    pa[n + ".w"] = pf[n + ".w"];
    pa[n + ".b"] = pf[n + ".b"];
  }
  for (int i = 1; i <= 5; ++i) {
    const auto n = "dec" + std::to_string(i);
    auto& wf = pf[n + ".w"];
    auto& wa = pa[n + ".w"];
    const std::int64_t d = full.decoder_input_width(i), per = wf.numel() / wf.dim(0);
    // full rows: [features d | attention 98 | skip]; audio rows: [features d | skip]
    for (std::int64_t r = 0; r < wf.dim(0); ++r) {
      const bool att = r >= d && r < d + 98;
      for (std::int64_t j = 0; j < per; ++j) {
        if (att) wf[r * per + j] = 0.0;
        else wa[(att ? 0 : r < d ? r : r - 98) * per + j] = wf[r * per + j];
      }
    }
    pa[n + ".b"] = pf[n + ".b"];
  }
  const auto s = make_sample(45.0, 2.0, 3);
  ad::Tape<double> tape(false);
  const auto gf = forward_graph(full, Binder<double>{tape, pf, nullptr, ""}, input_of(full, s));
  const auto ga = forward_graph(audio, Binder<double>{tape, pa, nullptr, ""}, input_of(audio, s));
  EXPECT_LT(max_abs_diff(gf.mask.value(), ga.mask.value()), 1e-12);
  // restoring attention weights changes the output
  const auto pf2 = init_params<double>(full, 8);
  const auto gf2 = forward_graph(full, Binder<double>{tape, pf2, nullptr, ""}, input_of(full, s));
  EXPECT_GT(max_abs_diff(gf2.mask.value(), ga.mask.value()), 1e-6);
}

TEST(Forward, DeterministicAcrossRuns) {
  ModelConfig cfg;
  const auto s = make_sample(-60.0, 3.0, 4);
  std::vector<Tensor<float>> masks;
  for (int r = 0; r < 2; ++r) {
    const auto model = Model<float>::create(cfg, 99);
    ad::Tape<float> tape(false);
    masks.push_back(forward_graph(cfg, Binder<float>{tape, model.params, nullptr, ""},
                                  make_input<float>(cfg, signal::stft(s.mono), &s.frame, &s.depth))
                        .mask.value());
  }
  EXPECT_EQ(masks[0], masks[1]);
}

TEST(Forward, AttentionRecords) {
  ModelConfig cfg;
  const auto model = Model<double>::create(cfg, 4);
  const auto s = make_sample(30.0, 2.0, 5);
  const auto p = predict(model, s.mono, &s.frame, &s.depth, {.record_attention = true});
  ASSERT_EQ(p.attention.size(), 10u);
  const std::vector<std::int64_t> t{2, 4, 8, 16, 32};
  for (std::size_t k = 0; k < 10; ++k) {
    EXPECT_EQ(p.attention[k].layer, static_cast<int>(k / 2) + 1);
    EXPECT_EQ(p.attention[k].map.dim(0), 49);
    EXPECT_EQ(p.attention[k].t, t[k / 2]);
  }
}

TEST(Config, JsonRoundTripAndValidation) {
  ModelConfig c;
  c.modality = {true, false};
  c.depth_input = DepthInput::Rgb;
  ModelConfig back;
  apply_json(back, to_json(c));
  EXPECT_EQ(back, c);
  EXPECT_THROW(apply_json(back, json::parse(R"({"widths": [1]})")), ValidationError);
  ModelConfig bad;
  bad.encoder_widths.back() = 32;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = {};
  bad.time_multiple = 16;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = {};
  bad.decoder_widths.pop_back();
  EXPECT_THROW(bad.validate(), ConfigError);
  const auto ps = init_params<float>(ModelConfig{}, 1);
  EXPECT_EQ(ps.scalar_count("image."), ps.scalar_count("depth."));
}

TEST(FullModel, GradientCheck200Coordinates) {
  ModelConfig cfg;
  auto ps = init_params<double>(cfg, 21);
  // tower gradients at the 0.02 init sit below finite-difference resolution
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& n = ps.names()[i];
    if ((n.starts_with("image.") || n.starts_with("depth.")) && (n.ends_with(".w") || n.ends_with("pos")))
      for (auto& v : ps.at(i).vec()) v *= 5.0;
  }
  const auto s = make_sample(40.0, 1.5, 6);
  const auto in = input_of(cfg, s);
  const auto yl = signal::stft(signal::Waveform::mono(16000, s.stereo.left())).planes;
  const auto yr = signal::stft(signal::Waveform::mono(16000, s.stereo.right())).planes;
  const training::Probe probe = [&](ad::Tape<double>& tape, const ParamStore<double>& p, ParamStore<double>* g) {
    return training::binaural_loss(forward_graph(cfg, Binder<double>{tape, p, g, ""}, in), yl, yr);
  };
  std::size_t checked = 0;
  double worst = 0.0;
  std::uint64_t seed = 30;
  for (const auto* group : {"enc", "dec", "align.", "image.", "depth."}) {
    const auto res = training::grad_check_random(ps, probe, 40, seed++, {group}, 5e-4,
                                                 [](const std::string& n, std::int64_t k) {
                                                   return !(n.ends_with("attn.qkv.b") && k >= 32 && k < 64);
                                                 });
    EXPECT_EQ(res.checked, 40u) << group;
    EXPECT_TRUE(res.non_finite.empty());
    EXPECT_LT(res.max_rel_error, 1e-4) << group << " " << res.worst;
    checked += res.checked;
    worst = std::max(worst, res.max_rel_error);
  }
  EXPECT_GE(checked, 200u);
}
