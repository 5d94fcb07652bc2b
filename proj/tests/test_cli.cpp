#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <map>

#include "binaural/scenegen/dataset.hpp"
#include "binaural/signal/waveform.hpp"

using namespace binaural;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(BINAURAL_CLI) + " " + args + " 2>&1";
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return {};
  Run r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), p)) r.out += buf.data();
  const int st = ::pclose(p);
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("binaural_cli_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = scenegen::read_text(e.path());
  return files;
}

/// Small dataset plus a two-step checkpoint shared by the inference tests.
struct Fixture {
  fs::path root, data, run;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture f;
    f.root = scratch("fixture");
    f.data = f.root / "data";
    f.run = f.root / "run";
    const auto g = run("gen-data -q --out " + f.data.string() + " --num-train 6 --num-val 2 --num-test 3 --seed 7");
    EXPECT_EQ(g.code, 0) << g.out;
    const auto t = run("train -q --data " + f.data.string() + " --out " + f.run.string() + " --steps 2 --batch 2 --seed 1");
    EXPECT_EQ(t.code, 0) << t.out;
    return f;
  }();
  return f;
}

}  // namespace

TEST(Cli, HelpForEverySubcommand) {
  for (const auto* sub : {"gen-data", "train", "eval", "ablate", "infer", "export-attention", "verify"}) {
    const auto r = run(std::string(sub) + " --help");
    EXPECT_EQ(r.code, 0) << sub;
    EXPECT_NE(r.out.find("--"), std::string::npos) << sub;
  }
  EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("no-such-command").code, 1);
  EXPECT_EQ(run("train --out x").code, 1);
  const auto r = run("train --data /nonexistent/dir --out x");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("--data"), std::string::npos) << r.out;
}

TEST(Cli, UnknownConfigKeysRejected) {
  const auto dir = scratch("keys");
  auto r = run("gen-data -q --out " + (dir / "a").string() + " --num-train 1 --set generator.max_source=2");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("max_source"), std::string::npos) << r.out;
  scenegen::write_text(dir / "bad.json", R"({"trian": {"lr": 0.1}})");
  r = run("gen-data -q --out " + (dir / "b").string() + " --config " + (dir / "bad.json").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("trian"), std::string::npos) << r.out;
  EXPECT_FALSE(fs::exists(dir / "a" / "manifest.json"));
}

TEST(Cli, GenDataTwiceGivesIdenticalTrees) {
  const auto dir = scratch("gen");
  for (const auto* d : {"a", "b"}) {
    const auto r = run("gen-data -q --out " + (dir / d).string() + " --num-train 10 --seed 7");
    ASSERT_EQ(r.code, 0) << r.out;
  }
  const auto a = tree(dir / "a"), b = tree(dir / "b");
  EXPECT_EQ(a.size(), b.size());
  EXPECT_TRUE(a == b);
  EXPECT_TRUE(a.contains("config.json"));
  EXPECT_TRUE(a.contains("manifest.json"));
}

TEST(Cli, TrainWritesLogCheckpointAndConfig) {
  const auto& f = fixture();
  EXPECT_TRUE(fs::exists(f.run / "final.bin"));
  EXPECT_TRUE(fs::exists(f.run / "config.json"));
  const auto log = scenegen::read_text(f.run / "train_log.jsonl");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 2);
  const auto cfg = json::parse(scenegen::read_text(f.run / "config.json"));
  EXPECT_EQ(cfg["train"]["steps"], 2);
  EXPECT_EQ(cfg["train"]["batch"], 2);
}

TEST(Cli, EchoedConfigReproducesCheckpoint) {
  const auto& f = fixture();
  const auto out = f.root / "rerun";
  const auto r = run("train -q --data " + f.data.string() + " --out " + out.string() + " --config " + (f.run / "config.json").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(scenegen::read_text(out / "final.bin"), scenegen::read_text(f.run / "final.bin"));
  EXPECT_EQ(scenegen::read_text(out / "config.json"), scenegen::read_text(f.run / "config.json"));
}

TEST(Cli, InferKeepsDurationAndSumsToInput) {
  const auto& f = fixture();
  const auto m = scenegen::load_manifest(f.data);
  const auto& e = m.samples.back();
  const auto mono_path = f.root / "mono.wav";
  const auto mono = scenegen::mono_mix(signal::load_wav(m.root / e.stereo));
  signal::save_wav(mono_path, mono);
  const auto out = f.root / "out.wav";
  const auto r = run("infer --ckpt " + (f.run / "final.bin").string() + " --audio " + mono_path.string() + " --frame " +
                     (m.root / e.frame).string() + " --depth " + (m.root / e.depth).string() + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto st = signal::load_wav(out);
  ASSERT_EQ(st.num_channels(), 2u);
  ASSERT_EQ(st.num_samples(), mono.num_samples());
  double worst = 0.0;
  for (std::size_t i = 0; i < st.num_samples(); ++i)
    worst = std::max(worst, std::abs(st.left()[i] + st.right()[i] - mono.channels[0][i]));
  EXPECT_LE(worst, 1e-4);
  EXPECT_TRUE(fs::exists(f.root / "out.config.json"));
}

TEST(Cli, InferRejectsModalityMismatchAndStereoInput) {
  const auto& f = fixture();
  const auto m = scenegen::load_manifest(f.data);
  const auto& e = m.samples.back();
  const std::string common = " --frame " + (m.root / e.frame).string() + " --depth " + (m.root / e.depth).string() +
                             " --out " + (f.root / "x.wav").string() + " --ckpt " + (f.run / "final.bin").string();
  auto r = run("infer --audio " + (m.root / e.stereo).string() + common);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("--audio"), std::string::npos) << r.out;
  signal::save_wav(f.root / "m.wav", scenegen::mono_mix(signal::load_wav(m.root / e.stereo)));
  r = run("infer --audio " + (f.root / "m.wav").string() + " --modality audio+image" + common);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("--modality"), std::string::npos) << r.out;
}

TEST(Cli, EvalWritesReportWithBaseline) {
  const auto& f = fixture();
  const auto rep = f.root / "reports" / "eval.json";
  const auto r = run("eval --ckpt " + (f.run / "final.bin").string() + " --data " + f.data.string() + " --report " + rep.string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = json::parse(scenegen::read_text(rep));
  EXPECT_EQ(j["samples"].size(), 3u);
  EXPECT_TRUE(j.contains("baseline"));
  EXPECT_EQ(j["modality"], "audio+image+depth");
  EXPECT_TRUE(fs::exists(f.root / "reports" / "eval.config.json"));
}

TEST(Cli, ExportAttentionWritesTwentyPngs) {
  const auto& f = fixture();
  const auto out = f.root / "att";
  const auto id = scenegen::load_manifest(f.data).samples.back().id;
  const auto r = run("export-attention --ckpt " + (f.run / "final.bin").string() + " --data " + f.data.string() +
                     " --sample " + id + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.out;
  int pngs = 0;
  for (const auto& e : fs::directory_iterator(out)) pngs += e.path().extension() == ".png";
  EXPECT_EQ(pngs, 20);
  EXPECT_NE(r.out.find("center-of-mass"), std::string::npos);
  const auto bad = run("export-attention --ckpt " + (f.run / "final.bin").string() + " --data " + f.data.string() +
                       " --sample test-99999 --out " + out.string());
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.out.find("test-99999"), std::string::npos) << bad.out;
}

TEST(Cli, CorruptCheckpointIsRuntimeFailure) {
  const auto& f = fixture();
  const auto p = f.root / "corrupt.bin";
  scenegen::write_text(p, "not a checkpoint");
  const auto r = run("eval --ckpt " + p.string() + " --data " + f.data.string() + " --report " + (f.root / "r.json").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("corrupt.bin"), std::string::npos) << r.out;
}

TEST(Cli, VerifyQuickPasses) {
  const auto r = run("verify --quick");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos) << r.out;
}
