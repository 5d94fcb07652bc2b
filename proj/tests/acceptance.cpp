// End-to-end acceptance run: one PASS/FAIL line per criterion.
// Usage: acceptance <cli-binary> <work-dir> [criteria, e.g. 1,2,6]

#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <set>
#include <sstream>

#include "binaural/evaluation/ablation.hpp"
#include "binaural/evaluation/attention_export.hpp"

using namespace binaural;
namespace fs = std::filesystem;
using clk = std::chrono::steady_clock;
using json = nlohmann::json;

namespace {

// pinned tolerances and budgets
constexpr double kVerifyBudgetSeconds = 300.0;
constexpr double kMirrorTol = 1e-6;
constexpr double kStftRatio = 0.75;
constexpr double kEnvRatio = 0.90;
constexpr std::uint64_t kDataSeed = 7;
constexpr std::uint64_t kTrainSeed = 7;
constexpr int kAblationSeeds = 3;
constexpr std::int64_t kAblationSteps = 1000;
constexpr int kComScenes = 20;

struct Line {
  int id;
  bool pass;
  std::string text;
};

std::vector<Line> lines;

void report(int id, bool pass, const std::string& text, double seconds) {
  char buf[64];
  std::snprintf(buf, sizeof buf, " (%.0fs)", seconds);
  lines.push_back({id, pass, text + buf});
  std::printf("%s [%d] %s%s\n", pass ? "PASS" : "FAIL", id, text.c_str(), buf);
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double since(clk::time_point t0) { return std::chrono::duration<double>(clk::now() - t0).count(); }

std::pair<int, std::string> shell(const std::string& cmd) {
  FILE* p = ::popen((cmd + " 2>&1").c_str(), "r");
  if (!p) return {-1, "popen failed"};
  std::string out;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), p)) out += buf.data();
  const int st = ::pclose(p);
  return {WIFEXITED(st) ? WEXITSTATUS(st) : -1, out};
}

std::string read_bytes(const fs::path& p) { return scenegen::read_text(p); }

training::LogSink echo(const std::string& tag) {
  return [tag](const training::LogRecord& r) {
    if (r.val_stft)
      std::fprintf(stderr, "  %s step %lld loss %.2f val_stft %.4f val_env %.4f\n", tag.c_str(),
                   static_cast<long long>(r.step), r.loss, *r.val_stft, *r.val_env);
  };
}

struct Bench {
  fs::path dir;
  scenegen::DatasetManifest manifest;
  audionet::ModelConfig model;
  training::TrainConfig train;
  std::optional<training::TrainData> data;
  std::vector<training::Example> test;
  std::string dataset;
  std::optional<evaluation::EvalReport> baseline;
};

Bench& bench(const fs::path& work) {
  static Bench b;
  if (b.data) return b;
  b.dir = work;
  scenegen::GeneratorConfig g;
  g.min_sources = 1;
  g.max_sources = 2;
  const auto t0 = clk::now();
  fs::remove_all(work / "data");
  b.manifest = scenegen::make_dataset(g, work / "data", {1000, 100, 200}, kDataSeed);
  b.train.seed = kTrainSeed;
  b.data = training::load_train_data(b.manifest, b.train);
  b.test = training::load_split(b.manifest, "test");
  b.dataset = evaluation::dataset_id(b.manifest, "test");
  std::fprintf(stderr, "  dataset: %zu train, %zu val, %zu test (%.0fs)\n", b.data->train.size(), b.data->val.size(),
               b.test.size(), since(t0));
  return b;
}

void criterion1(const std::string& cli) {
  const auto t0 = clk::now();
  const auto [code, out] = shell(cli + " verify");
  const double s = since(t0);
  std::fputs(out.c_str(), stderr);
  std::istringstream in(out);
  int failed = 0, checks = 0;
  for (std::string l; std::getline(in, l);) {
    checks += l.starts_with("PASS ") || l.starts_with("FAIL ");
    failed += l.starts_with("FAIL ");
  }
  report(1, code == 0 && failed == 0 && checks > 0 && s < kVerifyBudgetSeconds,
         fmt("verify: %d checks, %d failed, exit %d, %.1fs (budget %.0fs)", checks, failed, code, s, kVerifyBudgetSeconds), s);
}

void criterion2() {
  const auto t0 = clk::now();
  scenegen::GeneratorConfig g;
  double worst = 0.0;
  bool exact = true;
  for (int i = 0; i < 100; ++i) {
    auto sc = scenegen::draw_scene(g, derive_seed(0xACCE, static_cast<std::uint64_t>(i)));
    const auto a = scenegen::render_binaural(sc), b = scenegen::render_binaural(sc.mirrored());
    for (std::size_t k = 0; k < a.num_samples(); ++k) {
      worst = std::max({worst, std::abs(a.left()[k] - b.right()[k]), std::abs(a.right()[k] - b.left()[k])});
    }
    for (auto& s : sc.sources) s.azimuth = 0.0;
    const auto c = scenegen::render_binaural(sc);
    exact = exact && std::equal(c.left().begin(), c.left().end(), c.right().begin());
  }
  report(2, worst <= kMirrorTol && exact,
         fmt("mirror equivariance on 100 scenes: max |diff| %.3e (tol %.0e); azimuth-0 channels identical: %s", worst,
             kMirrorTol, exact ? "yes" : "no"),
         since(t0));
}

struct FullRun {
  training::TrainResult result;
  evaluation::EvalReport report;
  double seconds = 0.0;
};

FullRun train_full(Bench& b, const fs::path& out) {
  const auto t0 = clk::now();
  fs::remove_all(out);
  FullRun r{training::train(b.model, b.train, *b.data, out, nullptr, echo(out.filename().string())), {}, 0.0};
  r.report = evaluation::evaluate(r.result.checkpoint.as_model(), b.test, b.dataset, "full/seed7", kTrainSeed);
  r.report.baseline = b.baseline->mean;
  scenegen::write_text(out / "eval.json", to_json(r.report).dump(2) + "\n");
  r.seconds = since(t0);
  return r;
}

std::optional<FullRun> first_run;

void criterion3(const fs::path& work) {
  auto& b = bench(work);
  const auto t0 = clk::now();
  b.baseline = evaluation::baseline_zero_mask(b.test, b.dataset, kTrainSeed, b.model);
  std::fprintf(stderr, "  zero-mask baseline: STFT %.4f ENV %.4f\n", b.baseline->mean.stft, b.baseline->mean.env);
  first_run = train_full(b, work / "run_a");
  const auto& m = first_run->report.mean;
  const double rs = m.stft / b.baseline->mean.stft, re = m.env / b.baseline->mean.env;
  report(3, rs <= kStftRatio && re <= kEnvRatio,
         fmt("learning benchmark (%lld steps, %s): STFT %.4f / baseline %.4f = %.3f (<= %.2f); ENV %.4f / %.4f = %.3f "
             "(<= %.2f); training %.1f min",
             static_cast<long long>(b.train.steps), fusion::to_string(b.model.modality).c_str(), m.stft,
             b.baseline->mean.stft, rs, kStftRatio, m.env, b.baseline->mean.env, re, kEnvRatio, first_run->seconds / 60.0),
         since(t0));
}

void criterion4(const fs::path& work) {
  auto& b = bench(work);
  const auto t0 = clk::now();
  auto tc = b.train;
  tc.steps = kAblationSteps;
  std::vector<std::uint64_t> seeds;
  for (int k = 0; k < kAblationSeeds; ++k) seeds.push_back(kTrainSeed + static_cast<std::uint64_t>(k));
  fs::remove_all(work / "ablation");
  const auto r = evaluation::run_ablation(b.model, tc, *b.data, b.test, seeds, b.dataset, work / "ablation",
                                          [](const std::string& mod, std::uint64_t seed, const training::LogRecord& rec) {
                                            if (rec.val_stft && rec.step % 500 == 0)
                                              std::fprintf(stderr, "  %s/seed%llu step %lld val_stft %.4f\n", mod.c_str(),
                                                           static_cast<unsigned long long>(seed),
                                                           static_cast<long long>(rec.step), *rec.val_stft);
                                          });
  const auto table = evaluation::ablation_table(r);
  scenegen::write_text(work / "ablation" / "ablation.txt", table);
  scenegen::write_text(work / "ablation" / "ablation.json", to_json(r).dump(2) + "\n");
  std::fputs(table.c_str(), stderr);
  const double audio = r.rows[0].median.stft;
  bool ok = true;
  std::string detail;
  for (std::size_t i = 1; i < r.rows.size(); ++i) {
    ok = ok && audio >= r.rows[i].median.stft;
    detail += fmt("; %s %.4f", r.rows[i].modality.c_str(), r.rows[i].median.stft);
  }
  report(4, ok,
         fmt("ablation median STFT over %d seeds (%lld steps): audio %.4f", kAblationSeeds,
             static_cast<long long>(kAblationSteps), audio) +
             detail + " (audio must be >= each)",
         since(t0));
}

void criterion5(const fs::path& work) {
  auto& b = bench(work);
  const auto t0 = clk::now();
  if (!first_run) {
    b.baseline = evaluation::baseline_zero_mask(b.test, b.dataset, kTrainSeed, b.model);
    first_run = train_full(b, work / "run_a");
  }
  const auto second = train_full(b, work / "run_b");
  const bool same_ckpt = read_bytes(work / "run_a" / "final.bin") == read_bytes(work / "run_b" / "final.bin");
  const bool same_report = first_run->report == second.report;
  const bool same_json = read_bytes(work / "run_a" / "eval.json") == read_bytes(work / "run_b" / "eval.json");
  report(5, same_ckpt && same_report && same_json,
         fmt("repeat run: checkpoint bytes %s, EvalReport %s, report JSON %s", same_ckpt ? "identical" : "DIFFER",
             same_report ? "equal" : "DIFFERS", same_json ? "identical" : "DIFFERS"),
         since(t0));
}

void criterion6(const fs::path& work, const std::string& cli) {
  auto& b = bench(work);
  const auto t0 = clk::now();
  fs::path ckpt = work / "run_a" / "final.bin";
  if (!fs::exists(ckpt)) {
    // standalone run of this criterion: a short full-model training
    auto tc = b.train;
    tc.steps = kAblationSteps;
    fs::remove_all(work / "run_short");
    training::train(b.model, tc, *b.data, work / "run_short", nullptr, echo("run_short"));
    ckpt = work / "run_short" / "final.bin";
  }
  const auto ck = training::load_checkpoint(ckpt);
  const auto model = ck.as_model();
  // single-source test scenes, in id order
  std::vector<std::pair<const training::Example*, double>> singles;
  for (const auto& x : b.test) {
    const auto sc = scenegen::scene_from_json(json::parse(scenegen::read_text(b.manifest.root / b.manifest.find(x.id).scene)));
    if (sc.sources.size() == 1) singles.emplace_back(&x, sc.sources[0].azimuth);
    if (static_cast<int>(singles.size()) == kComScenes) break;
  }
  const auto out = work / "attention";
  fs::remove_all(out);
  const auto [code, text] = shell(cli + " export-attention --ckpt " + ckpt.string() + " --data " + (work / "data").string() +
                                  " --sample " + singles.front().first->id + " --out " + (out / singles.front().first->id).string());
  int heat = 0, over = 0;
  if (fs::exists(out / singles.front().first->id))
    for (const auto& e : fs::directory_iterator(out / singles.front().first->id)) {
      const auto n = e.path().filename().string();
      heat += n.ends_with("_heatmap.png");
      over += n.ends_with("_overlay.png");
    }
  // centre-of-mass diagnostic, reported only
  std::string log = "sample,azimuth,layer,modality,com_x\n";
  int agree = 0, opposite = 0, sided = 0;
  for (const auto& [x, az] : singles) {
    const auto r = evaluation::export_attention(model, *x, out / x->id);
    double mean = 0.0;
    for (const auto& m : r.maps) {
      log += fmt("%s,%.2f,%d,%s,%.4f\n", x->id.c_str(), az, m.layer, fusion::to_string(m.modality).c_str(), m.com_x);
      mean += m.com_x / static_cast<double>(r.maps.size());
    }
    std::fprintf(stderr, "  %s azimuth %+6.1f  mean com_x %.3f\n", x->id.c_str(), az, mean);
    if (std::abs(az) > 1e-9) {
      ++sided;
      agree += (az > 0 && mean > 0.5) || (az < 0 && mean < 0.5);
      opposite += (az > 0 && mean < 0.5) || (az < 0 && mean > 0.5);
    }
  }
  scenegen::write_text(out / "center_of_mass.csv", log);
  report(6, code == 0 && heat == 10 && over == 10 && static_cast<int>(singles.size()) == kComScenes,
         fmt("export-attention: %d heatmaps + %d overlays (exit %d); center-of-mass logged for %zu single-source scenes "
             "(com on the source side %d/%d, opposite side %d/%d; not thresholded)",
             heat, over, code, singles.size(), agree, sided, opposite, sided),
         since(t0));
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 3) {
    std::fprintf(stderr, "usage: %s <cli-binary> <work-dir> [criteria]\n", argv[0]);
    return 2;
  }
  const std::string cli = argv[1];
  const fs::path work = argv[2];
  std::set<int> want{1, 2, 3, 4, 5, 6};
  if (argc > 3) {
    want.clear();
    std::istringstream in(argv[3]);
    for (std::string t; std::getline(in, t, ',');) want.insert(std::stoi(t));
  }
  fs::create_directories(work);
  const auto run = [&](int id, auto fn) {
    if (!want.contains(id)) return;
    const auto t0 = clk::now();
    try {
      fn();
    } catch (const std::exception& e) {
      report(id, false, std::string("threw: ") + e.what(), since(t0));
    }
  };
  run(1, [&] { criterion1(cli); });
  run(2, [&] { criterion2(); });
  run(3, [&] { criterion3(work); });
  run(5, [&] { criterion5(work); });
  run(4, [&] { criterion4(work); });
  run(6, [&] { criterion6(work, cli); });
  std::printf("\nacceptance summary\n");
  int failed = 0;
  for (const auto& l : lines) {
    std::printf("%s [%d] %s\n", l.pass ? "PASS" : "FAIL", l.id, l.text.c_str());
    failed += !l.pass;
  }
  return failed == 0 ? 0 : 1;
}
