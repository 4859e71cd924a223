// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Heavy criteria (synthetic convergence) run at desk scale and
// report their measured wall time.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <algorithm>
#include <functional>

#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <string>
#include <vector>

#include "dta/gradcheck.hpp"
#include "dta/loss.hpp"
#include "dta/metrics.hpp"
#include "dta/model.hpp"
#include "dta/synthetic.hpp"
#include "dta/trainer.hpp"

using namespace dta;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;
std::string g_cli_path;
fs::path g_work;

double elapsed(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(const std::string& name, bool ok, const std::string& detail) {
  std::printf("[%s] %s%s%s\n", ok ? "PASS" : "FAIL", name.c_str(),
              detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

std::vector<uint8_t> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return {};
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), {});
}

// streaming byte comparison; checkpoints can be large
bool files_equal(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  std::vector<char> ba(1 << 20), bb(1 << 20);
  for (;;) {
    fa.read(ba.data(), static_cast<std::streamsize>(ba.size()));
    fb.read(bb.data(), static_cast<std::streamsize>(bb.size()));
    if (fa.gcount() != fb.gcount()) return false;
    if (!std::equal(ba.begin(), ba.begin() + fa.gcount(), bb.begin())) return false;
    if (fa.eof() && fb.eof()) return true;
    if (fa.eof() != fb.eof()) return false;
  }
}

ModelVariantConfig mini_config(bool multiclass = false) {
  ModelVariantConfig cfg;
  cfg.base_width = 8;
  cfg.image_size = 32;
  cfg.lesion_classes = multiclass ? 3 : 1;
  cfg.transformer.layers = 4;
  cfg.transformer.heads = 2;
  cfg.transformer.embed_dim = 16;
  cfg.transformer.mlp_dim = 32;
  cfg.transformer.tap_layers = {1, 2, 3, 4};
  return cfg;
}

// ---- criterion 1: gradient suite --------------------------------------------

void criterion_gradients() {
  auto t0 = Clock::now();
  auto results = run_gradcheck_suite(2024);
  bool ok = true;
  double worst = 0;
  std::string worst_name;
  for (const auto& r : results) {
    ok = ok && r.ok;
    if (r.max_rel_err > worst) {
      worst = r.max_rel_err;
      worst_name = r.name;
    }
  }

  // whole-model probe: ten informative parameter coordinates of a tiny f64
  // model against central differences
  ModelVariantConfig cfg;
  cfg.base_width = 4;
  cfg.image_size = 32;
  cfg.transformer.layers = 4;
  cfg.transformer.heads = 2;
  cfg.transformer.embed_dim = 8;
  cfg.transformer.mlp_dim = 16;
  cfg.transformer.tap_layers = {1, 2, 3, 4};
  DTrAttUnet<double> model(cfg, 2025);
  RngState rng(77);
  Tensor<double> x({2, 3, 32, 32});
  for (double& v : x.mutable_data()) v = rng.u01();
  IntMask lt({2, 32, 32}), ot({2, 32, 32});
  for (int32_t& v : lt.v) v = rng.u01() < 0.15 ? 1 : 0;
  for (int32_t& v : ot.v) v = rng.u01() < 0.4 ? 1 : 0;
  LossWeights w;
  auto loss_fn = [&] {
    auto out = model.forward(x, true);
    return hybrid_loss(out.lesion_logits, out.organ_logits, lt, ot, w);
  };
  model.registry().zero_grad();
  backward(loss_fn());

  struct Coord {
    Tensor<double> t;
    int64_t idx;
    double analytic;
  };
  std::vector<Coord> coords;
  {
    std::vector<Coord> informative;
    for (const auto& e : model.registry().entries()) {
      if (!e.is_param || !e.tensor.has_grad()) continue;
      Tensor<double> t = e.tensor;
      auto g = t.grad();
      for (int64_t i = 0; i < t.numel(); ++i)
        if (std::abs(g[i]) >= 1e-4) informative.push_back({t, i, g[i]});
    }
    RngState pick(31);
    for (int k = 0; k < 10 && !informative.empty(); ++k) {
      size_t at =
          static_cast<size_t>(pick.uniform_int(static_cast<int64_t>(informative.size())));
      coords.push_back(informative[at]);
      informative.erase(informative.begin() + static_cast<ptrdiff_t>(at));
    }
  }
  double probe_worst = 0;
  {
    NoGradGuard ng;
    double delta = 1e-5;
    for (auto& c : coords) {
      auto vals = c.t.mutable_data();
      double orig = vals[c.idx];
      vals[c.idx] = orig + delta;
      double fp = loss_fn().item();
      vals[c.idx] = orig - delta;
      double fm = loss_fn().item();
      vals[c.idx] = orig;
      double numeric = (fp - fm) / (2 * delta);
      double rel = std::abs(c.analytic - numeric) /
                   std::max({std::abs(c.analytic), std::abs(numeric), 1e-8});
      probe_worst = std::max(probe_worst, rel);
    }
  }
  double secs = elapsed(t0);
  char detail[256];
  std::snprintf(detail, sizeof detail,
                "worst op %s %.2e (<=1e-4), model probe %.2e over %zu coords (<=1e-3), "
                "%.0fs (<=120s)",
                worst_name.c_str(), worst, probe_worst, coords.size(), secs);
  report("gradient suite",
         ok && probe_worst <= 1e-3 && coords.size() == 10 && secs <= 120.0, detail);
}

// ---- criterion 2: shape/structure suite --------------------------------------

void criterion_shapes() {
  bool ok = true;
  std::string detail;
  for (int64_t size : {int64_t(32), int64_t(64), int64_t(224)}) {
    ModelVariantConfig cfg;  // default transformer: L=12, K=768, S=16
    cfg.base_width = 16;
    cfg.image_size = size;
    DTrAttUnet<float> model(cfg, 9);
    NoGradGuard ng;
    RngState rng(static_cast<uint64_t>(size));
    Tensor<float> x({1, 3, size, size});
    for (float& v : x.mutable_data()) v = static_cast<float>(rng.u01());

    auto taps = model.transformer()->encode_multilevel(x);
    if (size == 224) {
      ok = ok && model.transformer()->grid_h() * model.transformer()->grid_w() == 196;
      for (const auto& t : taps) ok = ok && t.dims() == Shape{1, 768, 14, 14};
    }
    auto f = model.fusion()->forward(x, taps, true);
    auto v = f.as_vector();
    const int64_t widths[5] = {16, 32, 64, 128, 256};
    for (int i = 0; i < 5; ++i)
      ok = ok &&
           v[static_cast<size_t>(i)].dims() == Shape{1, widths[i], size >> i, size >> i};
    auto out = model.lesion_decoder()->forward(f, true);
    ok = ok && out.dims() == Shape{1, 1, size, size};
    auto organ = model.organ_decoder()->forward(f, true);
    ok = ok && organ.dims() == Shape{1, 1, size, size};
    detail += std::to_string(size) + (ok ? " ok; " : " FAIL; ");
  }
  report("shape/structure suite", ok,
         detail + "taps 768x14x14 and N=196 at 224, ladder H/2^i, full-res heads");
}

// ---- criterion 3: metric oracle suite ----------------------------------------

struct BruteCounts {
  int64_t tp = 0, fp = 0, fn = 0;
};

BruteCounts brute_recount(const std::vector<int32_t>& pred, const std::vector<int32_t>& gt,
                          int32_t positive) {
  BruteCounts c;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == positive && gt[i] == positive) c.tp++;
    if (pred[i] == positive && gt[i] != positive) c.fp++;
    if (pred[i] != positive && gt[i] == positive) c.fn++;
  }
  return c;
}

double brute_hd95(const std::vector<int32_t>& g, const std::vector<int32_t>& m, int64_t h,
                  int64_t w, int32_t positive, bool* defined) {
  std::vector<std::pair<double, double>> G, M;
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c) {
      if (g[static_cast<size_t>(r * w + c)] == positive) G.emplace_back(r, c);
      if (m[static_cast<size_t>(r * w + c)] == positive) M.emplace_back(r, c);
    }
  if (G.empty() && M.empty()) {
    *defined = true;
    return 0.0;
  }
  if (G.empty() || M.empty()) {
    *defined = false;
    return 0.0;
  }
  std::vector<double> pool;
  for (const auto& a : G) {
    double best = 1e300;
    for (const auto& b : M)
      best = std::min(best, std::hypot(a.first - b.first, a.second - b.second));
    pool.push_back(best);
  }
  for (const auto& b : M) {
    double best = 1e300;
    for (const auto& a : G)
      best = std::min(best, std::hypot(a.first - b.first, a.second - b.second));
    pool.push_back(best);
  }
  std::sort(pool.begin(), pool.end());
  double idx = 0.95 * static_cast<double>(pool.size() - 1);
  size_t lo = static_cast<size_t>(idx);
  double frac = idx - static_cast<double>(lo);
  *defined = true;
  return lo + 1 < pool.size() ? pool[lo] + frac * (pool[lo + 1] - pool[lo]) : pool[lo];
}

void criterion_metric_oracles() {
  auto t0 = Clock::now();
  RngState rng(515);
  bool ok = true;
  int pairs = 0;
  double worst_hd = 0;
  for (int rep = 0; rep < 120; ++rep) {
    IntMask gt({16, 16}), pr({16, 16});
    double bias = 0.1 + 0.4 * rng.u01();
    for (int32_t& v : gt.v)
      v = rng.u01() < bias ? static_cast<int32_t>(1 + rng.uniform_int(2)) : 0;
    for (int32_t& v : pr.v)
      v = rng.u01() < bias ? static_cast<int32_t>(1 + rng.uniform_int(2)) : 0;
    ++pairs;
    for (int32_t cls : {1, 2}) {
      ConfusionCounts c = confusion(pr.v, gt.v, cls);
      BruteCounts b = brute_recount(pr.v, gt.v, cls);
      ok = ok && c.tp == b.tp && c.fp == b.fp && c.fn == b.fn;
      double f1_ref = 2 * b.tp + b.fp + b.fn
                          ? 100.0 * 2.0 * b.tp / static_cast<double>(2 * b.tp + b.fp + b.fn)
                          : 0.0;
      double iou_ref =
          b.tp + b.fp + b.fn ? 100.0 * b.tp / static_cast<double>(b.tp + b.fp + b.fn) : 0.0;
      ok = ok && f1_percent(c) == f1_ref && iou_percent(c) == iou_ref;
      double dice_ref = 2 * b.tp + b.fp + b.fn
                            ? 100.0 * 2.0 * b.tp / static_cast<double>(2 * b.tp + b.fp + b.fn)
                            : 100.0;
      ok = ok && dice_macro_percent({c}) == dice_ref;
      bool bd = false;
      double bv = brute_hd95(gt.v, pr.v, 16, 16, cls, &bd);
      Hd95 got = hd95(gt.v, pr.v, 16, 16, cls);
      ok = ok && got.defined == bd;
      if (bd) {
        worst_hd = std::max(worst_hd, std::abs(got.value - bv));
        ok = ok && std::abs(got.value - bv) <= 1e-9;
      }
    }
  }
  double secs = elapsed(t0);
  char detail[160];
  std::snprintf(detail, sizeof detail,
                "%d pairs, counts exact, hd95 max |diff| %.2e (<=1e-9), %.1fs (<=30s)", pairs,
                worst_hd, secs);
  report("metric oracle suite", ok && pairs >= 100 && secs <= 30.0, detail);
}

// ---- criterion 4: analytic parameter counts -----------------------------------

void criterion_param_counts() {
  ParamRegistry<float> reg(1);
  reg.set_skip_init(true);
  Scope<float> root{&reg, ""};
  TransformerLayer<float> layer(root.sub("layers.0"), 768, 12, 3072);
  int64_t counted = reg.count_params("layers.0.");
  // independent closed-form recount
  int64_t K = 768, Km = 3072;
  int64_t expected = 3 * (K * K + K) + (K * K + K) + (K * Km + Km) + (Km * K + K) + 4 * K;
  bool ok = counted == 7087872 && expected == 7087872;
  char detail[120];
  std::snprintf(detail, sizeof detail, "registered %lld, closed form %lld, target 7087872",
                static_cast<long long>(counted), static_cast<long long>(expected));
  report("analytic parameter count", ok, detail);
}

// ---- criterion 5: ablation contracts ------------------------------------------

void criterion_ablation() {
  bool ok = true;
  std::string detail;
  SynthConfig scfg;
  scfg.count = 12;
  scfg.size = 32;
  scfg.seed = 606;
  scfg.folds = 4;
  std::string mpath = generate_synthetic(scfg, (g_work / "abl_data").string());
  Manifest man = load_manifest(mpath);
  Dataset train = Dataset::load_split(man, 0, false);
  AugmentationConfig aug;

  for (const char* name :
       {"unet", "attunet", "dtrunet", "dattunet", "trattunet", "dtrattunet"}) {
    ModelVariantConfig cfg = mini_config();
    ModelVariantConfig flags = ModelVariantConfig::for_variant(name);
    cfg.ag = flags.ag;
    cfg.dd = flags.dd;
    cfg.trec = flags.trec;
    DTrAttUnet<float> model(cfg, 707);
    if (!cfg.dd && model.registry().count_params("decoder.organ.") != 0) ok = false;
    if (!cfg.trec && model.registry().count_params("transformer.") != 0) ok = false;
    auto batches = make_epoch_batches(train, 4, true, 1, 707, aug, 3);
    Adam opt(model.registry(), AdamConfig{});
    auto out = model.forward(batches[0].images, true);
    auto loss = hybrid_loss(out.lesion_logits, out.organ_logits, batches[0].lesion,
                            batches[0].organ, LossWeights{});
    bool finite = std::isfinite(static_cast<double>(loss.item()));
    model.registry().zero_grad();
    backward(loss);
    opt.step();
    ok = ok && finite;
    detail += std::string(name) + (finite ? " ok; " : " diverged; ");
  }

  // gamma = 0 freezes the organ decoder across five optimization steps
  ModelVariantConfig cfg = mini_config();
  DTrAttUnet<float> model(cfg, 808);
  std::vector<float> before;
  for (const auto& e : model.registry().entries())
    if (e.is_param && e.name.rfind("decoder.organ.", 0) == 0)
      before.insert(before.end(), e.tensor.data().begin(), e.tensor.data().end());
  Adam opt(model.registry(), AdamConfig{});
  LossWeights w;
  w.gamma = 0.0;
  for (int64_t epoch = 1; epoch <= 5; ++epoch) {
    auto batches = make_epoch_batches(train, 4, true, epoch, 808, aug, 3);
    auto out = model.forward(batches[0].images, true);
    auto loss = hybrid_loss(out.lesion_logits, out.organ_logits, batches[0].lesion,
                            batches[0].organ, w);
    model.registry().zero_grad();
    backward(loss);
    opt.step();
  }
  std::vector<float> after;
  for (const auto& e : model.registry().entries())
    if (e.is_param && e.name.rfind("decoder.organ.", 0) == 0)
      after.insert(after.end(), e.tensor.data().begin(), e.tensor.data().end());
  bool frozen = before == after;
  ok = ok && frozen;
  report("ablation contracts", ok,
         detail + (frozen ? "organ frozen under gamma=0" : "organ moved under gamma=0"));
}

// ---- criterion 6: synthetic convergence ----------------------------------------

double parse_metric(const fs::path& metrics, const std::string& key) {
  std::ifstream in(metrics);
  std::string line;
  while (std::getline(in, line))
    if (line.rfind(key + "=", 0) == 0) return std::atof(line.c_str() + key.size() + 1);
  return -1.0;
}

// first and last train_loss values of a run log
std::pair<double, double> parse_loss_trend(const fs::path& log) {
  std::ifstream in(log);
  std::string line;
  double first = -1.0, last = -1.0;
  while (std::getline(in, line)) {
    auto pos = line.find("train_loss=");
    if (pos == std::string::npos) continue;
    double v = std::atof(line.c_str() + pos + 11);
    if (first < 0) first = v;
    last = v;
  }
  return {first, last};
}

// Desk-scale runs go through the CLI in child processes: that exercises the
// shipped entry point and returns each run's multi-GB footprint to the OS
// before the next one starts.
bool cli_train_eval(const std::string& variant, const std::string& data,
                    const fs::path& run_dir, double* lesion_dice, double* organ_dice,
                    std::pair<double, double>* trend) {
  std::string train = g_cli_path + " train --data " + data + " --out " + run_dir.string() +
                      " --variant " + variant +
                      " --base-width 16 --size 64 --epochs 30 --batch 8 --seed 42" +
                      " --fold 0 2>/dev/null";
  int rc = std::system(train.c_str());
  if (!WIFEXITED(rc) || WEXITSTATUS(rc) != 0) return false;
  std::string eval = g_cli_path + " eval --checkpoint " + (run_dir / "final.ckpt").string() +
                     " --data " + data + " --fold 0 --out " + (run_dir / "eval").string() +
                     " 2>/dev/null";
  rc = std::system(eval.c_str());
  if (!WIFEXITED(rc) || WEXITSTATUS(rc) != 0) return false;
  fs::path metrics = run_dir / "eval" / "metrics.txt";
  *lesion_dice = parse_metric(metrics, "lesion.mean.dice");
  if (organ_dice) *organ_dice = parse_metric(metrics, "organ.dice");
  *trend = parse_loss_trend(run_dir / "run.log");
  return true;
}

void criterion_convergence() {
  auto t0 = Clock::now();
  SynthConfig scfg;
  scfg.count = 250;
  scfg.size = 64;
  scfg.seed = 42;
  std::string mpath = generate_synthetic(scfg, (g_work / "conv_data").string());

  double lesion_dice = -1, organ_dice = -1;
  std::pair<double, double> trend{-1, -1};
  bool ran = cli_train_eval("dtrattunet", mpath, g_work / "conv_run", &lesion_dice,
                            &organ_dice, &trend);
  bool loss_fell = trend.second >= 0 && trend.second < trend.first;
  double dtrattunet_secs = elapsed(t0);

  auto t1 = Clock::now();
  double unet_dice = -1;
  std::pair<double, double> utrend{-1, -1};
  bool uran =
      cli_train_eval("unet", mpath, g_work / "conv_run_unet", &unet_dice, nullptr, &utrend);
  bool unet_finite = utrend.first >= 0 && std::isfinite(utrend.second);
  double unet_secs = elapsed(t1);

  char detail[300];
  std::snprintf(detail, sizeof detail,
                "dtrattunet lesion dice %.2f (>=90), organ dice %.2f (>=95), loss "
                "%0.4f->%0.4f, %.0fs; unet lesion dice %.2f (>=70), %.0fs",
                lesion_dice, organ_dice, trend.first, trend.second, dtrattunet_secs,
                unet_dice, unet_secs);
  report("synthetic convergence",
         ran && uran && lesion_dice >= 90.0 && organ_dice >= 95.0 && loss_fell &&
             unet_finite && unet_dice >= 70.0,
         detail);
}

// ---- criterion 7: determinism ---------------------------------------------------

void criterion_determinism() {
  SynthConfig scfg;
  scfg.count = 20;
  scfg.size = 32;
  scfg.seed = 909;
  scfg.folds = 4;
  std::string mpath = generate_synthetic(scfg, (g_work / "det_data").string());
  Manifest man = load_manifest(mpath);
  auto run = [&](const std::string& tag) {
    ModelVariantConfig cfg = mini_config();
    DTrAttUnet<float> model(cfg, 1234);
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 4;
    tc.seed = 1234;
    tc.out_dir = (g_work / ("det_" + tag)).string();
    TrainResult res = train_model(model, man, tc);
    Dataset val = Dataset::load_split(man, 0, true);
    return std::tuple(slurp(res.log_path), slurp(res.final_path), slurp(res.best_path),
                      evaluate_model(model, val).to_text(), res.final_path);
  };
  auto [log1, fin1, best1, rep1, path1] = run("a");
  auto [log2, fin2, best2, rep2, path2] = run("b");
  bool identical =
      !log1.empty() && log1 == log2 && fin1 == fin2 && best1 == best2 && rep1 == rep2;

  // checkpoint round trip reproduces evaluation bit-exactly
  LoadedModel lm = load_model_checkpoint(path1);
  Dataset val = Dataset::load_split(man, 0, true);
  std::string rep_loaded = evaluate_model(*lm.model, val).to_text();
  bool roundtrip = rep_loaded == rep1;

  // the same holds across separate CLI processes; the transformer-free
  // dual-decoder variant keeps these runs light (the CLI pins the published
  // transformer dimensions, so trec variants train the full-size path)
  auto cli_train = [&](const std::string& tag) {
    fs::path out = g_work / ("det_cli_" + tag);
    std::string cmd = g_cli_path + " train --data " + mpath + " --out " + out.string() +
                      " --variant dattunet --base-width 8 --size 32 --epochs 2" +
                      " --batch 4 --seed 77 2>/dev/null";
    int rc = std::system(cmd.c_str());
    return std::pair(WIFEXITED(rc) ? WEXITSTATUS(rc) : -1, out);
  };
  auto [rc1, out1] = cli_train("a");
  auto [rc2, out2] = cli_train("b");
  bool cli_identical = rc1 == 0 && rc2 == 0 &&
                       files_equal(out1 / "run.log", out2 / "run.log") &&
                       files_equal(out1 / "final.ckpt", out2 / "final.ckpt");

  // seeded data generation is byte-reproducible through the CLI too
  auto cli_gen = [&](const std::string& tag) {
    fs::path out = g_work / ("det_gen_" + tag);
    std::string cmd = g_cli_path + " generate-data --count 10 --size 32 --seed 7 --out " +
                      out.string() + " 2>/dev/null";
    if (std::system(cmd.c_str()) != 0) return std::vector<uint8_t>{};
    std::vector<uint8_t> all;
    std::vector<fs::path> files;
    for (auto& p : fs::recursive_directory_iterator(out))
      if (p.is_regular_file()) files.push_back(p.path());
    std::sort(files.begin(), files.end());
    for (auto& f : files) {
      auto rel = fs::relative(f, out).string();
      all.insert(all.end(), rel.begin(), rel.end());
      auto bytes = slurp(f);
      all.insert(all.end(), bytes.begin(), bytes.end());
    }
    return all;
  };
  bool gen_identical = cli_gen("a") == cli_gen("b");

  report("determinism", identical && roundtrip && cli_identical && gen_identical,
         std::string(identical ? "reruns byte-identical" : "rerun outputs differ") + "; " +
             (roundtrip ? "checkpoint round-trip eval bit-exact" : "round-trip eval differs") +
             "; " + (cli_identical ? "CLI reruns byte-identical" : "CLI reruns differ") +
             "; " + (gen_identical ? "generated trees byte-identical" : "generated trees differ"));
}

// ---- criterion 8: format conformance --------------------------------------------

void criterion_formats() {
  bool ok = true;
  fs::path dir = g_work / "formats";
  fs::create_directories(dir);

  // PGM masks round-trip losslessly
  ImageU8 mask;
  mask.w = 7;
  mask.h = 3;
  for (int i = 0; i < 21; ++i) mask.pix.push_back(static_cast<uint8_t>(i % 3));
  write_pgm((dir / "m.pgm").string(), mask);
  ImageU8 back = read_pgm((dir / "m.pgm").string());
  ok = ok && back.w == mask.w && back.h == mask.h && back.pix == mask.pix;

  // PPM payload layout
  std::vector<uint8_t> rgb = {255, 0, 0, 0, 255, 0, 0, 0, 255, 9, 9, 9};
  write_ppm((dir / "c.ppm").string(), 2, 2, rgb);
  auto ppm = slurp(dir / "c.ppm");
  std::string header = "P6\n2 2\n255\n";
  ok = ok && ppm.size() == header.size() + rgb.size() &&
       std::equal(rgb.begin(), rgb.end(), ppm.begin() + static_cast<ptrdiff_t>(header.size()));

  // checkpoint round trip
  CheckpointData data;
  data.tensors.push_back({"x", {2, 2}, {1.5f, -2.25f, 0.0f, 42.0f}});
  save_checkpoint((dir / "t.ckpt").string(), data);
  CheckpointData loaded = load_checkpoint((dir / "t.ckpt").string());
  ok = ok && loaded.tensors.size() == 1 && loaded.tensors[0].data == data.tensors[0].data &&
       loaded.tensors[0].dims == data.tensors[0].dims;

  // corrupted magic byte rejected by the CLI with exit code 2
  auto bytes = slurp(dir / "t.ckpt");
  bytes[0] ^= 0x5a;
  {
    std::ofstream f(dir / "corrupt.ckpt", std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  }
  std::string cmd = g_cli_path + " predict --checkpoint " + (dir / "corrupt.ckpt").string() +
                    " " + (dir / "m.pgm").string() + " --out " + (dir / "pred").string() +
                    " 2>/dev/null";
  int rc = std::system(cmd.c_str());
  int exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  ok = ok && exit_code == 2;

  char detail[120];
  std::snprintf(detail, sizeof detail,
                "pgm/ppm/ckpt round trips ok, corrupt magic -> CLI exit %d (want 2)",
                exit_code);
  report("format conformance", ok, detail);
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  g_cli_path = argc > 1 ? argv[1] : "./tools/dtrattunet";
  g_work = fs::temp_directory_path() / "dta_acceptance";
  fs::remove_all(g_work);
  fs::create_directories(g_work);

  auto t0 = Clock::now();
  auto release_heap = [] {
#if defined(__GLIBC__)
    malloc_trim(0);
#endif
  };
  criterion_gradients();
  release_heap();
  criterion_shapes();
  release_heap();
  criterion_metric_oracles();
  criterion_param_counts();
  criterion_ablation();
  release_heap();
  criterion_determinism();
  release_heap();
  criterion_formats();
  criterion_convergence();
  std::printf("acceptance: %d criterion(s) failed, %.0fs total\n", g_failures, elapsed(t0));
  return g_failures == 0 ? 0 : 1;
}
