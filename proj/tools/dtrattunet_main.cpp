// Command-line front end: data generation, training, evaluation, prediction,
// parameter accounting and the gradient self-check suite.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "dta/gradcheck.hpp"
#include "dta/model.hpp"
#include "dta/synthetic.hpp"
#include "dta/trainer.hpp"

namespace fs = std::filesystem;

namespace {

std::string resolve_manifest(const std::string& data) {
  if (fs::is_directory(data)) return (fs::path(data) / "manifest.txt").string();
  return data;
}

dta::ModelVariantConfig make_config(const std::string& variant, int64_t base_width,
                                    int64_t size, const std::string& classes) {
  dta::ModelVariantConfig cfg = dta::ModelVariantConfig::for_variant(variant);
  cfg.base_width = base_width;
  cfg.image_size = size;
  cfg.lesion_classes = classes == "multi" ? 3 : 1;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  dta::tune_allocator();
  CLI::App app{"D-TrAttUnet reference trainer"};
  app.require_subcommand(1);

  std::string classes = "binary";
  std::string variant = "dtrattunet";
  std::string data, out, checkpoint, image;
  int64_t count = 250, size = 64, base_width = 16, epochs = 30, batch = 8;
  uint64_t seed = 42;
  double lr = 1e-3;
  int fold = 0;
  bool paper_recipe = false;

  auto* gen = app.add_subcommand("generate-data", "Write a synthetic organ/lesion dataset");
  gen->add_option("--count", count, "Sample count");
  gen->add_option("--size", size, "Image side (divisible by 16)");
  gen->add_option("--classes", classes, "binary|multi")
      ->check(CLI::IsMember({"binary", "multi"}));
  gen->add_option("--seed", seed, "RNG seed");
  gen->add_option("--out", out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train a variant on a dataset");
  train->add_option("--data", data, "Dataset directory or manifest")->required();
  train->add_option("--out", out, "Run directory")->required();
  train->add_option("--variant", variant,
                    "unet|attunet|dtrunet|dattunet|trattunet|dtrattunet");
  train->add_option("--base-width", base_width, "Encoder base width");
  train->add_option("--size", size, "Image side");
  train->add_option("--classes", classes, "binary|multi")
      ->check(CLI::IsMember({"binary", "multi"}));
  train->add_option("--epochs", epochs, "Epoch count");
  train->add_option("--lr", lr, "Adam learning rate");
  train->add_option("--batch", batch, "Batch size");
  train->add_option("--seed", seed, "RNG seed");
  train->add_option("--fold", fold, "Validation fold");
  train->add_flag("--paper-recipe", paper_recipe,
                  "Use the published recipe: 100 epochs, batch 16, lr 0.1");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a fold");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--data", data, "Dataset directory or manifest")->required();
  eval->add_option("--fold", fold, "Evaluation fold");
  eval->add_option("--out", out, "Output directory")->required();

  auto* pred = app.add_subcommand("predict", "Export masks and overlay for one image");
  pred->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  pred->add_option("image", image, "Input PGM image")->required();
  pred->add_option("--out", out, "Output directory")->required();

  auto* params = app.add_subcommand("params", "Print parameter counts by module");
  params->add_option("--variant", variant, "Variant name");
  params->add_option("--base-width", base_width, "Encoder base width");
  params->add_option("--size", size, "Image side");
  params->add_option("--classes", classes, "binary|multi")
      ->check(CLI::IsMember({"binary", "multi"}));
  params->add_option("--seed", seed, "RNG seed");

  auto* gc = app.add_subcommand("gradcheck", "Run the gradient self-check suite");
  gc->add_option("--seed", seed, "RNG seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      dta::SynthConfig cfg;
      cfg.count = count;
      cfg.size = size;
      cfg.multiclass = classes == "multi";
      cfg.seed = seed;
      std::string manifest = dta::generate_synthetic(cfg, out);
      std::cerr << "wrote " << manifest << "\n";
    } else if (train->parsed()) {
      if (paper_recipe) {
        epochs = 100;
        batch = 16;
        lr = 0.1;
      }
      dta::ModelVariantConfig mcfg = make_config(variant, base_width, size, classes);
      dta::DTrAttUnet<float> model(mcfg, seed);
      dta::TrainConfig tcfg;
      tcfg.epochs = epochs;
      tcfg.batch_size = batch;
      tcfg.adam.lr = lr;
      tcfg.seed = seed;
      tcfg.val_fold = fold;
      tcfg.out_dir = out;
      dta::Manifest manifest = dta::load_manifest(resolve_manifest(data));
      dta::TrainResult res = dta::train_model(model, manifest, tcfg);
      std::cerr << "best val_dice " << res.best_dice << " at epoch " << res.best_epoch
                << "\n";
    } else if (eval->parsed()) {
      dta::LoadedModel lm = dta::load_model_checkpoint(checkpoint);
      dta::Manifest manifest = dta::load_manifest(resolve_manifest(data));
      dta::Dataset split = dta::Dataset::load_split(manifest, fold, true);
      dta::MetricsReport rep = dta::evaluate_model(*lm.model, split);
      fs::create_directories(out);
      std::string path = (fs::path(out) / "metrics.txt").string();
      std::ofstream f(path);
      if (!f) throw std::runtime_error("eval: cannot write " + path);
      f << rep.to_text();
      std::cerr << "wrote " << path << "\n";
    } else if (pred->parsed()) {
      dta::LoadedModel lm = dta::load_model_checkpoint(checkpoint);
      dta::predict_to_files(*lm.model, image, out);
      std::cerr << "wrote masks under " << out << "\n";
    } else if (params->parsed()) {
      dta::ModelVariantConfig mcfg = make_config(variant, base_width, size, classes);
      dta::DTrAttUnet<float> model(mcfg, seed);
      auto counts = dta::params_by_prefix(model);
      for (const auto& [prefix, n] : counts)
        if (prefix != "total") std::printf("%-16s %12lld\n", prefix.c_str(),
                                           static_cast<long long>(n));
      std::printf("%-16s %12lld\n", "total",
                  static_cast<long long>(counts.at("total")));
    } else if (gc->parsed()) {
      auto results = dta::run_gradcheck_suite(seed);
      bool all_ok = true;
      for (const auto& r : results) {
        std::printf("%-22s max_rel_err=%.3e %s\n", r.name.c_str(), r.max_rel_err,
                    r.ok ? "ok" : "FAIL");
        all_ok = all_ok && r.ok;
      }
      if (!all_ok) return 2;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
