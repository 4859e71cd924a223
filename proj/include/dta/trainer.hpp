#pragma once

#include <memory>
#include <optional>
#include <string>

#include "dta/adam.hpp"
#include "dta/checkpoint.hpp"
#include "dta/dataset.hpp"
#include "dta/loss.hpp"
#include "dta/metrics.hpp"
#include "dta/model.hpp"

namespace dta {

struct TrainConfig {
  int64_t epochs = 30;
  int64_t batch_size = 8;
  AdamConfig adam;  // lr defaults to 1e-3; --paper-recipe raises it to 0.1
  uint64_t seed = 42;
  LossWeights loss;
  AugmentationConfig aug;
  int val_fold = 0;
  std::string out_dir;
};

struct TrainResult {
  std::vector<double> epoch_loss;
  std::vector<double> val_dice;
  int64_t best_epoch = 0;
  double best_dice = 0.0;
  std::string log_path, best_path, final_path;
};

/// Full training run: per epoch a seeded shuffle, hybrid loss, Adam steps,
/// then a validation pass; logs `epoch=<n> train_loss=<v> val_dice=<v>`
/// lines and writes best/final checkpoints under cfg.out_dir.
TrainResult train_model(DTrAttUnet<float>& model, const Manifest& manifest,
                        const TrainConfig& cfg);

/// Thresholded (binary, p > 0.5) or argmaxed (multiclass) masks per image.
std::vector<std::vector<int32_t>> lesion_pred_masks(const Tensor<float>& logits);
std::vector<std::vector<int32_t>> organ_pred_masks(const Tensor<float>& logits);

/// Lesion macro-Dice over a split (mean over classes of per-image Dice).
double validation_dice(DTrAttUnet<float>& model, const Dataset& split, int64_t batch_size);

/// Full metric report: micro F1/IoU, macro Dice, HD95 per lesion class plus
/// the organ head when present.
MetricsReport evaluate_model(DTrAttUnet<float>& model, const Dataset& split,
                             int64_t batch_size = 8);

/// Writes lesion.pgm (class indices), organ.pgm when the dual decoder is on,
/// and overlay.ppm (class 1 green, class 2 red, organ outline blue).
void predict_to_files(DTrAttUnet<float>& model, const std::string& image_path,
                      const std::string& out_dir);

void save_model_checkpoint(const std::string& path, const DTrAttUnet<float>& model,
                           int64_t epoch, const Adam* opt);

struct LoadedModel {
  std::unique_ptr<DTrAttUnet<float>> model;
  int64_t epoch = 0;
  bool has_opt = false;
  std::vector<Adam::Slot> opt_slots;
  int64_t opt_t = 0;
};

LoadedModel load_model_checkpoint(const std::string& path);

}  // namespace dta
