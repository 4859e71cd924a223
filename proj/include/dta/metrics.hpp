#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace dta {

struct ConfusionCounts {
  int64_t tp = 0, fp = 0, fn = 0, tn = 0;

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp; fp += o.fp; fn += o.fn; tn += o.tn;
    return *this;
  }
};

/// Pixel counts of one image for one positive class.
ConfusionCounts confusion(std::span<const int32_t> pred, std::span<const int32_t> gt,
                          int32_t positive);

/// 100 * 2TP / (2TP + FP + FN); 0 when the denominator vanishes.
double f1_percent(const ConfusionCounts& c);

/// 100 * TP / (TP + FP + FN); 0 when the denominator vanishes.
double iou_percent(const ConfusionCounts& c);

/// Mean over images of the per-image Dice; an image with empty ground truth
/// and empty prediction scores 100.
double dice_macro_percent(const std::vector<ConfusionCounts>& per_image);

struct Hd95 {
  bool defined = true;
  double value = 0.0;
};

/// 95th percentile (linear interpolation) of the pooled directed
/// nearest-neighbor distance multiset between the two foreground point sets.
/// Both empty -> 0; exactly one empty -> undefined.
Hd95 hd95(std::span<const int32_t> gt, std::span<const int32_t> pred, int64_t h, int64_t w,
          int32_t positive);

/// Flat key=value report; serializes deterministically with keys sorted.
struct MetricsReport {
  std::map<std::string, double> values;
  std::map<std::string, int64_t> counts;

  std::string to_text() const;
};

}  // namespace dta
