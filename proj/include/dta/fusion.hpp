#pragma once

#include <memory>
#include <vector>

#include "dta/modules.hpp"

namespace dta {

/// Channel plan of the CNN/fusion path. Stage i runs at resolution H/2^i with
/// width plan {B, 2B, 4B, 8B, 16B}; the tap chains taper the transformer's
/// embedding width down to each stage's CNN width.
struct FusionConfig {
  int64_t base_width = 64;
  int64_t embed_dim = 768;  // tap channels arriving from the transformer
  bool use_transformer = true;

  std::vector<int64_t> stage_widths() const {
    int64_t b = base_width;
    return {b, 2 * b, 4 * b, 8 * b, 16 * b};
  }
  // Out-channel sequences of the UpR chains for stages 1..3 and the stage-4
  // ResBlock (one entry).
  std::vector<std::vector<int64_t>> tap_chain_plans() const {
    int64_t b = base_width;
    return {{512, 256, 2 * b}, {512, 4 * b}, {8 * b}, {16 * b}};
  }
};

template <typename T>
struct EncoderFeatures {
  Tensor<T> x0, x1, x2, x3, x4;

  std::vector<Tensor<T>> as_vector() const { return {x0, x1, x2, x3, x4}; }
};

/// The two-path encoder merge: x0 = ResB(image), then four fusion stages
/// concatenating max-pooled CNN features with the upsampled transformer taps.
template <typename T>
class EncodersFusion {
 public:
  EncodersFusion(const Scope<T>& s, const FusionConfig& cfg, int64_t in_ch);

  /// taps must hold the four tap grids at H/16 when the transformer path is
  /// enabled, and be empty otherwise.
  EncoderFeatures<T> forward(const Tensor<T>& x, const std::vector<Tensor<T>>& taps,
                             bool train);

  const FusionConfig& config() const { return cfg_; }

 private:
  struct Stage {
    std::vector<std::unique_ptr<UpResBlock<T>>> uprs;
    std::unique_ptr<ResBlock<T>> zres;  // stage 4 tap branch
    std::unique_ptr<ResBlock<T>> fuse;
  };

  FusionConfig cfg_;
  std::unique_ptr<ResBlock<T>> res0_;
  std::vector<Stage> stages_;
};

}  // namespace dta
