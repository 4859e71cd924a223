#pragma once

#include <memory>

#include "dta/fusion.hpp"

namespace dta {

struct DecoderConfig {
  int64_t base_width = 64;
  bool attention_gates = true;
  int64_t out_classes = 1;
};

/// One expansion path: four upsample/gate/concat/ResBlock stages from x4 back
/// to full resolution, then a 1x1 head.
template <typename T>
class Decoder {
 public:
  Decoder(const Scope<T>& s, const DecoderConfig& cfg);
  Tensor<T> forward(const EncoderFeatures<T>& f, bool train);
  const DecoderConfig& config() const { return cfg_; }

 private:
  struct Stage {
    std::unique_ptr<AttentionGate<T>> gate;  // null when gates disabled
    std::unique_ptr<ResBlock<T>> res;
  };
  DecoderConfig cfg_;
  std::vector<Stage> stages_;
  std::unique_ptr<Conv2d<T>> head_;
};

}  // namespace dta
