#pragma once

#include <map>
#include <memory>
#include <string>

#include "dta/decoder.hpp"
#include "dta/fusion.hpp"
#include "dta/transformer.hpp"

namespace dta {

/// Variant toggles plus the shared hyperparameters. The (ag, dd, trec) rows:
/// (0,0,0) unet, (1,0,0) attunet, (0,1,1) dtrunet, (1,1,0) dattunet,
/// (1,0,1) trattunet, (1,1,1) dtrattunet.
struct ModelVariantConfig {
  bool ag = true;
  bool dd = true;
  bool trec = true;
  int64_t base_width = 64;
  int64_t image_size = 224;
  int64_t in_channels = 3;
  int64_t lesion_classes = 1;  // 1 = binary, 3 = multiclass
  TransformerConfig transformer;

  void validate() const;
  std::string variant_name() const;
  static ModelVariantConfig for_variant(const std::string& name);
};

template <typename T>
struct ModelOutput {
  Tensor<T> lesion_logits;
  Tensor<T> organ_logits;  // undefined when the dual decoder is off
};

template <typename T>
class DTrAttUnet {
 public:
  /// `skip_init` leaves parameters zeroed (checkpoint loading path).
  DTrAttUnet(const ModelVariantConfig& cfg, uint64_t seed, bool skip_init = false);

  ModelOutput<T> forward(const Tensor<T>& x, bool train);

  ParamRegistry<T>& registry() { return reg_; }
  const ParamRegistry<T>& registry() const { return reg_; }
  const ModelVariantConfig& config() const { return cfg_; }
  uint64_t seed() const { return reg_.seed(); }

  TransformerEncoder<T>* transformer() { return transformer_.get(); }
  EncodersFusion<T>* fusion() { return fusion_.get(); }
  Decoder<T>* lesion_decoder() { return lesion_.get(); }
  Decoder<T>* organ_decoder() { return organ_.get(); }

 private:
  ModelVariantConfig cfg_;
  ParamRegistry<T> reg_;
  std::unique_ptr<TransformerEncoder<T>> transformer_;
  std::unique_ptr<EncodersFusion<T>> fusion_;
  std::unique_ptr<Decoder<T>> lesion_;
  std::unique_ptr<Decoder<T>> organ_;
};

/// Parameter totals grouped by module prefix, e.g. "transformer", "fusion",
/// "decoder.lesion", "decoder.organ"; "total" sums everything.
template <typename T>
std::map<std::string, int64_t> params_by_prefix(const DTrAttUnet<T>& model);

}  // namespace dta
