#include "dta/model.hpp"

#include <stdexcept>

namespace dta {

void ModelVariantConfig::validate() const {
  if (base_width < 1) throw std::invalid_argument("model: base width must be >= 1");
  if (image_size % 16 != 0)
    throw std::invalid_argument("model: image size must be divisible by 16");
  if (lesion_classes != 1 && lesion_classes != 3)
    throw std::invalid_argument("model: lesion classes must be 1 (binary) or 3 (multiclass)");
  if (trec) transformer.validate(image_size, image_size);
}

std::string ModelVariantConfig::variant_name() const {
  if (!ag && !dd && !trec) return "unet";
  if (ag && !dd && !trec) return "attunet";
  if (!ag && dd && trec) return "dtrunet";
  if (ag && dd && !trec) return "dattunet";
  if (ag && !dd && trec) return "trattunet";
  if (ag && dd && trec) return "dtrattunet";
  return "custom";
}

ModelVariantConfig ModelVariantConfig::for_variant(const std::string& name) {
  ModelVariantConfig cfg;
  if (name == "unet") {
    cfg.ag = false; cfg.dd = false; cfg.trec = false;
  } else if (name == "attunet") {
    cfg.ag = true; cfg.dd = false; cfg.trec = false;
  } else if (name == "dtrunet") {
    cfg.ag = false; cfg.dd = true; cfg.trec = true;
  } else if (name == "dattunet") {
    cfg.ag = true; cfg.dd = true; cfg.trec = false;
  } else if (name == "trattunet") {
    cfg.ag = true; cfg.dd = false; cfg.trec = true;
  } else if (name == "dtrattunet") {
    cfg.ag = true; cfg.dd = true; cfg.trec = true;
  } else {
    throw std::invalid_argument("unknown variant: " + name);
  }
  return cfg;
}

template <typename T>
DTrAttUnet<T>::DTrAttUnet(const ModelVariantConfig& cfg, uint64_t seed, bool skip_init)
    : cfg_(cfg), reg_(seed) {
  cfg_.validate();
  reg_.set_skip_init(skip_init);
  Scope<T> root{&reg_, ""};
  if (cfg_.trec)
    transformer_ = std::make_unique<TransformerEncoder<T>>(
        root.sub("transformer"), cfg_.transformer, cfg_.in_channels, cfg_.image_size,
        cfg_.image_size);
  FusionConfig fc;
  fc.base_width = cfg_.base_width;
  fc.embed_dim = cfg_.transformer.embed_dim;
  fc.use_transformer = cfg_.trec;
  fusion_ = std::make_unique<EncodersFusion<T>>(root.sub("fusion"), fc, cfg_.in_channels);
  DecoderConfig dc;
  dc.base_width = cfg_.base_width;
  dc.attention_gates = cfg_.ag;
  dc.out_classes = cfg_.lesion_classes;
  lesion_ = std::make_unique<Decoder<T>>(root.sub("decoder.lesion"), dc);
  if (cfg_.dd) {
    DecoderConfig oc = dc;
    oc.out_classes = 1;
    organ_ = std::make_unique<Decoder<T>>(root.sub("decoder.organ"), oc);
  }
}

template <typename T>
ModelOutput<T> DTrAttUnet<T>::forward(const Tensor<T>& x, bool train) {
  if (x.ndim() != 4 || x.dim(1) != cfg_.in_channels || x.dim(2) != cfg_.image_size ||
      x.dim(3) != cfg_.image_size)
    throw std::invalid_argument("model: input must be (N," + std::to_string(cfg_.in_channels) +
                                "," + std::to_string(cfg_.image_size) + "," +
                                std::to_string(cfg_.image_size) + ")");
  std::vector<Tensor<T>> taps;
  if (cfg_.trec) taps = transformer_->encode_multilevel(x);
  EncoderFeatures<T> f = fusion_->forward(x, taps, train);
  ModelOutput<T> out;
  out.lesion_logits = lesion_->forward(f, train);
  if (organ_) out.organ_logits = organ_->forward(f, train);
  return out;
}

template <typename T>
std::map<std::string, int64_t> params_by_prefix(const DTrAttUnet<T>& model) {
  std::map<std::string, int64_t> out;
  const char* prefixes[] = {"transformer.", "fusion.", "decoder.lesion.", "decoder.organ."};
  int64_t total = 0;
  for (const auto& e : model.registry().entries()) {
    if (!e.is_param) continue;
    total += e.tensor.numel();
    for (const char* p : prefixes) {
      std::string key(p);
      if (e.name.rfind(key, 0) == 0) {
        key.pop_back();  // drop trailing dot
        out[key] += e.tensor.numel();
        break;
      }
    }
  }
  out["total"] = total;
  return out;
}

template class DTrAttUnet<float>;
template class DTrAttUnet<double>;
template std::map<std::string, int64_t> params_by_prefix<float>(const DTrAttUnet<float>&);
template std::map<std::string, int64_t> params_by_prefix<double>(const DTrAttUnet<double>&);

}  // namespace dta
