#include "dta/decoder.hpp"

#include <string>

namespace dta {

template <typename T>
Decoder<T>::Decoder(const Scope<T>& s, const DecoderConfig& cfg) : cfg_(cfg) {
  int64_t b = cfg.base_width;
  const int64_t widths[5] = {b, 2 * b, 4 * b, 8 * b, 16 * b};
  stages_.resize(4);
  for (int k = 0; k < 4; ++k) {
    Scope<T> ss = s.sub("stage" + std::to_string(k));
    int64_t skip_ch = widths[3 - k];
    int64_t below_ch = widths[4 - k];
    Stage& st = stages_[static_cast<size_t>(k)];
    if (cfg.attention_gates)
      st.gate = std::make_unique<AttentionGate<T>>(ss.sub("gate"), skip_ch, below_ch);
    st.res = std::make_unique<ResBlock<T>>(ss.sub("res"), skip_ch + below_ch, skip_ch);
  }
  head_ = std::make_unique<Conv2d<T>>(s.sub("head"), b, cfg.out_classes, 1);
}

template <typename T>
Tensor<T> Decoder<T>::forward(const EncoderFeatures<T>& f, bool train) {
  const Tensor<T> skips[4] = {f.x3, f.x2, f.x1, f.x0};
  Tensor<T> below = f.x4;
  for (int k = 0; k < 4; ++k) {
    Stage& st = stages_[static_cast<size_t>(k)];
    Tensor<T> up = upsample_bilinear2x(below);
    Tensor<T> skip = st.gate ? st.gate->forward(skips[k], up, train) : skips[k];
    below = st.res->forward(concat_channels<T>({skip, up}), train);
  }
  return head_->forward(below);
}

template class Decoder<float>;
template class Decoder<double>;

}  // namespace dta
