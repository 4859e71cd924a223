#include "dta/fusion.hpp"

#include <stdexcept>
#include <string>

namespace dta {

template <typename T>
EncodersFusion<T>::EncodersFusion(const Scope<T>& s, const FusionConfig& cfg, int64_t in_ch)
    : cfg_(cfg) {
  auto widths = cfg.stage_widths();
  res0_ = std::make_unique<ResBlock<T>>(s.sub("x0res"), in_ch, widths[0]);
  auto plans = cfg.tap_chain_plans();
  stages_.resize(4);
  for (int i = 1; i <= 4; ++i) {
    Stage& st = stages_[static_cast<size_t>(i - 1)];
    Scope<T> ss = s.sub("stage" + std::to_string(i));
    int64_t prev_w = widths[static_cast<size_t>(i - 1)];
    int64_t out_w = widths[static_cast<size_t>(i)];
    int64_t fuse_in = prev_w;
    if (cfg.use_transformer) {
      const auto& plan = plans[static_cast<size_t>(i - 1)];
      int64_t ch = cfg.embed_dim;
      if (i == 4) {
        st.zres = std::make_unique<ResBlock<T>>(ss.sub("z.res"), ch, plan[0]);
      } else {
        for (size_t u = 0; u < plan.size(); ++u) {
          st.uprs.push_back(std::make_unique<UpResBlock<T>>(
              ss.sub("z.upr" + std::to_string(u)), ch, plan[u]));
          ch = plan[u];
        }
      }
      fuse_in += plan.back();
    }
    st.fuse = std::make_unique<ResBlock<T>>(ss.sub("fuse"), fuse_in, out_w);
  }
}

template <typename T>
EncoderFeatures<T> EncodersFusion<T>::forward(const Tensor<T>& x,
                                              const std::vector<Tensor<T>>& taps, bool train) {
  if (x.dim(2) % 16 != 0 || x.dim(3) % 16 != 0)
    throw std::invalid_argument("fusion: image extents must be divisible by 16");
  if (cfg_.use_transformer && taps.size() != 4)
    throw std::invalid_argument("fusion: expected four transformer taps");
  int64_t gh = x.dim(2) / 16, gw = x.dim(3) / 16;
  if (cfg_.use_transformer) {
    for (const auto& t : taps)
      if (t.dim(2) != gh || t.dim(3) != gw)
        throw std::invalid_argument(
            "fusion: transformer grid resolution does not match the stage ladder");
  }

  EncoderFeatures<T> f;
  f.x0 = res0_->forward(x, train);
  Tensor<T> prev = f.x0;
  Tensor<T> outs[4];
  for (int i = 1; i <= 4; ++i) {
    Stage& st = stages_[static_cast<size_t>(i - 1)];
    Tensor<T> pooled = maxpool2x2(prev);
    Tensor<T> fused;
    if (cfg_.use_transformer) {
      Tensor<T> z = taps[static_cast<size_t>(i - 1)];
      if (i == 4) {
        z = st.zres->forward(z, train);
      } else {
        for (auto& upr : st.uprs) z = upr->forward(z, train);
      }
      fused = st.fuse->forward(concat_channels<T>({z, pooled}), train);
    } else {
      fused = st.fuse->forward(pooled, train);
    }
    outs[i - 1] = fused;
    prev = fused;
  }
  f.x1 = outs[0];
  f.x2 = outs[1];
  f.x3 = outs[2];
  f.x4 = outs[3];
  return f;
}

template class EncodersFusion<float>;
template class EncodersFusion<double>;

}  // namespace dta
