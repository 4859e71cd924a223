#include "dta/transformer.hpp"

#include <stdexcept>

namespace dta {

void TransformerConfig::validate(int64_t img_h, int64_t img_w) const {
  if (layers < 1) throw std::invalid_argument("transformer: layer count must be >= 1");
  if (embed_dim % heads != 0)
    throw std::invalid_argument("transformer: embed dim must be divisible by heads");
  if (patch <= 0 || img_h % patch != 0 || img_w % patch != 0)
    throw std::invalid_argument("transformer: image extents must be divisible by patch size");
  if (img_h % 16 != 0 || img_w % 16 != 0)
    throw std::invalid_argument("transformer: image extents must be divisible by 16");
  int prev = 0;
  for (int t : tap_layers) {
    if (t <= prev) throw std::invalid_argument("transformer: tap layers must strictly increase");
    if (t > layers) throw std::invalid_argument("transformer: tap layer beyond layer count");
    prev = t;
  }
}

template <typename T>
Tensor<T> tokens_to_grid(const TokenGrid<T>& tg) {
  int64_t B = tg.tokens.dim(0), N = tg.tokens.dim(1), K = tg.tokens.dim(2);
  if (N != tg.gh * tg.gw)
    throw std::invalid_argument("tokens_to_grid: token count does not match grid");
  return reshape(permute(tg.tokens, {0, 2, 1}), {B, K, tg.gh, tg.gw});
}

template <typename T>
TokenGrid<T> grid_to_tokens(const Tensor<T>& grid) {
  int64_t B = grid.dim(0), K = grid.dim(1), gh = grid.dim(2), gw = grid.dim(3);
  TokenGrid<T> tg;
  tg.tokens = permute(reshape(grid, {B, K, gh * gw}), {0, 2, 1});
  tg.gh = gh;
  tg.gw = gw;
  return tg;
}

template <typename T>
TransformerEncoder<T>::TransformerEncoder(const Scope<T>& s, const TransformerConfig& cfg,
                                          int64_t in_ch, int64_t img_h, int64_t img_w)
    : cfg_(cfg),
      gh_(img_h / cfg.patch),
      gw_(img_w / cfg.patch),
      embed_(s.sub("embed"), in_ch, cfg.patch, cfg.embed_dim, gh_ * gw_, cfg.use_pos_embed) {
  cfg_.validate(img_h, img_w);
  layers_.reserve(static_cast<size_t>(cfg.layers));
  for (int64_t l = 0; l < cfg.layers; ++l)
    layers_.emplace_back(s.sub("layers." + std::to_string(l)), cfg.embed_dim, cfg.heads,
                         cfg.mlp_dim);
}

template <typename T>
TokenGrid<T> TransformerEncoder<T>::embed(const Tensor<T>& x) const {
  TokenGrid<T> tg;
  tg.tokens = embed_.forward(x);
  tg.gh = gh_;
  tg.gw = gw_;
  return tg;
}

template <typename T>
std::vector<Tensor<T>> TransformerEncoder<T>::encode_multilevel(const Tensor<T>& x,
                                                                AttnProbe<T>* probe) const {
  TokenGrid<T> tg = embed(x);
  Tensor<T> z = tg.tokens;
  std::vector<Tensor<T>> taps;
  taps.reserve(cfg_.tap_layers.size());
  size_t next_tap = 0;
  for (int64_t l = 1; l <= cfg_.layers; ++l) {
    z = layers_[static_cast<size_t>(l - 1)].forward(z, probe);
    if (next_tap < cfg_.tap_layers.size() && cfg_.tap_layers[next_tap] == l) {
      taps.push_back(tokens_to_grid(TokenGrid<T>{z, gh_, gw_}));
      ++next_tap;
    }
  }
  return taps;
}

template Tensor<float> tokens_to_grid(const TokenGrid<float>&);
template Tensor<double> tokens_to_grid(const TokenGrid<double>&);
template TokenGrid<float> grid_to_tokens(const Tensor<float>&);
template TokenGrid<double> grid_to_tokens(const Tensor<double>&);
template class TransformerEncoder<float>;
template class TransformerEncoder<double>;

}  // namespace dta
