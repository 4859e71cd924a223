#pragma once

#include <vector>

#include "dta/modules.hpp"

namespace dta {

struct TransformerConfig {
  int64_t layers = 12;
  int64_t heads = 12;
  int64_t embed_dim = 768;
  int64_t mlp_dim = 3072;
  int patch = 16;
  std::vector<int> tap_layers = {4, 7, 10, 12};  // 1-based
  bool use_pos_embed = true;

  void validate(int64_t img_h, int64_t img_w) const;
};

/// Token sequence plus its spatial interpretation over the patch grid
/// (row-major: token n sits at (n / gw, n % gw)).
template <typename T>
struct TokenGrid {
  Tensor<T> tokens;  // (B, N, K)
  int64_t gh = 0, gw = 0;
};

/// (B, N, K) tokens -> (B, K, gh, gw) channels-first feature map.
template <typename T>
Tensor<T> tokens_to_grid(const TokenGrid<T>& tg);

/// Inverse of tokens_to_grid; round-trips exactly.
template <typename T>
TokenGrid<T> grid_to_tokens(const Tensor<T>& grid);

template <typename T>
class TransformerEncoder {
 public:
  TransformerEncoder(const Scope<T>& s, const TransformerConfig& cfg, int64_t in_ch,
                     int64_t img_h, int64_t img_w);

  TokenGrid<T> embed(const Tensor<T>& x) const;

  /// Runs all layers and returns the tap outputs reshaped to spatial grids
  /// (B, K, H/S, W/S), in tap order.
  std::vector<Tensor<T>> encode_multilevel(const Tensor<T>& x,
                                           AttnProbe<T>* probe = nullptr) const;

  const TransformerConfig& config() const { return cfg_; }
  int64_t grid_h() const { return gh_; }
  int64_t grid_w() const { return gw_; }

 private:
  TransformerConfig cfg_;
  int64_t gh_, gw_;
  PatchEmbed<T> embed_;
  std::vector<TransformerLayer<T>> layers_;
};

}  // namespace dta
