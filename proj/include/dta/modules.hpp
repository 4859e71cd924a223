#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dta/ops.hpp"
#include "dta/rng.hpp"
#include "dta/tensor.hpp"

namespace dta {

// ---- parameter registry ------------------------------------------------------

enum class InitKind { zeros, ones, he_normal, trunc_normal };

struct InitSpec {
  InitKind kind = InitKind::zeros;
  double sigma = 0.0;    // trunc_normal
  double fan_in = 0.0;   // he_normal

  static InitSpec zeros() { return {InitKind::zeros, 0, 0}; }
  static InitSpec ones() { return {InitKind::ones, 0, 0}; }
  static InitSpec he_normal(double fan_in) { return {InitKind::he_normal, 0, fan_in}; }
  static InitSpec trunc_normal(double sigma) { return {InitKind::trunc_normal, sigma, 0}; }
};

template <typename T>
struct ParamEntry {
  std::string name;
  Tensor<T> tensor;
  bool is_param;  // false for buffers (running stats, counters)
};

/// Ordered table of named model state. Each parameter is initialized from a
/// stream derived only from (seed, name), so construction order never shifts
/// the values and two builds with one seed agree bit for bit.
template <typename T>
class ParamRegistry {
 public:
  explicit ParamRegistry(uint64_t seed) : seed_(seed) {}

  Tensor<T> create_param(const std::string& name, Shape dims, InitSpec init);
  Tensor<T> create_buffer(const std::string& name, Shape dims, T fill);

  const std::vector<ParamEntry<T>>& entries() const { return entries_; }
  Tensor<T>* find(const std::string& name);
  int64_t count_params(std::string_view prefix = "") const;
  void zero_grad();
  uint64_t seed() const { return seed_; }

  /// Leave parameters zeroed instead of drawing them (checkpoint loading).
  void set_skip_init(bool skip) { skip_init_ = skip; }

 private:
  uint64_t seed_;
  bool skip_init_ = false;
  std::vector<ParamEntry<T>> entries_;
  std::unordered_map<std::string, size_t> index_;
};

/// Naming scope handed down the module tree ("fusion.stage1.fuse", ...).
template <typename T>
struct Scope {
  ParamRegistry<T>* reg = nullptr;
  std::string prefix;

  Scope sub(const std::string& name) const {
    return {reg, prefix.empty() ? name : prefix + "." + name};
  }
  std::string full(const std::string& name) const {
    return prefix.empty() ? name : prefix + "." + name;
  }
  Tensor<T> param(const std::string& name, Shape dims, InitSpec init) const {
    return reg->create_param(full(name), std::move(dims), init);
  }
  Tensor<T> buffer(const std::string& name, Shape dims, T fill) const {
    return reg->create_buffer(full(name), std::move(dims), fill);
  }
};

// ---- basic layers --------------------------------------------------------------

template <typename T>
class Conv2d {
 public:
  Conv2d(const Scope<T>& s, int64_t in_ch, int64_t out_ch, int k);
  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, w_, b_, pad_); }
  int64_t in_channels() const { return w_.dim(1); }
  int64_t out_channels() const { return w_.dim(0); }
  Tensor<T>& weight() { return w_; }
  Tensor<T>& bias() { return b_; }

 private:
  Tensor<T> w_, b_;
  int pad_;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d(const Scope<T>& s, int64_t channels);
  Tensor<T> forward(const Tensor<T>& x, bool train) {
    return batchnorm2d(x, gamma_, beta_, stats_, train);
  }
  /// Seeds the running stats by hand (tests, eval-mode oracles).
  void set_running_stats(const std::vector<T>& mean, const std::vector<T>& var);
  BnStats<T>& stats() { return stats_; }
  Tensor<T>& gamma() { return gamma_; }
  Tensor<T>& beta() { return beta_; }

 private:
  Tensor<T> gamma_, beta_;
  BnStats<T> stats_;
};

template <typename T>
class Linear {
 public:
  Linear(const Scope<T>& s, int64_t in_dim, int64_t out_dim, InitSpec w_init);
  Tensor<T> forward(const Tensor<T>& x) const { return linear(x, w_, b_); }
  Tensor<T>& weight() { return w_; }
  Tensor<T>& bias() { return b_; }

 private:
  Tensor<T> w_, b_;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm(const Scope<T>& s, int64_t dim);
  Tensor<T> forward(const Tensor<T>& x) const { return layernorm(x, gamma_, beta_); }
  Tensor<T>& gamma() { return gamma_; }
  Tensor<T>& beta() { return beta_; }

 private:
  Tensor<T> gamma_, beta_;
};

// ---- composite blocks ------------------------------------------------------------

/// Two 3x3 conv-BN-ReLU stages summed with a 1x1 conv-BN-ReLU shortcut.
template <typename T>
class ResBlock {
 public:
  ResBlock(const Scope<T>& s, int64_t in_ch, int64_t out_ch);
  Tensor<T> forward(const Tensor<T>& x, bool train);
  int64_t in_channels() const { return conv1_.in_channels(); }
  int64_t out_channels() const { return conv1_.out_channels(); }
  Conv2d<T>& conv1() { return conv1_; }
  Conv2d<T>& conv2() { return conv2_; }
  Conv2d<T>& shortcut_conv() { return shortcut_conv_; }
  BatchNorm2d<T>& bn1() { return bn1_; }
  BatchNorm2d<T>& bn2() { return bn2_; }
  BatchNorm2d<T>& shortcut_bn() { return shortcut_bn_; }

 private:
  Conv2d<T> conv1_, conv2_, shortcut_conv_;
  BatchNorm2d<T> bn1_, bn2_, shortcut_bn_;
};

/// Bilinear 2x upsampling followed by a ResBlock.
template <typename T>
class UpResBlock {
 public:
  UpResBlock(const Scope<T>& s, int64_t in_ch, int64_t out_ch);
  Tensor<T> forward(const Tensor<T>& x, bool train) {
    return res_.forward(upsample_bilinear2x(x), train);
  }
  ResBlock<T>& res() { return res_; }

 private:
  ResBlock<T> res_;
};

/// Additive attention gate: one sigmoid coefficient per pixel applied to the
/// skip features, conditioned on the (already upsampled) gating signal.
template <typename T>
class AttentionGate {
 public:
  AttentionGate(const Scope<T>& s, int64_t skip_ch, int64_t gate_ch);
  Tensor<T> coefficients(const Tensor<T>& x, const Tensor<T>& g, bool train);
  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& g, bool train) {
    return mul_channel_gate(coefficients(x, g, train), x);
  }
  int64_t intermediate_channels() const { return wx_.out_channels(); }

 private:
  Conv2d<T> wx_, wg_, psi_;
  BatchNorm2d<T> bn_x_, bn_g_, bn_psi_;
};

// ---- transformer pieces ------------------------------------------------------------

/// Collects per-layer attention probabilities when wired into a forward call.
template <typename T>
struct AttnProbe {
  std::vector<Tensor<T>> attn;  // each (B, heads, N, N)
};

template <typename T>
class MultiheadSelfAttention {
 public:
  MultiheadSelfAttention(const Scope<T>& s, int64_t embed_dim, int64_t heads);
  Tensor<T> forward(const Tensor<T>& tokens, AttnProbe<T>* probe = nullptr) const;
  int64_t head_dim() const { return head_dim_; }

 private:
  Linear<T> q_, k_, v_, proj_;
  int64_t heads_, head_dim_;
};

/// Pre-norm transformer layer: residual MSA block then residual MLP block
/// (two linear maps with a GELU between).
template <typename T>
class TransformerLayer {
 public:
  TransformerLayer(const Scope<T>& s, int64_t embed_dim, int64_t heads, int64_t mlp_dim);
  Tensor<T> forward(const Tensor<T>& tokens, AttnProbe<T>* probe = nullptr) const;

 private:
  LayerNorm<T> ln1_, ln2_;
  MultiheadSelfAttention<T> msa_;
  Linear<T> mlp1_, mlp2_;
};

/// Non-overlapping patch embedding with optional learnable position term.
template <typename T>
class PatchEmbed {
 public:
  PatchEmbed(const Scope<T>& s, int64_t in_ch, int patch, int64_t embed_dim,
             int64_t num_tokens, bool use_pos);
  Tensor<T> forward(const Tensor<T>& x) const;
  int patch() const { return patch_; }

 private:
  Linear<T> proj_;
  Tensor<T> pos_;  // undefined when disabled
  int patch_;
};

}  // namespace dta
