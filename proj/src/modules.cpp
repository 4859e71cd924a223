#include "dta/modules.hpp"

#include <cmath>
#include <stdexcept>

namespace dta {

// ---- registry ------------------------------------------------------------------

template <typename T>
Tensor<T> ParamRegistry<T>::create_param(const std::string& name, Shape dims, InitSpec init) {
  if (index_.count(name))
    throw std::invalid_argument("registry: duplicate parameter name " + name);
  Tensor<T> t(dims);
  auto data = t.mutable_data();
  if (!skip_init_) {
    RngState rng = RngState(seed_).stream("init." + name);
    switch (init.kind) {
      case InitKind::zeros:
        break;
      case InitKind::ones:
        for (T& v : data) v = T(1);
        break;
      case InitKind::he_normal: {
        double sigma = std::sqrt(2.0 / init.fan_in);
        rng.fill_normal(data, sigma);
        break;
      }
      case InitKind::trunc_normal:
        rng.fill_trunc_normal(data, init.sigma);
        break;
    }
  }
  t.set_requires_grad(true);
  index_[name] = entries_.size();
  entries_.push_back({name, t, true});
  return t;
}

template <typename T>
Tensor<T> ParamRegistry<T>::create_buffer(const std::string& name, Shape dims, T fill) {
  if (index_.count(name))
    throw std::invalid_argument("registry: duplicate buffer name " + name);
  Tensor<T> t(std::move(dims), fill);
  index_[name] = entries_.size();
  entries_.push_back({name, t, false});
  return t;
}

template <typename T>
Tensor<T>* ParamRegistry<T>::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second].tensor;
}

template <typename T>
int64_t ParamRegistry<T>::count_params(std::string_view prefix) const {
  int64_t n = 0;
  for (const auto& e : entries_)
    if (e.is_param && e.name.rfind(prefix, 0) == 0) n += e.tensor.numel();
  return n;
}

template <typename T>
void ParamRegistry<T>::zero_grad() {
  for (auto& e : entries_)
    if (e.is_param) e.tensor.zero_grad();
}

// ---- layers --------------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(const Scope<T>& s, int64_t in_ch, int64_t out_ch, int k)
    : pad_((k - 1) / 2) {
  if (k != 1 && k != 3) throw std::invalid_argument("conv2d: kernel must be 1x1 or 3x3");
  double fan_in = static_cast<double>(in_ch * k * k);
  w_ = s.param("weight", {out_ch, in_ch, k, k}, InitSpec::he_normal(fan_in));
  b_ = s.param("bias", {out_ch}, InitSpec::zeros());
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(const Scope<T>& s, int64_t channels) {
  gamma_ = s.param("weight", {channels}, InitSpec::ones());
  beta_ = s.param("bias", {channels}, InitSpec::zeros());
  stats_.mean = s.buffer("running_mean", {channels}, T(0));
  stats_.var = s.buffer("running_var", {channels}, T(1));
  stats_.batches = s.buffer("batches", {1}, T(0));
}

template <typename T>
void BatchNorm2d<T>::set_running_stats(const std::vector<T>& mean, const std::vector<T>& var) {
  auto m = stats_.mean.mutable_data();
  auto v = stats_.var.mutable_data();
  if (mean.size() != m.size() || var.size() != v.size())
    throw std::invalid_argument("batchnorm: running stat size mismatch");
  std::copy(mean.begin(), mean.end(), m.begin());
  std::copy(var.begin(), var.end(), v.begin());
  stats_.batches.mutable_data()[0] = T(1);
}

template <typename T>
Linear<T>::Linear(const Scope<T>& s, int64_t in_dim, int64_t out_dim, InitSpec w_init) {
  w_ = s.param("weight", {in_dim, out_dim}, w_init);
  b_ = s.param("bias", {out_dim}, InitSpec::zeros());
}

template <typename T>
LayerNorm<T>::LayerNorm(const Scope<T>& s, int64_t dim) {
  gamma_ = s.param("weight", {dim}, InitSpec::ones());
  beta_ = s.param("bias", {dim}, InitSpec::zeros());
}

// ---- composite blocks ----------------------------------------------------------

template <typename T>
ResBlock<T>::ResBlock(const Scope<T>& s, int64_t in_ch, int64_t out_ch)
    : conv1_(s.sub("conv1"), in_ch, out_ch, 3),
      conv2_(s.sub("conv2"), out_ch, out_ch, 3),
      shortcut_conv_(s.sub("shortcut_conv"), in_ch, out_ch, 1),
      bn1_(s.sub("bn1"), out_ch),
      bn2_(s.sub("bn2"), out_ch),
      shortcut_bn_(s.sub("shortcut_bn"), out_ch) {}

template <typename T>
Tensor<T> ResBlock<T>::forward(const Tensor<T>& x, bool train) {
  Tensor<T> h = relu(bn1_.forward(conv1_.forward(x), train));
  h = relu(bn2_.forward(conv2_.forward(h), train));
  Tensor<T> sc = relu(shortcut_bn_.forward(shortcut_conv_.forward(x), train));
  return add(h, sc);
}

template <typename T>
UpResBlock<T>::UpResBlock(const Scope<T>& s, int64_t in_ch, int64_t out_ch)
    : res_(s.sub("res"), in_ch, out_ch) {}

template <typename T>
AttentionGate<T>::AttentionGate(const Scope<T>& s, int64_t skip_ch, int64_t gate_ch)
    : wx_(s.sub("wx"), skip_ch, std::max<int64_t>(1, skip_ch / 2), 1),
      wg_(s.sub("wg"), gate_ch, std::max<int64_t>(1, skip_ch / 2), 1),
      psi_(s.sub("psi"), std::max<int64_t>(1, skip_ch / 2), 1, 1),
      bn_x_(s.sub("bn_x"), std::max<int64_t>(1, skip_ch / 2)),
      bn_g_(s.sub("bn_g"), std::max<int64_t>(1, skip_ch / 2)),
      bn_psi_(s.sub("bn_psi"), 1) {}

template <typename T>
Tensor<T> AttentionGate<T>::coefficients(const Tensor<T>& x, const Tensor<T>& g, bool train) {
  if (x.dim(2) != g.dim(2) || x.dim(3) != g.dim(3))
    throw std::invalid_argument("attention_gate: skip/gate spatial dims differ");
  Tensor<T> a = bn_x_.forward(wx_.forward(x), train);
  Tensor<T> b = bn_g_.forward(wg_.forward(g), train);
  Tensor<T> m = relu(add(a, b));
  return sigmoid(bn_psi_.forward(psi_.forward(m), train));
}

// ---- transformer pieces ----------------------------------------------------------

namespace {
constexpr double kTransformerInitSigma = 0.02;
}

template <typename T>
MultiheadSelfAttention<T>::MultiheadSelfAttention(const Scope<T>& s, int64_t embed_dim,
                                                  int64_t heads)
    : q_(s.sub("q"), embed_dim, embed_dim, InitSpec::trunc_normal(kTransformerInitSigma)),
      k_(s.sub("k"), embed_dim, embed_dim, InitSpec::trunc_normal(kTransformerInitSigma)),
      v_(s.sub("v"), embed_dim, embed_dim, InitSpec::trunc_normal(kTransformerInitSigma)),
      proj_(s.sub("proj"), embed_dim, embed_dim, InitSpec::trunc_normal(kTransformerInitSigma)),
      heads_(heads),
      head_dim_(embed_dim / heads) {
  if (embed_dim % heads != 0)
    throw std::invalid_argument("msa: embed dim must be divisible by head count");
}

template <typename T>
Tensor<T> MultiheadSelfAttention<T>::forward(const Tensor<T>& tokens, AttnProbe<T>* probe) const {
  int64_t B = tokens.dim(0), N = tokens.dim(1), K = tokens.dim(2);
  auto split = [&](const Tensor<T>& t) {
    return permute(reshape(t, {B, N, heads_, head_dim_}), {0, 2, 1, 3});
  };
  Tensor<T> q = split(q_.forward(tokens));   // (B, h, N, d)
  Tensor<T> k = split(k_.forward(tokens));
  Tensor<T> v = split(v_.forward(tokens));
  Tensor<T> scores = scale(matmul(q, transpose_last2(k)),
                           1.0 / std::sqrt(static_cast<double>(head_dim_)));
  Tensor<T> attn = softmax_lastdim(scores);  // (B, h, N, N)
  if (probe) probe->attn.push_back(attn);
  Tensor<T> ctx = matmul(attn, v);           // (B, h, N, d)
  ctx = reshape(permute(ctx, {0, 2, 1, 3}), {B, N, K});
  return proj_.forward(ctx);
}

template <typename T>
TransformerLayer<T>::TransformerLayer(const Scope<T>& s, int64_t embed_dim, int64_t heads,
                                      int64_t mlp_dim)
    : ln1_(s.sub("ln1"), embed_dim),
      ln2_(s.sub("ln2"), embed_dim),
      msa_(s.sub("msa"), embed_dim, heads),
      mlp1_(s.sub("mlp1"), embed_dim, mlp_dim, InitSpec::trunc_normal(kTransformerInitSigma)),
      mlp2_(s.sub("mlp2"), mlp_dim, embed_dim, InitSpec::trunc_normal(kTransformerInitSigma)) {}

template <typename T>
Tensor<T> TransformerLayer<T>::forward(const Tensor<T>& tokens, AttnProbe<T>* probe) const {
  Tensor<T> z = add(msa_.forward(ln1_.forward(tokens), probe), tokens);
  return add(mlp2_.forward(gelu(mlp1_.forward(ln2_.forward(z)))), z);
}

template <typename T>
PatchEmbed<T>::PatchEmbed(const Scope<T>& s, int64_t in_ch, int patch, int64_t embed_dim,
                          int64_t num_tokens, bool use_pos)
    : proj_(s.sub("proj"), in_ch * patch * patch, embed_dim,
            InitSpec::trunc_normal(kTransformerInitSigma)),
      patch_(patch) {
  if (use_pos)
    pos_ = s.param("pos", {num_tokens, embed_dim},
                   InitSpec::trunc_normal(kTransformerInitSigma));
}

template <typename T>
Tensor<T> PatchEmbed<T>::forward(const Tensor<T>& x) const {
  Tensor<T> t = proj_.forward(extract_patches(x, patch_));
  if (pos_.defined()) {
    if (pos_.dim(0) != t.dim(1))
      throw std::invalid_argument("patch_embed: image token count differs from position table");
    t = add_broadcast0(t, pos_);
  }
  return t;
}

// ---- explicit instantiations ------------------------------------------------------

#define DTA_INSTANTIATE_MODULES(T)        \
  template class ParamRegistry<T>;        \
  template class Conv2d<T>;               \
  template class BatchNorm2d<T>;          \
  template class Linear<T>;               \
  template class LayerNorm<T>;            \
  template class ResBlock<T>;             \
  template class UpResBlock<T>;           \
  template class AttentionGate<T>;        \
  template class MultiheadSelfAttention<T>; \
  template class TransformerLayer<T>;     \
  template class PatchEmbed<T>;

DTA_INSTANTIATE_MODULES(float)
DTA_INSTANTIATE_MODULES(double)

}  // namespace dta
