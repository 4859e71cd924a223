#include "dta/loss.hpp"

#include <stdexcept>

namespace dta {

namespace {

// (N,C,H,W) class-index view of an (N,H,W) mask for the binary-CE path.
IntMask as_binary01(const IntMask& m) {
  IntMask out = m;
  for (int32_t& v : out.v) v = v != 0 ? 1 : 0;
  return out;
}

}  // namespace

template <typename T>
Tensor<T> ce_loss(const Tensor<T>& logits, const IntMask& targets, bool multiclass) {
  if (multiclass) return softmax_ce_mean(logits, targets);
  if (logits.ndim() != 4 || logits.dim(1) != 1)
    throw std::invalid_argument("ce_loss: binary mode expects a single-channel logit map");
  IntMask t = as_binary01(targets);
  t.dims = logits.dims();
  return bce_with_logits_mean(logits, t);
}

template <typename T>
Tensor<T> lesion_probs(const Tensor<T>& logits) {
  if (logits.dim(1) == 1) return sigmoid(logits);
  return softmax_channels(logits);
}

template <typename T>
Tensor<T> dice_loss(const Tensor<T>& probs, const IntMask& targets) {
  return soft_dice_loss(probs, targets);
}

template <typename T>
Tensor<T> hybrid_loss(const Tensor<T>& lesion_logits, const Tensor<T>& organ_logits,
                      const IntMask& lesion_target, const IntMask& organ_target,
                      const LossWeights& w) {
  bool multiclass = lesion_logits.dim(1) > 1;
  Tensor<T> loss = scale(ce_loss(lesion_logits, lesion_target, multiclass), w.alpha);
  loss = add(loss, scale(dice_loss(lesion_probs(lesion_logits), lesion_target), w.beta));
  if (organ_logits.defined())
    loss = add(loss, scale(ce_loss(organ_logits, organ_target, false), w.gamma));
  return loss;
}

#define DTA_INSTANTIATE_LOSS(T)                                                     \
  template Tensor<T> ce_loss<T>(const Tensor<T>&, const IntMask&, bool);            \
  template Tensor<T> lesion_probs<T>(const Tensor<T>&);                             \
  template Tensor<T> dice_loss<T>(const Tensor<T>&, const IntMask&);                \
  template Tensor<T> hybrid_loss<T>(const Tensor<T>&, const Tensor<T>&, const IntMask&, \
                                    const IntMask&, const LossWeights&);

DTA_INSTANTIATE_LOSS(float)
DTA_INSTANTIATE_LOSS(double)

}  // namespace dta
