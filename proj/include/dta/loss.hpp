#pragma once

#include "dta/ops.hpp"

namespace dta {

struct LossWeights {
  double alpha = 0.5;  // lesion CE
  double beta = 0.5;   // lesion Dice
  double gamma = 0.3;  // organ CE (secondary task)
};

/// Pixel-mean cross-entropy from logits. Multiclass expects (N,C,H,W) logits
/// against class indices; binary expects a single channel with {0,1} targets.
template <typename T>
Tensor<T> ce_loss(const Tensor<T>& logits, const IntMask& targets, bool multiclass);

/// Probabilities for the lesion head: sigmoid for one channel, channel
/// softmax otherwise.
template <typename T>
Tensor<T> lesion_probs(const Tensor<T>& logits);

template <typename T>
Tensor<T> dice_loss(const Tensor<T>& probs, const IntMask& targets);

/// alpha * CE_lesion + beta * Dice_lesion (+ gamma * CE_organ when the organ
/// head exists; the term is absent, not zero-multiplied, without it).
template <typename T>
Tensor<T> hybrid_loss(const Tensor<T>& lesion_logits, const Tensor<T>& organ_logits,
                      const IntMask& lesion_target, const IntMask& organ_target,
                      const LossWeights& w);

}  // namespace dta
