#pragma once

#include <vector>

#include "dta/tensor.hpp"

namespace dta {

enum class Activation { relu, gelu, sigmoid };

/// Running batch statistics for one BatchNorm site, held in tensors so they
/// serialize with the model. `batches` counts train-mode forwards; eval
/// before the first one (or manual seeding) is an error.
template <typename T>
struct BnStats {
  Tensor<T> mean;
  Tensor<T> var;
  Tensor<T> batches;  // single element

  bool initialized() const {
    return batches.defined() && batches.data()[0] > T(0);
  }
};

template <typename T>
BnStats<T> make_bn_stats(int64_t channels);

// ---- convolutional / spatial ops (NCHW) -----------------------------------

/// 3x3 or 1x1 shape-preserving convolution, stride 1, padding (k-1)/2.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 int padding);

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma,
                      const Tensor<T>& beta, BnStats<T>& stats, bool train,
                      double eps = 1e-5, double momentum = 0.1);

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

/// 2x2 max pooling, stride 2. Gradient routes to the first (row-major)
/// maximum of each window.
template <typename T>
Tensor<T> maxpool2x2(const Tensor<T>& x);

/// Bilinear 2x upsampling under the half-pixel-centers convention: output
/// (i,j) samples source ((i+0.5)/2-0.5, (j+0.5)/2-0.5) with edge clamping.
template <typename T>
Tensor<T> upsample_bilinear2x(const Tensor<T>& x);

/// Concatenation along the channel axis of NCHW tensors.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs);

/// Per-pixel gate (N,1,H,W) broadcast-multiplied over the channels of x.
template <typename T>
Tensor<T> mul_channel_gate(const Tensor<T>& gate, const Tensor<T>& x);

/// Cuts NCHW into non-overlapping SxS patches, row-major over the patch
/// grid; each patch flattens its (C,S,S) block row-major. Out: (N, P, S*S*C).
template <typename T>
Tensor<T> extract_patches(const Tensor<T>& x, int patch);

// ---- dense / token ops -----------------------------------------------------

/// Affine map over the last axis: (..., K_in) @ (K_in, K_out) + b.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma,
                    const Tensor<T>& beta, double eps = 1e-6);

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x);

/// Batched matmul: (..., M, K) @ (..., K, N) with identical leading dims.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes);

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape dims);

// ---- elementwise / reductions ----------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

/// a(B, rest...) + b(rest...), b broadcast over the leading axis.
template <typename T>
Tensor<T> add_broadcast0(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double c);

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x);

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x);

// ---- losses (differentiable w.r.t. logits / probabilities) -----------------

/// Mean binary cross-entropy from logits, computed in logit space.
/// Targets hold {0,1} and are constants.
template <typename T>
Tensor<T> bce_with_logits_mean(const Tensor<T>& logits, const IntMask& targets);

/// Mean multiclass cross-entropy from logits (N,C,H,W) against class-index
/// targets (N,H,W), stabilized by max subtraction.
template <typename T>
Tensor<T> softmax_ce_mean(const Tensor<T>& logits, const IntMask& targets);

/// Soft Dice loss over foreground classes. Binary mode: probs (N,1,H,W) vs
/// label 1. Multiclass: probs (N,C,H,W) vs one-hot of classes 1..C-1. Sums
/// run over the whole batch; smoothing epsilon defaults to 1.
template <typename T>
Tensor<T> soft_dice_loss(const Tensor<T>& probs, const IntMask& targets,
                         double eps = 1.0);

/// Channel-axis softmax for NCHW logit maps (multiclass probabilities).
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& x);

}  // namespace dta
