#include "dta/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "dta/gemm.hpp"

namespace dta {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

template <typename T>
void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

template <typename T>
std::vector<std::shared_ptr<Node<T>>> parents_of(const Tensor<T>& a) {
  return {a.node()};
}

template <typename T>
std::vector<std::shared_ptr<Node<T>>> parents_of(const Tensor<T>& a, const Tensor<T>& b) {
  return {a.node(), b.node()};
}

template <typename T>
std::vector<std::shared_ptr<Node<T>>> parents_of(const Tensor<T>& a, const Tensor<T>& b,
                                                 const Tensor<T>& c) {
  return {a.node(), b.node(), c.node()};
}

// im2col for one image: col(C*k*k, H*W), zero-padded, stride 1.
template <typename T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int k, int pad, T* col) {
  int64_t hw = H * W;
  for (int64_t c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* dst = col + ((c * k + ki) * k + kj) * hw;
        int64_t sy = ki - pad;
        int64_t sx = kj - pad;
        for (int64_t y = 0; y < H; ++y) {
          int64_t yy = y + sy;
          T* drow = dst + y * W;
          if (yy < 0 || yy >= H) {
            std::fill(drow, drow + W, T(0));
            continue;
          }
          const T* srow = x + (c * H + yy) * W;
          int64_t x0 = std::max<int64_t>(0, -sx);
          int64_t x1 = std::min<int64_t>(W, W - sx);
          if (x0 > 0) std::fill(drow, drow + x0, T(0));
          for (int64_t xx = x0; xx < x1; ++xx) drow[xx] = srow[xx + sx];
          if (x1 < W) std::fill(drow + x1, drow + W, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_acc(const T* col, int64_t C, int64_t H, int64_t W, int k, int pad, T* dx) {
  int64_t hw = H * W;
  for (int64_t c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* src = col + ((c * k + ki) * k + kj) * hw;
        int64_t sy = ki - pad;
        int64_t sx = kj - pad;
        for (int64_t y = 0; y < H; ++y) {
          int64_t yy = y + sy;
          if (yy < 0 || yy >= H) continue;
          T* drow = dx + (c * H + yy) * W;
          const T* srow = src + y * W;
          int64_t x0 = std::max<int64_t>(0, -sx);
          int64_t x1 = std::min<int64_t>(W, W - sx);
          for (int64_t xx = x0; xx < x1; ++xx) drow[xx + sx] += srow[xx];
        }
      }
    }
  }
}

}  // namespace

// ---- conv2d -----------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int padding) {
  require<T>(x.ndim() == 4, "conv2d: input must be NCHW");
  require<T>(w.ndim() == 4, "conv2d: weight must be OIKK");
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t O = w.dim(0), I = w.dim(1);
  int k = static_cast<int>(w.dim(2));
  if (w.dim(3) != k || (k != 1 && k != 3))
    throw std::invalid_argument("conv2d: kernel must be 1x1 or 3x3");
  if (I != C) throw std::invalid_argument("conv2d: input channel mismatch");
  if (padding != (k - 1) / 2)
    throw std::invalid_argument("conv2d: padding must preserve spatial dims");
  require<T>(b.ndim() == 1 && b.dim(0) == O, "conv2d: bias must have O entries");

  int64_t hw = H * W;
  int64_t ikk = I * k * k;
  std::vector<T> out(static_cast<size_t>(N * O * hw));
  std::vector<T> col(static_cast<size_t>(ikk * hw));
  const T* xd = x.data().data();
  const T* wd = w.data().data();
  const T* bd = b.data().data();
  for (int64_t n = 0; n < N; ++n) {
    im2col(xd + n * C * hw, C, H, W, k, padding, col.data());
    T* y = out.data() + n * O * hw;
    gemm_nn<T>(O, hw, ikk, wd, ikk, col.data(), hw, y, hw, false);
    for (int64_t o = 0; o < O; ++o) {
      T bias = bd[o];
      T* row = y + o * hw;
      for (int64_t p = 0; p < hw; ++p) row[p] += bias;
    }
  }

  int kk = k;
  int pad = padding;
  auto bw = [N, C, H, W, O, ikk, hw, kk, pad](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    Node<T>& wn = *self.parents[1];
    Node<T>& bn = *self.parents[2];
    const T* gy = self.gpass.data();
    std::vector<T> col(static_cast<size_t>(ikk * hw));
    std::vector<T> scratch(static_cast<size_t>(std::max(hw * ikk, O * ikk)));
    std::vector<T> dcol;
    if (xn.requires_grad) dcol.resize(static_cast<size_t>(ikk * hw));
    // dW needs col^T, dX needs W^T; both via explicit transposes.
    std::vector<T> wT;
    if (xn.requires_grad) {
      wT.resize(static_cast<size_t>(ikk * O));
      transpose_copy<T>(O, ikk, wn.value.data(), wT.data());
    }
    for (int64_t n = 0; n < N; ++n) {
      const T* gyn = gy + n * O * hw;
      if (wn.requires_grad || xn.requires_grad)
        im2col(xn.value.data() + n * C * hw, C, H, W, kk, pad, col.data());
      if (wn.requires_grad) {
        transpose_copy<T>(ikk, hw, col.data(), scratch.data());  // (hw x ikk)
        gemm_nn<T>(O, ikk, hw, gyn, hw, scratch.data(), ikk, wn.gpass.data(), ikk, true);
      }
      if (xn.requires_grad) {
        gemm_nn<T>(ikk, hw, O, wT.data(), O, gyn, hw, dcol.data(), hw, false);
        col2im_acc(dcol.data(), C, H, W, kk, pad, xn.gpass.data() + n * C * hw);
      }
      if (bn.requires_grad) {
        for (int64_t o = 0; o < O; ++o) {
          T s = 0;
          const T* row = gyn + o * hw;
          for (int64_t p = 0; p < hw; ++p) s += row[p];
          bn.gpass[static_cast<size_t>(o)] += s;
        }
      }
    }
  };
  return make_op_output<T>({N, O, H, W}, std::move(out), parents_of(x, w, b), bw);
}

// ---- batchnorm2d --------------------------------------------------------------

template <typename T>
BnStats<T> make_bn_stats(int64_t channels) {
  BnStats<T> s;
  s.mean = Tensor<T>({channels}, T(0));
  s.var = Tensor<T>({channels}, T(1));
  s.batches = Tensor<T>({1}, T(0));
  return s;
}

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BnStats<T>& stats, bool train, double eps, double momentum) {
  require<T>(x.ndim() == 4, "batchnorm2d: input must be NCHW");
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  require<T>(gamma.ndim() == 1 && gamma.dim(0) == C, "batchnorm2d: gamma size");
  require<T>(beta.ndim() == 1 && beta.dim(0) == C, "batchnorm2d: beta size");
  if (!stats.mean.defined()) stats = make_bn_stats<T>(C);
  require<T>(stats.mean.numel() == C && stats.var.numel() == C, "batchnorm2d: stats size");
  int64_t hw = H * W;
  int64_t m = N * hw;
  const T* xd = x.data().data();
  const T* gd = gamma.data().data();
  const T* bd = beta.data().data();

  std::vector<T> mean(static_cast<size_t>(C)), invstd(static_cast<size_t>(C));
  if (train) {
    T* rmean = stats.mean.mutable_data().data();
    T* rvar = stats.var.mutable_data().data();
    for (int64_t c = 0; c < C; ++c) {
      double s = 0;
      for (int64_t n = 0; n < N; ++n) {
        const T* p = xd + (n * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) s += p[i];
      }
      double mu = s / static_cast<double>(m);
      double v = 0;
      for (int64_t n = 0; n < N; ++n) {
        const T* p = xd + (n * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          double d = p[i] - mu;
          v += d * d;
        }
      }
      v /= static_cast<double>(m);
      mean[static_cast<size_t>(c)] = static_cast<T>(mu);
      invstd[static_cast<size_t>(c)] = static_cast<T>(1.0 / std::sqrt(v + eps));
      double unbiased = m > 1 ? v * static_cast<double>(m) / static_cast<double>(m - 1) : v;
      rmean[c] = static_cast<T>((1.0 - momentum) * rmean[c] + momentum * mu);
      rvar[c] = static_cast<T>((1.0 - momentum) * rvar[c] + momentum * unbiased);
    }
    stats.batches.mutable_data()[0] += T(1);
  } else {
    if (!stats.initialized())
      throw std::runtime_error("batchnorm2d: eval mode before running stats were populated");
    const T* rmean = stats.mean.data().data();
    const T* rvar = stats.var.data().data();
    for (int64_t c = 0; c < C; ++c) {
      mean[static_cast<size_t>(c)] = rmean[c];
      invstd[static_cast<size_t>(c)] =
          static_cast<T>(1.0 / std::sqrt(static_cast<double>(rvar[c]) + eps));
    }
  }

  std::vector<T> out(static_cast<size_t>(N * C * hw));
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* p = xd + (n * C + c) * hw;
      T* q = out.data() + (n * C + c) * hw;
      T mu = mean[static_cast<size_t>(c)];
      T is = invstd[static_cast<size_t>(c)];
      T g = gd[static_cast<size_t>(c)];
      T bb = bd[static_cast<size_t>(c)];
      for (int64_t i = 0; i < hw; ++i) q[i] = (p[i] - mu) * is * g + bb;
    }

  auto bw = [N, C, hw, m, mean, invstd, train](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    Node<T>& gn = *self.parents[1];
    Node<T>& bn = *self.parents[2];
    const T* gy = self.gpass.data();
    const T* xd2 = xn.value.data();
    const T* gd2 = gn.value.data();
    for (int64_t c = 0; c < C; ++c) {
      double mu = mean[static_cast<size_t>(c)];
      double is = invstd[static_cast<size_t>(c)];
      double g = gd2[static_cast<size_t>(c)];
      double sum_dy = 0, sum_dy_xhat = 0;
      for (int64_t n = 0; n < N; ++n) {
        const T* gp = gy + (n * C + c) * hw;
        const T* xp = xd2 + (n * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          double xhat = (xp[i] - mu) * is;
          sum_dy += gp[i];
          sum_dy_xhat += gp[i] * xhat;
        }
      }
      if (gn.requires_grad) gn.gpass[static_cast<size_t>(c)] += static_cast<T>(sum_dy_xhat);
      if (bn.requires_grad) bn.gpass[static_cast<size_t>(c)] += static_cast<T>(sum_dy);
      if (xn.requires_grad) {
        double inv_m = 1.0 / static_cast<double>(m);
        for (int64_t n = 0; n < N; ++n) {
          const T* gp = gy + (n * C + c) * hw;
          const T* xp = xd2 + (n * C + c) * hw;
          T* dx = xn.gpass.data() + (n * C + c) * hw;
          if (train) {
            for (int64_t i = 0; i < hw; ++i) {
              double xhat = (xp[i] - mu) * is;
              dx[i] += static_cast<T>(g * is *
                                      (gp[i] - sum_dy * inv_m - xhat * sum_dy_xhat * inv_m));
            }
          } else {
            for (int64_t i = 0; i < hw; ++i) dx[i] += static_cast<T>(g * is * gp[i]);
          }
        }
      }
    }
  };
  return make_op_output<T>({N, C, H, W}, std::move(out), parents_of(x, gamma, beta), bw);
}

// ---- activations --------------------------------------------------------------

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  const T* xd = x.data().data();
  int64_t n = x.numel();
  std::vector<T> out(static_cast<size_t>(n));
  switch (kind) {
    case Activation::relu:
      for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = xd[i] > T(0) ? xd[i] : T(0);
      break;
    case Activation::gelu:
      for (int64_t i = 0; i < n; ++i) {
        double v = xd[i];
        out[static_cast<size_t>(i)] =
            static_cast<T>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
      }
      break;
    case Activation::sigmoid:
      for (int64_t i = 0; i < n; ++i) {
        double v = xd[i];
        double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        out[static_cast<size_t>(i)] = static_cast<T>(s);
      }
      break;
  }
  auto bw = [n, kind](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    const T* gy = self.gpass.data();
    const T* xd2 = xn.value.data();
    const T* yd = self.value.data();
    T* dx = xn.gpass.data();
    switch (kind) {
      case Activation::relu:
        for (int64_t i = 0; i < n; ++i) dx[i] += xd2[i] > T(0) ? gy[i] : T(0);
        break;
      case Activation::gelu:
        for (int64_t i = 0; i < n; ++i) {
          double v = xd2[i];
          double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
          double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
          dx[i] += static_cast<T>(gy[i] * (cdf + v * pdf));
        }
        break;
      case Activation::sigmoid:
        for (int64_t i = 0; i < n; ++i) {
          double s = yd[i];
          dx[i] += static_cast<T>(gy[i] * s * (1.0 - s));
        }
        break;
    }
  };
  return make_op_output<T>(x.dims(), std::move(out), parents_of(x), bw);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) { return activation(x, Activation::relu); }
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) { return activation(x, Activation::gelu); }
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) { return activation(x, Activation::sigmoid); }

// ---- maxpool2x2 ----------------------------------------------------------------

template <typename T>
Tensor<T> maxpool2x2(const Tensor<T>& x) {
  require<T>(x.ndim() == 4, "maxpool2x2: input must be NCHW");
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 != 0 || W % 2 != 0)
    throw std::invalid_argument("maxpool2x2: spatial extents must be even");
  int64_t Ho = H / 2, Wo = W / 2;
  const T* xd = x.data().data();
  std::vector<T> out(static_cast<size_t>(N * C * Ho * Wo));
  std::vector<int64_t> arg(out.size());
  int64_t oi = 0;
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* plane = xd + nc * H * W;
    for (int64_t y = 0; y < Ho; ++y)
      for (int64_t xo = 0; xo < Wo; ++xo, ++oi) {
        int64_t base = (2 * y) * W + 2 * xo;
        // first occurrence in row-major window order wins ties
        int64_t cand[4] = {base, base + 1, base + W, base + W + 1};
        int64_t best = cand[0];
        T bv = plane[base];
        for (int t = 1; t < 4; ++t)
          if (plane[cand[t]] > bv) {
            bv = plane[cand[t]];
            best = cand[t];
          }
        out[static_cast<size_t>(oi)] = bv;
        arg[static_cast<size_t>(oi)] = nc * H * W + best;
      }
  }
  auto bw = [arg](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    const T* gy = self.gpass.data();
    T* dx = xn.gpass.data();
    for (size_t i = 0; i < arg.size(); ++i) dx[arg[i]] += gy[i];
  };
  return make_op_output<T>({N, C, Ho, Wo}, std::move(out), parents_of(x), bw);
}

// ---- upsample_bilinear2x --------------------------------------------------------

namespace {
struct LerpIdx {
  int64_t i0, i1;
  double a;  // weight of i1
};

inline LerpIdx lerp_index(int64_t out_i, int64_t in_extent) {
  double u = (static_cast<double>(out_i) + 0.5) / 2.0 - 0.5;
  double f = std::floor(u);
  LerpIdx r;
  r.a = u - f;
  int64_t i0 = static_cast<int64_t>(f);
  r.i0 = std::clamp<int64_t>(i0, 0, in_extent - 1);
  r.i1 = std::clamp<int64_t>(i0 + 1, 0, in_extent - 1);
  return r;
}
}  // namespace

template <typename T>
Tensor<T> upsample_bilinear2x(const Tensor<T>& x) {
  require<T>(x.ndim() == 4, "upsample_bilinear2x: input must be NCHW");
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t Ho = H * 2, Wo = W * 2;
  std::vector<LerpIdx> ry(static_cast<size_t>(Ho)), rx(static_cast<size_t>(Wo));
  for (int64_t i = 0; i < Ho; ++i) ry[static_cast<size_t>(i)] = lerp_index(i, H);
  for (int64_t j = 0; j < Wo; ++j) rx[static_cast<size_t>(j)] = lerp_index(j, W);
  const T* xd = x.data().data();
  std::vector<T> out(static_cast<size_t>(N * C * Ho * Wo));
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* plane = xd + nc * H * W;
    T* q = out.data() + nc * Ho * Wo;
    for (int64_t y = 0; y < Ho; ++y) {
      const LerpIdx& iy = ry[static_cast<size_t>(y)];
      for (int64_t xo = 0; xo < Wo; ++xo) {
        const LerpIdx& ix = rx[static_cast<size_t>(xo)];
        double top = (1.0 - ix.a) * plane[iy.i0 * W + ix.i0] + ix.a * plane[iy.i0 * W + ix.i1];
        double bot = (1.0 - ix.a) * plane[iy.i1 * W + ix.i0] + ix.a * plane[iy.i1 * W + ix.i1];
        q[y * Wo + xo] = static_cast<T>((1.0 - iy.a) * top + iy.a * bot);
      }
    }
  }
  auto bw = [N, C, H, W, Ho, Wo, ry, rx](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    const T* gy = self.gpass.data();
    T* dx = xn.gpass.data();
    for (int64_t nc = 0; nc < N * C; ++nc) {
      const T* g = gy + nc * Ho * Wo;
      T* d = dx + nc * H * W;
      for (int64_t y = 0; y < Ho; ++y) {
        const LerpIdx& iy = ry[static_cast<size_t>(y)];
        for (int64_t xo = 0; xo < Wo; ++xo) {
          const LerpIdx& ix = rx[static_cast<size_t>(xo)];
          double gv = g[y * Wo + xo];
          d[iy.i0 * W + ix.i0] += static_cast<T>((1.0 - iy.a) * (1.0 - ix.a) * gv);
          d[iy.i0 * W + ix.i1] += static_cast<T>((1.0 - iy.a) * ix.a * gv);
          d[iy.i1 * W + ix.i0] += static_cast<T>(iy.a * (1.0 - ix.a) * gv);
          d[iy.i1 * W + ix.i1] += static_cast<T>(iy.a * ix.a * gv);
        }
      }
    }
  };
  return make_op_output<T>({N, C, Ho, Wo}, std::move(out), parents_of(x), bw);
}

// ---- concat / gating / patches ---------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: no inputs");
  int64_t N = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
  int64_t Ctot = 0;
  for (const auto& t : xs) {
    require<T>(t.ndim() == 4, "concat_channels: inputs must be NCHW");
    if (t.dim(0) != N || t.dim(2) != H || t.dim(3) != W)
      throw std::invalid_argument("concat_channels: batch/spatial dims differ");
    Ctot += t.dim(1);
  }
  int64_t hw = H * W;
  std::vector<T> out(static_cast<size_t>(N * Ctot * hw));
  std::vector<int64_t> chans;
  std::vector<std::shared_ptr<Node<T>>> parents;
  for (const auto& t : xs) {
    chans.push_back(t.dim(1));
    parents.push_back(t.node());
  }
  for (int64_t n = 0; n < N; ++n) {
    int64_t coff = 0;
    for (size_t s = 0; s < xs.size(); ++s) {
      int64_t c = chans[s];
      const T* src = xs[s].data().data() + n * c * hw;
      std::memcpy(out.data() + (n * Ctot + coff) * hw, src,
                  static_cast<size_t>(c * hw) * sizeof(T));
      coff += c;
    }
  }
  auto bw = [N, Ctot, hw, chans](Node<T>& self) {
    const T* gy = self.gpass.data();
    for (int64_t n = 0; n < N; ++n) {
      int64_t coff = 0;
      for (size_t s = 0; s < chans.size(); ++s) {
        Node<T>& p = *self.parents[s];
        int64_t c = chans[s];
        if (p.requires_grad) {
          T* dst = p.gpass.data() + n * c * hw;
          const T* src = gy + (n * Ctot + coff) * hw;
          for (int64_t i = 0; i < c * hw; ++i) dst[i] += src[i];
        }
        coff += c;
      }
    }
  };
  return make_op_output<T>({N, Ctot, H, W}, std::move(out), std::move(parents), bw);
}

template <typename T>
Tensor<T> mul_channel_gate(const Tensor<T>& gate, const Tensor<T>& x) {
  require<T>(gate.ndim() == 4 && x.ndim() == 4, "mul_channel_gate: NCHW inputs");
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (gate.dim(0) != N || gate.dim(1) != 1 || gate.dim(2) != H || gate.dim(3) != W)
    throw std::invalid_argument("mul_channel_gate: gate must be (N,1,H,W) matching x");
  int64_t hw = H * W;
  const T* gd = gate.data().data();
  const T* xd = x.data().data();
  std::vector<T> out(static_cast<size_t>(N * C * hw));
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* gp = gd + n * hw;
      const T* xp = xd + (n * C + c) * hw;
      T* q = out.data() + (n * C + c) * hw;
      for (int64_t i = 0; i < hw; ++i) q[i] = gp[i] * xp[i];
    }
  auto bw = [N, C, hw](Node<T>& self) {
    Node<T>& gn = *self.parents[0];
    Node<T>& xn = *self.parents[1];
    const T* gy = self.gpass.data();
    for (int64_t n = 0; n < N; ++n) {
      for (int64_t c = 0; c < C; ++c) {
        const T* g = gy + (n * C + c) * hw;
        if (gn.requires_grad) {
          const T* xp = xn.value.data() + (n * C + c) * hw;
          T* dg = gn.gpass.data() + n * hw;
          for (int64_t i = 0; i < hw; ++i) dg[i] += g[i] * xp[i];
        }
        if (xn.requires_grad) {
          const T* gp = gn.value.data() + n * hw;
          T* dx = xn.gpass.data() + (n * C + c) * hw;
          for (int64_t i = 0; i < hw; ++i) dx[i] += g[i] * gp[i];
        }
      }
    }
  };
  return make_op_output<T>({N, C, H, W}, std::move(out), parents_of(gate, x), bw);
}

template <typename T>
Tensor<T> extract_patches(const Tensor<T>& x, int patch) {
  require<T>(x.ndim() == 4, "extract_patches: input must be NCHW");
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t S = patch;
  if (S <= 0 || H % S != 0 || W % S != 0)
    throw std::invalid_argument("extract_patches: extents must be divisible by patch size");
  int64_t gh = H / S, gw = W / S;
  int64_t P = gh * gw;
  int64_t F = C * S * S;
  const T* xd = x.data().data();
  std::vector<T> out(static_cast<size_t>(N * P * F));
  for (int64_t n = 0; n < N; ++n)
    for (int64_t py = 0; py < gh; ++py)
      for (int64_t px = 0; px < gw; ++px) {
        T* dst = out.data() + (n * P + py * gw + px) * F;
        for (int64_t c = 0; c < C; ++c)
          for (int64_t dy = 0; dy < S; ++dy) {
            const T* src = xd + ((n * C + c) * H + py * S + dy) * W + px * S;
            std::memcpy(dst + (c * S + dy) * S, src, static_cast<size_t>(S) * sizeof(T));
          }
      }
  auto bw = [N, C, H, W, S, gh, gw, P, F](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    const T* gy = self.gpass.data();
    T* dx = xn.gpass.data();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t py = 0; py < gh; ++py)
        for (int64_t px = 0; px < gw; ++px) {
          const T* src = gy + (n * P + py * gw + px) * F;
          for (int64_t c = 0; c < C; ++c)
            for (int64_t dy = 0; dy < S; ++dy) {
              T* dst = dx + ((n * C + c) * H + py * S + dy) * W + px * S;
              const T* s = src + (c * S + dy) * S;
              for (int64_t dxi = 0; dxi < S; ++dxi) dst[dxi] += s[dxi];
            }
        }
  };
  return make_op_output<T>({N, P, F}, std::move(out), parents_of(x), bw);
}

// ---- linear / layernorm / softmax / matmul ---------------------------------------

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require<T>(x.ndim() >= 1, "linear: input rank");
  require<T>(w.ndim() == 2, "linear: weight must be (K_in, K_out)");
  int64_t kin = w.dim(0), kout = w.dim(1);
  if (x.dim(x.ndim() - 1) != kin)
    throw std::invalid_argument("linear: trailing dim of input must equal K_in");
  require<T>(b.ndim() == 1 && b.dim(0) == kout, "linear: bias size");
  int64_t R = x.numel() / kin;
  const T* xd = x.data().data();
  const T* wd = w.data().data();
  const T* bd = b.data().data();
  std::vector<T> out(static_cast<size_t>(R * kout));
  gemm_nn<T>(R, kout, kin, xd, kin, wd, kout, out.data(), kout, false);
  for (int64_t r = 0; r < R; ++r) {
    T* row = out.data() + r * kout;
    for (int64_t j = 0; j < kout; ++j) row[j] += bd[j];
  }
  Shape odims = x.dims();
  odims.back() = kout;
  auto bw = [R, kin, kout](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    Node<T>& wn = *self.parents[1];
    Node<T>& bn = *self.parents[2];
    const T* gy = self.gpass.data();
    if (xn.requires_grad) {
      std::vector<T> wT(static_cast<size_t>(kout * kin));
      transpose_copy<T>(kin, kout, wn.value.data(), wT.data());
      gemm_nn<T>(R, kin, kout, gy, kout, wT.data(), kin, xn.gpass.data(), kin, true);
    }
    if (wn.requires_grad) {
      std::vector<T> xT(static_cast<size_t>(kin * R));
      transpose_copy<T>(R, kin, xn.value.data(), xT.data());
      gemm_nn<T>(kin, kout, R, xT.data(), R, gy, kout, wn.gpass.data(), kout, true);
    }
    if (bn.requires_grad) {
      T* db = bn.gpass.data();
      for (int64_t r = 0; r < R; ++r) {
        const T* row = gy + r * kout;
        for (int64_t j = 0; j < kout; ++j) db[j] += row[j];
      }
    }
  };
  return make_op_output<T>(std::move(odims), std::move(out), parents_of(x, w, b), bw);
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    double eps) {
  int64_t K = x.dim(x.ndim() - 1);
  require<T>(gamma.ndim() == 1 && gamma.dim(0) == K, "layernorm: gamma size");
  require<T>(beta.ndim() == 1 && beta.dim(0) == K, "layernorm: beta size");
  int64_t R = x.numel() / K;
  const T* xd = x.data().data();
  const T* gd = gamma.data().data();
  const T* bd = beta.data().data();
  std::vector<T> out(static_cast<size_t>(R * K));
  std::vector<T> mean(static_cast<size_t>(R)), invstd(static_cast<size_t>(R));
  for (int64_t r = 0; r < R; ++r) {
    const T* p = xd + r * K;
    double mu = 0;
    for (int64_t j = 0; j < K; ++j) mu += p[j];
    mu /= static_cast<double>(K);
    double v = 0;
    for (int64_t j = 0; j < K; ++j) {
      double d = p[j] - mu;
      v += d * d;
    }
    v /= static_cast<double>(K);
    double is = 1.0 / std::sqrt(v + eps);
    mean[static_cast<size_t>(r)] = static_cast<T>(mu);
    invstd[static_cast<size_t>(r)] = static_cast<T>(is);
    T* q = out.data() + r * K;
    for (int64_t j = 0; j < K; ++j)
      q[j] = static_cast<T>((p[j] - mu) * is * gd[j] + bd[j]);
  }
  auto bw = [R, K, mean, invstd](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    Node<T>& gn = *self.parents[1];
    Node<T>& bn = *self.parents[2];
    const T* gy = self.gpass.data();
    const T* xd2 = xn.value.data();
    const T* gd2 = gn.value.data();
    for (int64_t r = 0; r < R; ++r) {
      const T* gp = gy + r * K;
      const T* xp = xd2 + r * K;
      double mu = mean[static_cast<size_t>(r)];
      double is = invstd[static_cast<size_t>(r)];
      double s1 = 0, s2 = 0;  // mean(dxhat), mean(dxhat*xhat)
      for (int64_t j = 0; j < K; ++j) {
        double xhat = (xp[j] - mu) * is;
        double dxh = gp[j] * gd2[j];
        s1 += dxh;
        s2 += dxh * xhat;
        if (gn.requires_grad) gn.gpass[static_cast<size_t>(j)] += static_cast<T>(gp[j] * xhat);
        if (bn.requires_grad) bn.gpass[static_cast<size_t>(j)] += gp[j];
      }
      s1 /= static_cast<double>(K);
      s2 /= static_cast<double>(K);
      if (xn.requires_grad) {
        T* dx = xn.gpass.data() + r * K;
        for (int64_t j = 0; j < K; ++j) {
          double xhat = (xp[j] - mu) * is;
          double dxh = gp[j] * gd2[j];
          dx[j] += static_cast<T>(is * (dxh - s1 - xhat * s2));
        }
      }
    }
  };
  return make_op_output<T>(x.dims(), std::move(out), parents_of(x, gamma, beta), bw);
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  int64_t K = x.dim(x.ndim() - 1);
  int64_t R = x.numel() / K;
  const T* xd = x.data().data();
  std::vector<T> out(static_cast<size_t>(R * K));
  for (int64_t r = 0; r < R; ++r) {
    const T* p = xd + r * K;
    T* q = out.data() + r * K;
    double m = p[0];
    for (int64_t j = 1; j < K; ++j) m = std::max<double>(m, p[j]);
    double s = 0;
    for (int64_t j = 0; j < K; ++j) {
      double e = std::exp(p[j] - m);
      q[j] = static_cast<T>(e);
      s += e;
    }
    double inv = 1.0 / s;
    for (int64_t j = 0; j < K; ++j) q[j] = static_cast<T>(q[j] * inv);
  }
  auto bw = [R, K](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    const T* gy = self.gpass.data();
    const T* yd = self.value.data();
    T* dx = xn.gpass.data();
    for (int64_t r = 0; r < R; ++r) {
      const T* g = gy + r * K;
      const T* y = yd + r * K;
      double dot = 0;
      for (int64_t j = 0; j < K; ++j) dot += g[j] * y[j];
      T* d = dx + r * K;
      for (int64_t j = 0; j < K; ++j) d[j] += static_cast<T>(y[j] * (g[j] - dot));
    }
  };
  return make_op_output<T>(x.dims(), std::move(out), parents_of(x), bw);
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require<T>(a.ndim() >= 2 && b.ndim() == a.ndim(), "matmul: rank mismatch");
  int nd = a.ndim();
  for (int i = 0; i < nd - 2; ++i)
    if (a.dim(i) != b.dim(i)) throw std::invalid_argument("matmul: leading dims differ");
  int64_t M = a.dim(nd - 2), K = a.dim(nd - 1);
  int64_t K2 = b.dim(nd - 2), N = b.dim(nd - 1);
  if (K != K2) throw std::invalid_argument("matmul: inner dims differ");
  int64_t batch = 1;
  for (int i = 0; i < nd - 2; ++i) batch *= a.dim(i);
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  std::vector<T> out(static_cast<size_t>(batch * M * N));
  for (int64_t g = 0; g < batch; ++g)
    gemm_nn<T>(M, N, K, ad + g * M * K, K, bd + g * K * N, N, out.data() + g * M * N, N, false);
  Shape odims(a.dims().begin(), a.dims().end() - 1);
  odims.push_back(N);
  auto bw = [batch, M, N, K](Node<T>& self) {
    Node<T>& an = *self.parents[0];
    Node<T>& bn = *self.parents[1];
    const T* gy = self.gpass.data();
    std::vector<T> scratch(static_cast<size_t>(std::max(K * N, M * K)));
    for (int64_t g = 0; g < batch; ++g) {
      const T* gc = gy + g * M * N;
      if (an.requires_grad) {
        transpose_copy<T>(K, N, bn.value.data() + g * K * N, scratch.data());  // (N x K)
        gemm_nn<T>(M, K, N, gc, N, scratch.data(), K, an.gpass.data() + g * M * K, K, true);
      }
      if (bn.requires_grad) {
        transpose_copy<T>(M, K, an.value.data() + g * M * K, scratch.data());  // (K x M)
        gemm_nn<T>(K, N, M, scratch.data(), M, gc, N, bn.gpass.data() + g * K * N, N, true);
      }
    }
  };
  return make_op_output<T>(std::move(odims), std::move(out), parents_of(a, b), bw);
}

namespace {

template <typename T>
void permute_copy(const Shape& in_dims, const T* in, const std::vector<int>& axes, T* out) {
  int nd = static_cast<int>(in_dims.size());
  Shape out_dims(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) out_dims[static_cast<size_t>(i)] = in_dims[static_cast<size_t>(axes[static_cast<size_t>(i)])];
  std::vector<int64_t> in_strides(static_cast<size_t>(nd), 1);
  for (int i = nd - 2; i >= 0; --i)
    in_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(i + 1)] * in_dims[static_cast<size_t>(i + 1)];
  std::vector<int64_t> src_stride(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) src_stride[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(axes[static_cast<size_t>(i)])];
  int64_t total = numel_of(in_dims);
  std::vector<int64_t> coord(static_cast<size_t>(nd), 0);
  int64_t src = 0;
  for (int64_t o = 0; o < total; ++o) {
    out[o] = in[src];
    for (int i = nd - 1; i >= 0; --i) {
      coord[static_cast<size_t>(i)]++;
      src += src_stride[static_cast<size_t>(i)];
      if (coord[static_cast<size_t>(i)] < out_dims[static_cast<size_t>(i)]) break;
      src -= src_stride[static_cast<size_t>(i)] * out_dims[static_cast<size_t>(i)];
      coord[static_cast<size_t>(i)] = 0;
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes) {
  int nd = x.ndim();
  require<T>(static_cast<int>(axes.size()) == nd, "permute: axes size mismatch");
  std::vector<bool> seen(static_cast<size_t>(nd), false);
  for (int a : axes) {
    if (a < 0 || a >= nd || seen[static_cast<size_t>(a)])
      throw std::invalid_argument("permute: axes must be a permutation");
    seen[static_cast<size_t>(a)] = true;
  }
  Shape odims(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) odims[static_cast<size_t>(i)] = x.dim(axes[static_cast<size_t>(i)]);
  std::vector<T> out(static_cast<size_t>(x.numel()));
  permute_copy(x.dims(), x.data().data(), axes, out.data());
  std::vector<int> inv(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) inv[static_cast<size_t>(axes[static_cast<size_t>(i)])] = i;
  Shape out_dims_copy = odims;
  auto bw = [inv, out_dims_copy](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    std::vector<T> tmp(self.gpass.size());
    permute_copy(out_dims_copy, self.gpass.data(), inv, tmp.data());
    for (size_t i = 0; i < tmp.size(); ++i) xn.gpass[i] += tmp[i];
  };
  return make_op_output<T>(std::move(odims), std::move(out), parents_of(x), bw);
}

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
  std::vector<int> axes(static_cast<size_t>(x.ndim()));
  for (int i = 0; i < x.ndim(); ++i) axes[static_cast<size_t>(i)] = i;
  std::swap(axes[static_cast<size_t>(x.ndim() - 1)], axes[static_cast<size_t>(x.ndim() - 2)]);
  return permute(x, axes);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape dims) {
  if (numel_of(dims) != x.numel())
    throw std::invalid_argument("reshape: element count mismatch");
  std::vector<T> out(x.data().begin(), x.data().end());
  auto bw = [](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    for (size_t i = 0; i < self.gpass.size(); ++i) xn.gpass[i] += self.gpass[i];
  };
  return make_op_output<T>(std::move(dims), std::move(out), parents_of(x), bw);
}

// ---- elementwise / reductions ------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dims() != b.dims()) throw std::invalid_argument("add: shape mismatch");
  int64_t n = a.numel();
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  std::vector<T> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = ad[i] + bd[i];
  auto bw = [](Node<T>& self) {
    for (int s = 0; s < 2; ++s) {
      Node<T>& p = *self.parents[static_cast<size_t>(s)];
      if (!p.requires_grad) continue;
      for (size_t i = 0; i < self.gpass.size(); ++i) p.gpass[i] += self.gpass[i];
    }
  };
  return make_op_output<T>(a.dims(), std::move(out), parents_of(a, b), bw);
}

template <typename T>
Tensor<T> add_broadcast0(const Tensor<T>& a, const Tensor<T>& b) {
  require<T>(a.ndim() == b.ndim() + 1, "add_broadcast0: b must drop the leading axis of a");
  for (int i = 0; i < b.ndim(); ++i)
    if (a.dim(i + 1) != b.dim(i))
      throw std::invalid_argument("add_broadcast0: trailing dims differ");
  int64_t B = a.dim(0);
  int64_t R = b.numel();
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  std::vector<T> out(static_cast<size_t>(B * R));
  for (int64_t i = 0; i < B; ++i)
    for (int64_t j = 0; j < R; ++j) out[static_cast<size_t>(i * R + j)] = ad[i * R + j] + bd[j];
  auto bw = [B, R](Node<T>& self) {
    Node<T>& an = *self.parents[0];
    Node<T>& bn = *self.parents[1];
    const T* gy = self.gpass.data();
    if (an.requires_grad)
      for (int64_t i = 0; i < B * R; ++i) an.gpass[static_cast<size_t>(i)] += gy[i];
    if (bn.requires_grad)
      for (int64_t i = 0; i < B; ++i)
        for (int64_t j = 0; j < R; ++j) bn.gpass[static_cast<size_t>(j)] += gy[i * R + j];
  };
  return make_op_output<T>(a.dims(), std::move(out), parents_of(a, b), bw);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dims() != b.dims()) throw std::invalid_argument("mul: shape mismatch");
  int64_t n = a.numel();
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  std::vector<T> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = ad[i] * bd[i];
  auto bw = [](Node<T>& self) {
    Node<T>& an = *self.parents[0];
    Node<T>& bn = *self.parents[1];
    if (an.requires_grad)
      for (size_t i = 0; i < self.gpass.size(); ++i) an.gpass[i] += self.gpass[i] * bn.value[i];
    if (bn.requires_grad)
      for (size_t i = 0; i < self.gpass.size(); ++i) bn.gpass[i] += self.gpass[i] * an.value[i];
  };
  return make_op_output<T>(a.dims(), std::move(out), parents_of(a, b), bw);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double c) {
  int64_t n = x.numel();
  const T* xd = x.data().data();
  std::vector<T> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = static_cast<T>(xd[i] * c);
  auto bw = [c](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    for (size_t i = 0; i < self.gpass.size(); ++i)
      xn.gpass[i] += static_cast<T>(self.gpass[i] * c);
  };
  return make_op_output<T>(x.dims(), std::move(out), parents_of(x), bw);
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  double s = 0;
  for (const T& v : x.data()) s += v;
  auto bw = [](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    T g = self.gpass[0];
    for (T& v : xn.gpass) v += g;
  };
  return make_op_output<T>({1}, {static_cast<T>(s)}, parents_of(x), bw);
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  double s = 0;
  for (const T& v : x.data()) s += v;
  int64_t n = x.numel();
  auto bw = [n](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    T g = static_cast<T>(self.gpass[0] / static_cast<double>(n));
    for (T& v : xn.gpass) v += g;
  };
  return make_op_output<T>({1}, {static_cast<T>(s / static_cast<double>(n))}, parents_of(x), bw);
}

// ---- losses --------------------------------------------------------------------

template <typename T>
Tensor<T> bce_with_logits_mean(const Tensor<T>& logits, const IntMask& targets) {
  if (logits.dims() != targets.dims)
    throw std::invalid_argument("bce_with_logits_mean: logits/target shape mismatch");
  int64_t n = logits.numel();
  const T* z = logits.data().data();
  double s = 0;
  for (int64_t i = 0; i < n; ++i) {
    double v = z[i];
    double t = targets.v[static_cast<size_t>(i)];
    s += std::max(v, 0.0) - v * t + std::log1p(std::exp(-std::abs(v)));
  }
  std::vector<int32_t> tv = targets.v;
  auto bw = [n, tv](Node<T>& self) {
    Node<T>& zn = *self.parents[0];
    if (!zn.requires_grad) return;
    double g = self.gpass[0] / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) {
      double v = zn.value[static_cast<size_t>(i)];
      double sig = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      zn.gpass[static_cast<size_t>(i)] += static_cast<T>(g * (sig - tv[static_cast<size_t>(i)]));
    }
  };
  return make_op_output<T>({1}, {static_cast<T>(s / static_cast<double>(n))},
                           parents_of(logits), bw);
}

template <typename T>
Tensor<T> softmax_ce_mean(const Tensor<T>& logits, const IntMask& targets) {
  require<T>(logits.ndim() == 4, "softmax_ce_mean: logits must be NCHW");
  int64_t N = logits.dim(0), C = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  if (targets.dims != Shape{N, H, W})
    throw std::invalid_argument("softmax_ce_mean: target must be (N,H,W)");
  int64_t hw = H * W;
  int64_t npix = N * hw;
  const T* z = logits.data().data();
  double s = 0;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t p = 0; p < hw; ++p) {
      int32_t t = targets.v[static_cast<size_t>(n * hw + p)];
      if (t < 0 || t >= C)
        throw std::invalid_argument("softmax_ce_mean: target index out of range");
      const T* base = z + n * C * hw + p;
      double m = base[0];
      for (int64_t c = 1; c < C; ++c) m = std::max<double>(m, base[c * hw]);
      double lse = 0;
      for (int64_t c = 0; c < C; ++c) lse += std::exp(base[c * hw] - m);
      s += std::log(lse) + m - base[t * hw];
    }
  std::vector<int32_t> tv = targets.v;
  auto bw = [N, C, hw, npix, tv](Node<T>& self) {
    Node<T>& zn = *self.parents[0];
    if (!zn.requires_grad) return;
    double g = self.gpass[0] / static_cast<double>(npix);
    for (int64_t n = 0; n < N; ++n)
      for (int64_t p = 0; p < hw; ++p) {
        const T* base = zn.value.data() + n * C * hw + p;
        T* dbase = zn.gpass.data() + n * C * hw + p;
        int32_t t = tv[static_cast<size_t>(n * hw + p)];
        double m = base[0];
        for (int64_t c = 1; c < C; ++c) m = std::max<double>(m, base[c * hw]);
        double lse = 0;
        for (int64_t c = 0; c < C; ++c) lse += std::exp(base[c * hw] - m);
        for (int64_t c = 0; c < C; ++c) {
          double soft = std::exp(base[c * hw] - m) / lse;
          dbase[c * hw] += static_cast<T>(g * (soft - (c == t ? 1.0 : 0.0)));
        }
      }
  };
  return make_op_output<T>({1}, {static_cast<T>(s / static_cast<double>(npix))},
                           parents_of(logits), bw);
}

template <typename T>
Tensor<T> soft_dice_loss(const Tensor<T>& probs, const IntMask& targets, double eps) {
  require<T>(probs.ndim() == 4, "soft_dice_loss: probs must be NCHW");
  int64_t N = probs.dim(0), C = probs.dim(1), H = probs.dim(2), W = probs.dim(3);
  if (targets.dims != Shape{N, H, W})
    throw std::invalid_argument("soft_dice_loss: target must be (N,H,W)");
  int64_t hw = H * W;
  // binary mode: single channel against label 1; multiclass: channels 1..C-1.
  std::vector<std::pair<int64_t, int32_t>> cls;
  if (C == 1) {
    cls.emplace_back(0, 1);
  } else {
    for (int64_t c = 1; c < C; ++c) cls.emplace_back(c, static_cast<int32_t>(c));
  }
  const T* pd = probs.data().data();
  size_t ncls = cls.size();
  std::vector<double> s_inter(ncls, 0.0), s_p(ncls, 0.0), s_g(ncls, 0.0);
  for (size_t ci = 0; ci < ncls; ++ci) {
    auto [ch, lab] = cls[ci];
    for (int64_t n = 0; n < N; ++n) {
      const T* p = pd + (n * C + ch) * hw;
      const int32_t* t = targets.v.data() + n * hw;
      for (int64_t i = 0; i < hw; ++i) {
        double pv = p[i];
        double gv = (t[i] == lab) ? 1.0 : 0.0;
        s_inter[ci] += pv * gv;
        s_p[ci] += pv;
        s_g[ci] += gv;
      }
    }
  }
  double loss = 0;
  for (size_t ci = 0; ci < ncls; ++ci)
    loss += 1.0 - (2.0 * s_inter[ci] + eps) / (s_p[ci] + s_g[ci] + eps);
  loss /= static_cast<double>(ncls);
  std::vector<int32_t> tv = targets.v;
  auto bw = [N, C, hw, cls, s_inter, s_p, s_g, eps, tv](Node<T>& self) {
    Node<T>& pn = *self.parents[0];
    if (!pn.requires_grad) return;
    double g = self.gpass[0] / static_cast<double>(cls.size());
    for (size_t ci = 0; ci < cls.size(); ++ci) {
      auto [ch, lab] = cls[ci];
      double D = s_p[ci] + s_g[ci] + eps;
      double num = 2.0 * s_inter[ci] + eps;
      for (int64_t n = 0; n < N; ++n) {
        T* dp = pn.gpass.data() + (n * C + ch) * hw;
        const int32_t* t = tv.data() + n * hw;
        for (int64_t i = 0; i < hw; ++i) {
          double gv = (t[i] == lab) ? 1.0 : 0.0;
          // d/dp of -(2*inter+eps)/D
          dp[i] += static_cast<T>(g * ((num / (D * D)) - (2.0 * gv / D)));
        }
      }
    }
  };
  return make_op_output<T>({1}, {static_cast<T>(loss)}, parents_of(probs), bw);
}

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
  require<T>(x.ndim() == 4, "softmax_channels: input must be NCHW");
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t hw = H * W;
  const T* xd = x.data().data();
  std::vector<T> out(static_cast<size_t>(x.numel()));
  for (int64_t n = 0; n < N; ++n)
    for (int64_t p = 0; p < hw; ++p) {
      const T* base = xd + n * C * hw + p;
      T* q = out.data() + n * C * hw + p;
      double m = base[0];
      for (int64_t c = 1; c < C; ++c) m = std::max<double>(m, base[c * hw]);
      double s = 0;
      for (int64_t c = 0; c < C; ++c) {
        double e = std::exp(base[c * hw] - m);
        q[c * hw] = static_cast<T>(e);
        s += e;
      }
      double inv = 1.0 / s;
      for (int64_t c = 0; c < C; ++c) q[c * hw] = static_cast<T>(q[c * hw] * inv);
    }
  auto bw = [N, C, hw](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    const T* gy = self.gpass.data();
    const T* yd = self.value.data();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t p = 0; p < hw; ++p) {
        const T* g = gy + n * C * hw + p;
        const T* y = yd + n * C * hw + p;
        T* dx = xn.gpass.data() + n * C * hw + p;
        double dot = 0;
        for (int64_t c = 0; c < C; ++c) dot += g[c * hw] * y[c * hw];
        for (int64_t c = 0; c < C; ++c)
          dx[c * hw] += static_cast<T>(y[c * hw] * (g[c * hw] - dot));
      }
  };
  return make_op_output<T>(x.dims(), std::move(out), parents_of(x), bw);
}

// ---- explicit instantiations ------------------------------------------------------

#define DTA_INSTANTIATE_OPS(T)                                                            \
  template BnStats<T> make_bn_stats<T>(int64_t);                                          \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int); \
  template Tensor<T> batchnorm2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                    BnStats<T>&, bool, double, double);                   \
  template Tensor<T> activation<T>(const Tensor<T>&, Activation);                         \
  template Tensor<T> relu<T>(const Tensor<T>&);                                           \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                           \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                        \
  template Tensor<T> maxpool2x2<T>(const Tensor<T>&);                                     \
  template Tensor<T> upsample_bilinear2x<T>(const Tensor<T>&);                            \
  template Tensor<T> concat_channels<T>(const std::vector<Tensor<T>>&);                   \
  template Tensor<T> mul_channel_gate<T>(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> extract_patches<T>(const Tensor<T>&, int);                           \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> layernorm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                  double);                                                \
  template Tensor<T> softmax_lastdim<T>(const Tensor<T>&);                                \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<int>&);               \
  template Tensor<T> transpose_last2<T>(const Tensor<T>&);                                \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                 \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> add_broadcast0<T>(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> scale<T>(const Tensor<T>&, double);                                  \
  template Tensor<T> sum_all<T>(const Tensor<T>&);                                        \
  template Tensor<T> mean_all<T>(const Tensor<T>&);                                       \
  template Tensor<T> bce_with_logits_mean<T>(const Tensor<T>&, const IntMask&);           \
  template Tensor<T> softmax_ce_mean<T>(const Tensor<T>&, const IntMask&);                \
  template Tensor<T> soft_dice_loss<T>(const Tensor<T>&, const IntMask&, double);         \
  template Tensor<T> softmax_channels<T>(const Tensor<T>&);

DTA_INSTANTIATE_OPS(float)
DTA_INSTANTIATE_OPS(double)

}  // namespace dta
