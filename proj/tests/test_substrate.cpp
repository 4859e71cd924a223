#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "dta/gradcheck.hpp"
#include "dta/ops.hpp"
#include "dta/rng.hpp"

using namespace dta;
using D = double;

namespace {

Tensor<D> rand_t(RngState& rng, Shape dims, double lo = -1.0, double hi = 1.0) {
  Tensor<D> t(std::move(dims));
  for (D& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

Tensor<float> rand_f(RngState& rng, Shape dims, double lo = -1.0, double hi = 1.0) {
  Tensor<float> t(std::move(dims));
  for (float& v : t.mutable_data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Fixed random linear functional with weights bounded away from zero: keeps
// the per-coordinate relative error of central differences conditioned.
Tensor<D> probe_weights(RngState& rng, const Shape& dims) {
  Tensor<D> c(dims);
  for (D& v : c.mutable_data()) v = rng.uniform(0.5, 1.5);
  return c;
}

Tensor<D> probed(const Tensor<D>& y, const Tensor<D>& c) { return sum_all(mul(y, c)); }

}  // namespace

TEST_CASE("conv2d counting and identity cases") {
  Tensor<D> x({1, 1, 3, 3}, D(1));
  Tensor<D> w({1, 1, 3, 3}, D(1));
  Tensor<D> b({1}, D(0));
  Tensor<D> y = conv2d(x, w, b, 1);
  CHECK(y.dims() == Shape{1, 1, 3, 3});
  CHECK(y.data()[4] == doctest::Approx(9.0));   // center: full overlap
  CHECK(y.data()[0] == doctest::Approx(4.0));   // corner: 2x2 overlap
  CHECK(y.data()[1] == doctest::Approx(6.0));

  RngState rng(7);
  Tensor<D> x2 = rand_t(rng, {2, 3, 4, 4});
  Tensor<D> w1({3, 3, 1, 1}, D(0));
  auto wd = w1.mutable_data();
  for (int c = 0; c < 3; ++c) wd[static_cast<size_t>(c * 3 + c)] = 1.0;  // identity mix
  Tensor<D> b3({3}, D(0));
  Tensor<D> y2 = conv2d(x2, w1, b3, 0);
  for (int64_t i = 0; i < y2.numel(); ++i)
    CHECK(y2.data()[i] == doctest::Approx(x2.data()[i]));
}

TEST_CASE("conv2d rejects bad construction") {
  Tensor<D> x({1, 2, 4, 4}, D(1));
  Tensor<D> w({1, 3, 3, 3}, D(1));  // channel mismatch
  Tensor<D> b({1}, D(0));
  CHECK_THROWS(conv2d(x, w, b, 1));
  Tensor<D> weven({1, 2, 2, 2}, D(1));
  CHECK_THROWS(conv2d(x, weven, b, 0));
  Tensor<D> wk3({1, 2, 3, 3}, D(1));
  CHECK_THROWS(conv2d(x, wk3, b, 0));  // padding must preserve dims
}

TEST_CASE("conv2d gradcheck") {
  RngState rng(11);
  auto x = rand_t(rng, {2, 3, 5, 5});
  auto w = rand_t(rng, {2, 3, 3, 3});
  auto b = rand_t(rng, {2});
  double err = gradcheck(
      [](auto& in) { return mean_all(conv2d(in[0], in[1], in[2], 1)); }, {x, w, b});
  CHECK(err <= 1e-5);
}

TEST_CASE("batchnorm2d zero-variance and normalization") {
  Tensor<D> x({2, 1, 2, 2}, D(3.25));  // constant channel
  Tensor<D> g({1}, D(1));
  Tensor<D> b({1}, D(0.7));
  BnStats<D> stats;
  Tensor<D> y = batchnorm2d(x, g, b, stats, true);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(0.7));

  RngState rng(5);
  Tensor<D> x2 = rand_t(rng, {4, 3, 5, 5}, -2.0, 2.0);
  Tensor<D> g3({3}, D(1));
  Tensor<D> b3({3}, D(0));
  BnStats<D> st2;
  Tensor<D> y2 = batchnorm2d(x2, g3, b3, st2, true);
  int64_t hw = 25, m = 4 * hw;
  for (int64_t c = 0; c < 3; ++c) {
    double mu = 0, var = 0;
    for (int64_t n = 0; n < 4; ++n)
      for (int64_t i = 0; i < hw; ++i) mu += y2.data()[(n * 3 + c) * hw + i];
    mu /= static_cast<double>(m);
    for (int64_t n = 0; n < 4; ++n)
      for (int64_t i = 0; i < hw; ++i) {
        double d = y2.data()[(n * 3 + c) * hw + i] - mu;
        var += d * d;
      }
    var /= static_cast<double>(m);
    CHECK(std::abs(mu) < 1e-4);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("batchnorm2d eval without stats is an error") {
  Tensor<D> x({1, 2, 2, 2}, D(1));
  Tensor<D> g({2}, D(1));
  Tensor<D> b({2}, D(0));
  BnStats<D> stats;
  CHECK_THROWS(batchnorm2d(x, g, b, stats, false));
  batchnorm2d(x, g, b, stats, true);
  CHECK_NOTHROW(batchnorm2d(x, g, b, stats, false));
}

TEST_CASE("batchnorm2d gradcheck") {
  RngState rng(13);
  auto x = rand_t(rng, {2, 4, 3, 3});
  auto g = rand_t(rng, {4}, 0.5, 1.5);
  auto b = rand_t(rng, {4});
  Tensor<D> c = probe_weights(rng, {2, 4, 3, 3});
  double err = gradcheck(
      [c](auto& in) {
        BnStats<D> stats;
        return probed(batchnorm2d(in[0], in[1], in[2], stats, true), c);
      },
      {x, g, b});
  CHECK(err <= 1e-5);
}

TEST_CASE("activation point values") {
  Tensor<D> x({4}, {-1.5, 2.0, 0.0, 0.0});
  auto r = relu(x);
  CHECK(r.data()[0] == 0.0);
  CHECK(r.data()[1] == 2.0);
  auto s = sigmoid(x);
  CHECK(s.data()[2] == doctest::Approx(0.5));
  auto g = gelu(x);
  CHECK(g.data()[3] == doctest::Approx(0.0));
  // gelu(1) = 0.5*(1+erf(1/sqrt(2))) = Phi(1)
  Tensor<D> one({1}, {1.0});
  CHECK(gelu(one).item() == doctest::Approx(0.8413447460685429).epsilon(1e-12));
}

TEST_CASE("activation gradchecks away from the relu kink") {
  RngState rng(17);
  for (Activation kind : {Activation::relu, Activation::gelu, Activation::sigmoid}) {
    // relu kink at 0 and the gelu derivative root near -0.7517 both break the
    // conditioning of central differences; sample clear of them
    auto x = kind == Activation::gelu ? rand_t(rng, {3, 5}, -0.4, 2.0)
                                      : rand_t(rng, {3, 5}, -2.0, 2.0);
    for (D& v : x.mutable_data())
      if (std::abs(v) < 1e-2) v = v < 0 ? -1e-2 : 1e-2;
    double err = gradcheck(
        [kind](auto& in) { return mean_all(activation(in[0], kind)); }, {x});
    CHECK(err <= 1e-6);
  }
}

TEST_CASE("maxpool2x2 values, ties and errors") {
  Tensor<D> x({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(maxpool2x2(x).item() == 4.0);

  Tensor<D> c({2, 3, 4, 4}, D(0.25));
  auto y = maxpool2x2(c);
  CHECK(y.dims() == Shape{2, 3, 2, 2});
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 0.25);

  Tensor<D> odd({1, 1, 3, 4}, D(0));
  CHECK_THROWS(maxpool2x2(odd));

  // tie: gradient goes to the first (row-major) maximum
  Tensor<D> tie({1, 1, 2, 2}, {5, 5, 5, 5});
  tie.set_requires_grad(true);
  backward(sum_all(maxpool2x2(tie)));
  CHECK(tie.grad()[0] == 1.0);
  CHECK(tie.grad()[1] == 0.0);
  CHECK(tie.grad()[3] == 0.0);
}

TEST_CASE("maxpool2x2 gradcheck with distinct values") {
  Tensor<D> x({1, 2, 4, 4});
  auto d = x.mutable_data();
  for (size_t i = 0; i < d.size(); ++i) d[i] = 0.17 * static_cast<double>(i) - 1.3;
  double err = gradcheck([](auto& in) { return mean_all(maxpool2x2(in[0])); }, {x});
  CHECK(err <= 1e-6);
}

TEST_CASE("upsample_bilinear2x constants and the direct-formula oracle") {
  Tensor<D> c({1, 2, 3, 3}, D(1.75));
  auto y = upsample_bilinear2x(c);
  CHECK(y.dims() == Shape{1, 2, 6, 6});
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(1.75));

  Tensor<D> one({1, 1, 1, 1}, {0.4});
  auto y1 = upsample_bilinear2x(one);
  CHECK(y1.dims() == Shape{1, 1, 2, 2});
  for (int64_t i = 0; i < 4; ++i) CHECK(y1.data()[i] == doctest::Approx(0.4));

  // independent half-pixel-centers evaluation of the 2x2 case
  Tensor<D> x({1, 1, 2, 2}, {0, 1, 2, 3});
  auto up = upsample_bilinear2x(x);
  const double src[2][2] = {{0, 1}, {2, 3}};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double u = (i + 0.5) / 2.0 - 0.5;
      double v = (j + 0.5) / 2.0 - 0.5;
      int i0 = static_cast<int>(std::floor(u)), j0 = static_cast<int>(std::floor(v));
      double a = u - i0, bfr = v - j0;
      auto cl = [](int k) { return std::min(1, std::max(0, k)); };
      double expect = (1 - a) * ((1 - bfr) * src[cl(i0)][cl(j0)] + bfr * src[cl(i0)][cl(j0 + 1)]) +
                      a * ((1 - bfr) * src[cl(i0 + 1)][cl(j0)] + bfr * src[cl(i0 + 1)][cl(j0 + 1)]);
      CHECK(up.data()[i * 4 + j] == doctest::Approx(expect).epsilon(1e-6));
    }
}

TEST_CASE("linear identity and arithmetic") {
  RngState rng(23);
  auto x = rand_t(rng, {3, 4});
  Tensor<D> wid({4, 4}, D(0));
  auto wd = wid.mutable_data();
  for (int i = 0; i < 4; ++i) wd[static_cast<size_t>(i * 4 + i)] = 1.0;
  Tensor<D> b0({4}, D(0));
  auto y = linear(x, wid, b0);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));

  Tensor<D> x2({1, 2}, {1, 2});
  Tensor<D> w2({2, 1}, {3, 4});
  Tensor<D> b2({1}, {5});
  CHECK(linear(x2, w2, b2).data()[0] == doctest::Approx(16.0));

  Tensor<D> bad({1, 3}, D(0));
  CHECK_THROWS(linear(bad, w2, b2));
}

TEST_CASE("linear gradcheck") {
  RngState rng(29);
  auto x = rand_t(rng, {4, 7});
  auto w = rand_t(rng, {7, 5});
  auto b = rand_t(rng, {5});
  double err =
      gradcheck([](auto& in) { return mean_all(linear(in[0], in[1], in[2])); }, {x, w, b});
  CHECK(err <= 1e-6);
}

TEST_CASE("layernorm zero-variance and normalization") {
  Tensor<D> x({2, 4}, D(2.5));
  Tensor<D> g({4}, D(1));
  Tensor<D> b({4}, D(0));
  auto y = layernorm(x, g, b);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(std::abs(y.data()[i]) < 1e-9);

  RngState rng(31);
  auto x2 = rand_t(rng, {3, 8}, -2.0, 2.0);
  auto y2 = layernorm(x2, Tensor<D>({8}, D(1)), Tensor<D>({8}, D(0)));
  for (int64_t r = 0; r < 3; ++r) {
    double mu = 0, var = 0;
    for (int64_t j = 0; j < 8; ++j) mu += y2.data()[r * 8 + j];
    mu /= 8;
    for (int64_t j = 0; j < 8; ++j) {
      double d = y2.data()[r * 8 + j] - mu;
      var += d * d;
    }
    var /= 8;
    CHECK(std::abs(mu) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("layernorm gradcheck") {
  RngState rng(37);
  auto x = rand_t(rng, {3, 8});
  auto g = rand_t(rng, {8}, 0.5, 1.5);
  auto b = rand_t(rng, {8});
  Tensor<D> c = probe_weights(rng, {3, 8});
  double err = gradcheck(
      [c](auto& in) { return probed(layernorm(in[0], in[1], in[2]), c); }, {x, g, b});
  CHECK(err <= 1e-5);
}

TEST_CASE("softmax analytic values and stability") {
  Tensor<D> x({1, 2}, {0, 0});
  auto y = softmax_lastdim(x);
  CHECK(y.data()[0] == doctest::Approx(0.5));
  Tensor<D> x2({1, 2}, {std::log(2.0), 0.0});
  auto y2 = softmax_lastdim(x2);
  CHECK(y2.data()[0] == doctest::Approx(2.0 / 3.0));
  CHECK(y2.data()[1] == doctest::Approx(1.0 / 3.0));

  RngState rng(41);
  auto big = rand_t(rng, {20, 6}, -50.0, 50.0);
  auto yb = softmax_lastdim(big);
  for (int64_t r = 0; r < 20; ++r) {
    double s = 0;
    for (int64_t j = 0; j < 6; ++j) {
      double v = yb.data()[r * 6 + j];
      CHECK(std::isfinite(v));
      s += v;
    }
    CHECK(std::abs(s - 1.0) <= 1e-6);
  }
}

TEST_CASE("concat_channels shape, identity and errors") {
  RngState rng(43);
  auto a = rand_f(rng, {2, 2, 3, 3});
  auto b = rand_f(rng, {2, 3, 3, 3});
  auto y = concat_channels<float>({a, b});
  CHECK(y.dims() == Shape{2, 5, 3, 3});
  auto single = concat_channels<float>({a});
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(single.data()[i] == a.data()[i]);
  auto bad = rand_f(rng, {2, 2, 4, 3});
  CHECK_THROWS(concat_channels<float>({a, bad}));
}

TEST_CASE("concat_channels gradcheck") {
  RngState rng(47);
  auto a = rand_t(rng, {2, 2, 3, 3});
  auto b = rand_t(rng, {2, 3, 3, 3});
  Tensor<D> c = probe_weights(rng, {2, 5, 3, 3});
  double err = gradcheck(
      [c](auto& in) { return probed(concat_channels<D>({in[0], in[1]}), c); }, {a, b});
  CHECK(err <= 1e-6);
}

TEST_CASE("backward basics") {
  RngState rng(53);
  auto x = rand_t(rng, {3, 4});
  x.set_requires_grad(true);
  backward(sum_all(x));
  for (size_t i = 0; i < 12; ++i) CHECK(x.grad()[i] == 1.0);

  auto x2 = rand_t(rng, {2, 3});
  x2.set_requires_grad(true);
  backward(scale(mean_all(mul(x2, x2)), 0.0));
  for (size_t i = 0; i < 6; ++i) CHECK(x2.grad()[i] == 0.0);

  CHECK_THROWS(backward(x));  // non-scalar
  auto no_graph = rand_t(rng, {1});
  CHECK_THROWS(backward(no_graph));  // nothing recorded
}

TEST_CASE("backward accumulation doubles exactly") {
  RngState rng(59);
  auto x = rand_t(rng, {4, 4});
  x.set_requires_grad(true);
  auto loss = mean_all(mul(x, x));
  x.zero_grad();
  backward(loss);
  std::vector<D> once(x.grad().begin(), x.grad().end());
  backward(loss);
  for (size_t i = 0; i < once.size(); ++i) CHECK(x.grad()[i] == 2.0 * once[i]);
}

TEST_CASE("composite chain gradcheck") {
  RngState rng(61);
  auto x = rand_t(rng, {1, 2, 4, 4});
  auto w = rand_t(rng, {3, 2, 3, 3});
  auto b = rand_t(rng, {3});
  auto g = rand_t(rng, {3}, 0.5, 1.5);
  auto be = rand_t(rng, {3});
  auto lw = rand_t(rng, {12, 2});
  auto lb = rand_t(rng, {2});
  Tensor<D> c = probe_weights(rng, {1, 2});
  // conv bias stays constant: batch-norm absorbs it, so its true gradient is
  // identically zero and unusable as a finite-difference denominator
  double err = gradcheck(
      [c, b](auto& in) {
        BnStats<D> stats;
        auto h = conv2d(in[0], in[1], b, 1);
        h = batchnorm2d(h, in[2], in[3], stats, true);
        h = relu(h);
        h = maxpool2x2(h);
        h = reshape(h, {1, h.numel()});
        h = linear(h, in[4], in[5]);
        return probed(h, c);
      },
      {x, w, g, be, lw, lb}, 1e-5);
  CHECK(err <= 1e-4);
}

TEST_CASE("batchnorm absorbs the preceding conv bias") {
  RngState rng(79);
  auto x = rand_t(rng, {2, 2, 4, 4});
  auto w = rand_t(rng, {3, 2, 3, 3});
  auto b = rand_t(rng, {3});
  auto g = rand_t(rng, {3}, 0.5, 1.5);
  auto be = rand_t(rng, {3});
  b.set_requires_grad(true);
  BnStats<D> stats;
  auto y = batchnorm2d(conv2d(x, w, b, 1), g, be, stats, true);
  backward(mean_all(mul(y, y)));
  for (D v : b.grad()) CHECK(std::abs(v) <= 1e-12);
}

TEST_CASE("gradcheck calibration: exactness, kink distance, detector sensitivity") {
  RngState rng(67);
  auto x = rand_t(rng, {5});
  auto w = rand_t(rng, {5, 3});
  auto b = rand_t(rng, {3});
  Tensor<D> xr = reshape(x, {1, 5});
  double lin_err = gradcheck(
      [](auto& in) { return mean_all(linear(reshape(in[0], {1, 5}), in[1], in[2])); },
      {x, w, b});
  CHECK(lin_err <= 1e-8);

  Tensor<D> pm({2}, {1.0, -1.0});
  double relu_err = gradcheck([](auto& in) { return sum_all(relu(in[0])); }, {pm});
  CHECK(relu_err <= 1e-6);

  // op whose declared gradient is 1.01x the true one must be caught
  auto corrupt = [](const Tensor<D>& t) {
    std::vector<D> v(t.data().begin(), t.data().end());
    return make_op_output<D>(
        t.dims(), std::move(v), {t.node()}, [](Node<D>& self) {
          Node<D>& p = *self.parents[0];
          for (size_t i = 0; i < self.gpass.size(); ++i) p.gpass[i] += 1.01 * self.gpass[i];
        });
  };
  auto y = rand_t(rng, {4});
  double bad_err = gradcheck([&](auto& in) { return sum_all(corrupt(in[0])); }, {y});
  CHECK(bad_err >= 5e-3);
}

TEST_CASE("gradcheck rejects non-finite outputs") {
  Tensor<D> x({3}, {1.0, 2.0, 3.0});
  CHECK_THROWS(gradcheck(
      [](auto& in) { return scale(sum_all(in[0]), std::numeric_limits<double>::infinity()); },
      {x}));
}

TEST_CASE("property: dense-op gradchecks across random shapes") {
  RngState rng(171);
  for (int rep = 0; rep < 5; ++rep) {
    int64_t r = 1 + rng.uniform_int(5);
    int64_t kin = 2 + rng.uniform_int(7);
    int64_t kout = 1 + rng.uniform_int(6);
    auto x = rand_t(rng, {r, kin});
    auto w = rand_t(rng, {kin, kout});
    auto b = rand_t(rng, {kout});
    CHECK(gradcheck([](auto& in) { return mean_all(linear(in[0], in[1], in[2])); },
                    {x, w, b}) <= 1e-4);

    auto g = rand_t(rng, {kin}, 0.5, 1.5);
    auto be = rand_t(rng, {kin});
    Tensor<D> c = probe_weights(rng, {r, kin});
    CHECK(gradcheck([c](auto& in) { return probed(layernorm(in[0], in[1], in[2]), c); },
                    {x, g, be}) <= 1e-4);
    CHECK(gradcheck([c](auto& in) { return probed(softmax_lastdim(in[0]), c); }, {x}) <=
          1e-4);

    auto xs = rand_t(rng, {r, kin}, -2.0, 2.0);
    for (D& v : xs.mutable_data())
      if (std::abs(v) < 1e-2) v = 1e-2;
    CHECK(gradcheck([](auto& in) { return mean_all(relu(in[0])); }, {xs}) <= 1e-4);
    CHECK(gradcheck([](auto& in) { return mean_all(sigmoid(in[0])); }, {xs}) <= 1e-4);
    auto xg = rand_t(rng, {r, kin}, -0.4, 2.0);
    CHECK(gradcheck([](auto& in) { return mean_all(gelu(in[0])); }, {xg}) <= 1e-4);
  }
}

TEST_CASE("property: channel-op gradchecks across random shapes") {
  RngState rng(173);
  for (int rep = 0; rep < 5; ++rep) {
    int64_t n = 1 + rng.uniform_int(2);
    int64_t c1 = 1 + rng.uniform_int(3);
    int64_t c2 = 1 + rng.uniform_int(3);
    int64_t h = 2 * (1 + rng.uniform_int(2));
    int64_t w = 2 * (1 + rng.uniform_int(2));
    auto a = rand_t(rng, {n, c1, h, w});
    auto b = rand_t(rng, {n, c2, h, w});
    Tensor<D> cw = probe_weights(rng, {n, c1 + c2, h, w});
    CHECK(gradcheck(
              [cw](auto& in) { return probed(concat_channels<D>({in[0], in[1]}), cw); },
              {a, b}) <= 1e-4);

    auto g = rand_t(rng, {c1}, 0.5, 1.5);
    auto be = rand_t(rng, {c1});
    Tensor<D> cb = probe_weights(rng, {n, c1, h, w});
    CHECK(gradcheck(
              [cb](auto& in) {
                BnStats<D> stats;
                return probed(batchnorm2d(in[0], in[1], in[2], stats, true), cb);
              },
              {a, g, be}) <= 1e-4);
  }
}

TEST_CASE("property: op gradchecks across random shapes") {
  RngState rng(71);
  for (int rep = 0; rep < 5; ++rep) {
    int64_t n = 1 + rng.uniform_int(2);
    int64_t c = 1 + rng.uniform_int(3);
    int64_t h = 2 * (1 + rng.uniform_int(3));
    int64_t w = 2 * (1 + rng.uniform_int(3));
    auto x = rand_t(rng, {n, c, h, w});
    auto k = rand_t(rng, {2, c, 3, 3});
    auto b = rand_t(rng, {2});
    double conv_err = gradcheck(
        [](auto& in) { return mean_all(conv2d(in[0], in[1], in[2], 1)); }, {x, k, b});
    CHECK(conv_err <= 1e-4);

    auto xp = rand_t(rng, {n, c, h, w});
    for (D& v : xp.mutable_data()) v += 0.01 * rng.u01();  // break pooling ties
    double pool_err =
        gradcheck([](auto& in) { return mean_all(maxpool2x2(in[0])); }, {xp});
    CHECK(pool_err <= 1e-4);

    auto xu = rand_t(rng, {n, c, h, w});
    Tensor<D> cw = probe_weights(rng, {n, c, 2 * h, 2 * w});
    double up_err = gradcheck(
        [cw](auto& in) { return probed(upsample_bilinear2x(in[0]), cw); }, {xu});
    CHECK(up_err <= 1e-4);
  }
}

TEST_CASE("property: spatial contracts over random even extents") {
  RngState rng(73);
  for (int rep = 0; rep < 8; ++rep) {
    int64_t h = 2 * (1 + rng.uniform_int(8));  // 2..16
    int64_t w = 2 * (1 + rng.uniform_int(8));
    int64_t c = 1 + rng.uniform_int(4);
    auto x = rand_f(rng, {2, c, h, w});
    auto k = rand_f(rng, {3, c, 3, 3});
    auto b = rand_f(rng, {3});
    CHECK(conv2d(x, k, b, 1).dims() == Shape{2, 3, h, w});
    CHECK(maxpool2x2(x).dims() == Shape{2, c, h / 2, w / 2});
    CHECK(upsample_bilinear2x(x).dims() == Shape{2, c, 2 * h, 2 * w});
  }
}

TEST_CASE("determinism: identical seeds give bit-identical forward and grads") {
  auto run = [] {
    RngState rng(97);
    auto x = rand_f(rng, {2, 3, 8, 8});
    auto w = rand_f(rng, {4, 3, 3, 3});
    auto b = rand_f(rng, {4});
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    auto y = relu(conv2d(x, w, b, 1));
    auto loss = mean_all(mul(y, y));
    backward(loss);
    std::vector<float> out(y.data().begin(), y.data().end());
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    out.push_back(loss.item());
    return out;
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("rng streams are independent and reproducible") {
  RngState a(123);
  RngState b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  RngState s1 = RngState(123).stream("alpha");
  RngState s1b = RngState(123).stream("alpha");
  RngState s2 = RngState(123).stream("beta");
  bool differs = false;
  for (int i = 0; i < 16; ++i) {
    uint64_t v = s1.next_u64();
    CHECK(v == s1b.next_u64());
    if (v != s2.next_u64()) differs = true;
  }
  CHECK(differs);

  // draws on the root do not shift derived streams
  RngState root(55);
  RngState before = root.stream("x");
  root.next_u64();
  RngState after = root.stream("x");
  CHECK(before.next_u64() == after.next_u64());
}

TEST_CASE("gradcheck suite runs green") {
  auto results = run_gradcheck_suite(2024);
  for (const auto& r : results) {
    INFO(r.name, " err=", r.max_rel_err);
    CHECK(r.ok);
  }
}
