#include "dta/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dta/loss.hpp"
#include "dta/modules.hpp"
#include "dta/rng.hpp"

namespace dta {

double gradcheck(const GradFn& fn, std::vector<Tensor<double>> inputs, double delta) {
  for (auto& in : inputs) in.set_requires_grad(true);

  Tensor<double> loss = fn(inputs);
  if (loss.numel() != 1) throw std::invalid_argument("gradcheck: fn must return a scalar");
  if (!std::isfinite(loss.item())) throw std::runtime_error("gradcheck: non-finite output");
  for (auto& in : inputs) in.zero_grad();
  backward(loss);

  double max_rel = 0.0;
  NoGradGuard ng;
  for (auto& in : inputs) {
    auto vals = in.mutable_data();
    auto g = in.has_grad() ? in.grad() : std::span<const double>{};
    for (size_t i = 0; i < vals.size(); ++i) {
      double orig = vals[i];
      vals[i] = orig + delta;
      double fp = fn(inputs).item();
      vals[i] = orig - delta;
      double fm = fn(inputs).item();
      vals[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw std::runtime_error("gradcheck: non-finite output under perturbation");
      double numeric = (fp - fm) / (2.0 * delta);
      double analytic = g.empty() ? 0.0 : g[i];
      double rel = std::abs(analytic - numeric) /
                   std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      if (rel > max_rel) max_rel = rel;
    }
  }
  return max_rel;
}

namespace {

using D = double;

Tensor<D> rand_tensor(RngState& rng, Shape dims, double lo = -1.0, double hi = 1.0) {
  Tensor<D> t(dims);
  for (D& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

IntMask rand_mask(RngState& rng, Shape dims, int32_t classes) {
  IntMask m(dims);
  for (int32_t& v : m.v) v = static_cast<int32_t>(rng.uniform_int(classes));
  return m;
}

// Keeps relu inputs away from the kink so central differences stay valid.
void avoid_kink(Tensor<D>& t, double margin = 5e-3) {
  for (D& v : t.mutable_data())
    if (std::abs(v) < margin) v = v < 0 ? -margin : margin;
}

// Fixed random linear functional with weights in [0.5, 1.5]: keeps every
// output coordinate's contribution well away from zero, so the relative
// error of central differences stays conditioned.
Tensor<D> probe_weights(RngState& rng, const Shape& dims) {
  Tensor<D> c(dims);
  for (D& v : c.mutable_data()) v = rng.uniform(0.5, 1.5);
  return c;
}

Tensor<D> probed(const Tensor<D>& y, const Tensor<D>& c) { return sum_all(mul(y, c)); }

struct Check {
  std::string name;
  double limit;
  std::function<double()> run;
};

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(uint64_t seed) {
  RngState root(seed);
  std::vector<Check> checks;

  checks.push_back({"conv2d_3x3", 1e-4, [&] {
    RngState rng = root.stream("conv3");
    auto x = rand_tensor(rng, {2, 3, 5, 5});
    auto w = rand_tensor(rng, {4, 3, 3, 3});
    auto b = rand_tensor(rng, {4});
    return gradcheck([](auto& in) { return mean_all(conv2d(in[0], in[1], in[2], 1)); },
                     {x, w, b});
  }});
  checks.push_back({"conv2d_1x1", 1e-4, [&] {
    RngState rng = root.stream("conv1");
    auto x = rand_tensor(rng, {2, 4, 3, 3});
    auto w = rand_tensor(rng, {2, 4, 1, 1});
    auto b = rand_tensor(rng, {2});
    return gradcheck([](auto& in) { return mean_all(conv2d(in[0], in[1], in[2], 0)); },
                     {x, w, b});
  }});
  checks.push_back({"batchnorm2d_train", 1e-4, [&] {
    RngState rng = root.stream("bn");
    auto x = rand_tensor(rng, {2, 4, 3, 3});
    auto g = rand_tensor(rng, {4}, 0.5, 1.5);
    auto b = rand_tensor(rng, {4});
    Tensor<D> c = probe_weights(rng, {2, 4, 3, 3});
    return gradcheck(
        [c](auto& in) {
          BnStats<D> stats;
          return probed(batchnorm2d(in[0], in[1], in[2], stats, true), c);
        },
        {x, g, b});
  }});
  checks.push_back({"relu", 1e-6, [&] {
    RngState rng = root.stream("relu");
    auto x = rand_tensor(rng, {3, 7});
    avoid_kink(x);
    return gradcheck([](auto& in) { return mean_all(relu(in[0])); }, {x});
  }});
  checks.push_back({"gelu", 1e-6, [&] {
    RngState rng = root.stream("gelu");
    // gelu' vanishes near x = -0.7517; keep sample points off that root so
    // the relative-error denominator stays meaningful
    auto x = rand_tensor(rng, {3, 7}, -0.4, 2.0);
    return gradcheck([](auto& in) { return mean_all(gelu(in[0])); }, {x});
  }});
  checks.push_back({"sigmoid", 1e-6, [&] {
    RngState rng = root.stream("sigmoid");
    auto x = rand_tensor(rng, {3, 7}, -3.0, 3.0);
    return gradcheck([](auto& in) { return mean_all(sigmoid(in[0])); }, {x});
  }});
  checks.push_back({"maxpool2x2", 1e-6, [&] {
    Tensor<D> x({1, 2, 4, 4});
    auto d = x.mutable_data();
    for (size_t i = 0; i < d.size(); ++i)
      d[i] = static_cast<double>(i % 7) * 0.31 + static_cast<double>(i) * 0.013;
    return gradcheck([](auto& in) { return mean_all(maxpool2x2(in[0])); }, {x});
  }});
  checks.push_back({"upsample_bilinear2x", 1e-6, [&] {
    RngState rng = root.stream("upsample");
    auto x = rand_tensor(rng, {1, 2, 3, 4});
    Tensor<D> c = probe_weights(rng, {1, 2, 6, 8});
    return gradcheck(
        [c](auto& in) { return probed(upsample_bilinear2x(in[0]), c); }, {x});
  }});
  checks.push_back({"linear", 1e-6, [&] {
    RngState rng = root.stream("linear");
    auto x = rand_tensor(rng, {4, 7});
    auto w = rand_tensor(rng, {7, 5});
    auto b = rand_tensor(rng, {5});
    return gradcheck([](auto& in) { return mean_all(linear(in[0], in[1], in[2])); },
                     {x, w, b});
  }});
  checks.push_back({"layernorm", 1e-5, [&] {
    RngState rng = root.stream("ln");
    auto x = rand_tensor(rng, {3, 8});
    auto g = rand_tensor(rng, {8}, 0.5, 1.5);
    auto b = rand_tensor(rng, {8});
    Tensor<D> c = probe_weights(rng, {3, 8});
    return gradcheck(
        [c](auto& in) { return probed(layernorm(in[0], in[1], in[2]), c); }, {x, g, b});
  }});
  checks.push_back({"softmax_lastdim", 1e-5, [&] {
    RngState rng = root.stream("softmax");
    auto x = rand_tensor(rng, {4, 6}, -2.0, 2.0);
    Tensor<D> c = probe_weights(rng, {4, 6});
    return gradcheck([c](auto& in) { return probed(softmax_lastdim(in[0]), c); }, {x});
  }});
  checks.push_back({"concat_channels", 1e-6, [&] {
    RngState rng = root.stream("concat");
    auto a = rand_tensor(rng, {2, 2, 3, 3});
    auto b = rand_tensor(rng, {2, 3, 3, 3});
    Tensor<D> c = probe_weights(rng, {2, 5, 3, 3});
    return gradcheck(
        [c](auto& in) { return probed(concat_channels<D>({in[0], in[1]}), c); }, {a, b});
  }});
  checks.push_back({"matmul", 1e-5, [&] {
    RngState rng = root.stream("matmul");
    auto a = rand_tensor(rng, {2, 3, 4, 5});
    auto b = rand_tensor(rng, {2, 3, 5, 6});
    return gradcheck([](auto& in) { return mean_all(matmul(in[0], in[1])); }, {a, b});
  }});
  checks.push_back({"permute", 1e-6, [&] {
    RngState rng = root.stream("permute");
    auto x = rand_tensor(rng, {2, 3, 4, 5});
    Tensor<D> c = probe_weights(rng, {2, 4, 3, 5});
    return gradcheck(
        [c](auto& in) { return probed(permute(in[0], {0, 2, 1, 3}), c); }, {x});
  }});
  checks.push_back({"extract_patches", 1e-6, [&] {
    RngState rng = root.stream("patches");
    auto x = rand_tensor(rng, {1, 2, 4, 4});
    Tensor<D> c = probe_weights(rng, {1, 4, 8});
    return gradcheck([c](auto& in) { return probed(extract_patches(in[0], 2), c); }, {x});
  }});
  checks.push_back({"mul_channel_gate", 1e-6, [&] {
    RngState rng = root.stream("gatemul");
    auto g = rand_tensor(rng, {2, 1, 3, 3});
    auto x = rand_tensor(rng, {2, 4, 3, 3});
    return gradcheck([](auto& in) { return mean_all(mul_channel_gate(in[0], in[1])); },
                     {g, x});
  }});
  checks.push_back({"bce_with_logits", 1e-5, [&] {
    RngState rng = root.stream("bce");
    auto z = rand_tensor(rng, {1, 1, 4, 4}, -2.0, 2.0);
    IntMask t = rand_mask(rng, {1, 1, 4, 4}, 2);
    return gradcheck([t](auto& in) { return bce_with_logits_mean(in[0], t); }, {z});
  }});
  checks.push_back({"softmax_ce", 1e-5, [&] {
    RngState rng = root.stream("ce");
    auto z = rand_tensor(rng, {2, 3, 4, 4}, -2.0, 2.0);
    IntMask t = rand_mask(rng, {2, 4, 4}, 3);
    return gradcheck([t](auto& in) { return softmax_ce_mean(in[0], t); }, {z});
  }});
  checks.push_back({"soft_dice", 1e-5, [&] {
    RngState rng = root.stream("dice");
    auto p = rand_tensor(rng, {1, 1, 6, 6}, 0.05, 0.95);
    IntMask t = rand_mask(rng, {1, 6, 6}, 2);
    return gradcheck([t](auto& in) { return soft_dice_loss(in[0], t); }, {p});
  }});

  // composite blocks
  checks.push_back({"resblock", 1e-4, [&] {
    RngState rng = root.stream("resb");
    ParamRegistry<D> reg(seed + 11);
    ResBlock<D> res(Scope<D>{&reg, "res"}, 2, 3);
    auto x = rand_tensor(rng, {1, 2, 4, 4});
    Tensor<D> c = probe_weights(rng, {1, 3, 4, 4});
    return gradcheck(
        [&res, c](auto& in) { return probed(res.forward(in[0], true), c); }, {x}, 1e-5);
  }});
  checks.push_back({"upresblock", 1e-4, [&] {
    RngState rng = root.stream("upr");
    ParamRegistry<D> reg(seed + 12);
    UpResBlock<D> upr(Scope<D>{&reg, "upr"}, 3, 2);
    auto x = rand_tensor(rng, {1, 3, 3, 3});
    Tensor<D> c = probe_weights(rng, {1, 2, 6, 6});
    return gradcheck([&upr, c](auto& in) { return probed(upr.forward(in[0], true), c); },
                     {x}, 1e-5);
  }});
  checks.push_back({"attention_gate", 1e-4, [&] {
    RngState rng = root.stream("ag");
    ParamRegistry<D> reg(seed + 13);
    AttentionGate<D> gate(Scope<D>{&reg, "gate"}, 4, 6);
    // eval-mode BNs: fixed stats keep the map smooth for differencing
    auto x = rand_tensor(rng, {1, 4, 3, 3});
    auto g = rand_tensor(rng, {1, 6, 3, 3});
    Tensor<D> warm_x = rand_tensor(rng, {2, 4, 3, 3});
    Tensor<D> warm_g = rand_tensor(rng, {2, 6, 3, 3});
    gate.forward(warm_x, warm_g, true);  // populate running stats
    Tensor<D> c = probe_weights(rng, {1, 4, 3, 3});
    return gradcheck(
        [&gate, c](auto& in) { return probed(gate.forward(in[0], in[1], false), c); },
        {x, g}, 1e-5);
  }});
  checks.push_back({"transformer_layer", 1e-4, [&] {
    RngState rng = root.stream("trlayer");
    ParamRegistry<D> reg(seed + 14);
    TransformerLayer<D> layer(Scope<D>{&reg, "layer"}, 8, 2, 16);
    auto z = rand_tensor(rng, {1, 4, 8});
    Tensor<D> c = probe_weights(rng, {1, 4, 8});
    return gradcheck([&layer, c](auto& in) { return probed(layer.forward(in[0]), c); }, {z});
  }});
  checks.push_back({"hybrid_loss", 1e-4, [&] {
    RngState rng = root.stream("hybrid");
    auto les = rand_tensor(rng, {1, 1, 4, 4}, -2.0, 2.0);
    auto org = rand_tensor(rng, {1, 1, 4, 4}, -2.0, 2.0);
    IntMask lt = rand_mask(rng, {1, 4, 4}, 2);
    IntMask ot = rand_mask(rng, {1, 4, 4}, 2);
    LossWeights w;
    return gradcheck(
        [lt, ot, w](auto& in) { return hybrid_loss(in[0], in[1], lt, ot, w); }, {les, org});
  }});
  checks.push_back({"composite_chain", 1e-4, [&] {
    // The chain mixes relu kinks and pool argmax switches; central
    // differences need a draw whose pre-relu values and pool-window gaps
    // carry a safe margin, so scan streams deterministically for one.
    for (int t = 0; t < 64; ++t) {
      RngState rng = root.stream("chain." + std::to_string(t));
      auto x = rand_tensor(rng, {1, 2, 4, 4});
      auto w = rand_tensor(rng, {3, 2, 3, 3});
      auto b = rand_tensor(rng, {3});
      auto g = rand_tensor(rng, {3}, 0.5, 1.5);
      auto be = rand_tensor(rng, {3});
      auto lw = rand_tensor(rng, {12, 2});
      auto lb = rand_tensor(rng, {2});
      Tensor<D> c = probe_weights(rng, {1, 2});
      {
        NoGradGuard ng;
        BnStats<D> stats;
        auto pre = batchnorm2d(conv2d(x, w, b, 1), g, be, stats, true);
        double kink = 1e9, gap = 1e9;
        for (D v : pre.data()) kink = std::min(kink, std::abs(static_cast<double>(v)));
        auto pooled_in = relu(pre);
        const D* pd = pooled_in.data().data();
        for (int64_t ch = 0; ch < 3; ++ch)
          for (int64_t y = 0; y < 2; ++y)
            for (int64_t xx = 0; xx < 2; ++xx) {
              double vals[4];
              for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx)
                  vals[dy * 2 + dx] = pd[ch * 16 + (2 * y + dy) * 4 + (2 * xx + dx)];
              std::sort(vals, vals + 4);
              gap = std::min(gap, vals[3] - vals[2]);
            }
        if (kink < 5e-3 || gap < 5e-3) continue;
      }
      // The conv bias is absorbed by the batch-norm mean subtraction: its
      // true gradient is identically zero, which finite differences can only
      // see as roundoff noise. Keep it constant here; its zero gradient is
      // asserted analytically in the unit tests.
      return gradcheck(
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
    }
    throw std::runtime_error("gradcheck: no margin-clean chain draw found");
  }});

  std::vector<GradCheckResult> results;
  for (auto& c : checks) {
    double err = c.run();
    results.push_back({c.name, err, err <= 1e-4});
  }
  return results;
}

}  // namespace dta
