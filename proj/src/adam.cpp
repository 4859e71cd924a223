#include "dta/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace dta {

Adam::Adam(ParamRegistry<float>& reg, AdamConfig cfg) : reg_(&reg), cfg_(cfg) {
  for (const auto& e : reg.entries()) {
    if (!e.is_param) continue;
    Slot s;
    s.name = e.name;
    s.m.assign(static_cast<size_t>(e.tensor.numel()), 0.0f);
    s.v.assign(static_cast<size_t>(e.tensor.numel()), 0.0f);
    slots_.push_back(std::move(s));
  }
}

void Adam::step() {
  ++t_;
  // single-precision state and update, PyTorch-style; the bias corrections
  // are scalars and stay double
  float b1 = static_cast<float>(cfg_.beta1);
  float b2 = static_cast<float>(cfg_.beta2);
  float inv_bc1 = static_cast<float>(1.0 / (1.0 - std::pow(cfg_.beta1, static_cast<double>(t_))));
  float inv_bc2 = static_cast<float>(1.0 / (1.0 - std::pow(cfg_.beta2, static_cast<double>(t_))));
  float lr = static_cast<float>(cfg_.lr);
  float eps = static_cast<float>(cfg_.eps);
  size_t si = 0;
  for (auto& e : const_cast<std::vector<ParamEntry<float>>&>(reg_->entries())) {
    if (!e.is_param) continue;
    Slot& s = slots_[si++];
    auto vals = e.tensor.mutable_data();
    if (!e.tensor.has_grad()) continue;  // never entered a graph: nothing to apply
    auto g = e.tensor.grad();
    float* mp = s.m.data();
    float* vp = s.v.data();
    for (size_t i = 0; i < vals.size(); ++i) {
      float gi = g[i];
      if (!std::isfinite(gi))
        throw std::runtime_error("adam: non-finite gradient in parameter " + e.name);
      float m = b1 * mp[i] + (1.0f - b1) * gi;
      float v = b2 * vp[i] + (1.0f - b2) * gi * gi;
      mp[i] = m;
      vp[i] = v;
      vals[i] -= lr * (m * inv_bc1) / (std::sqrt(v * inv_bc2) + eps);
    }
  }
}

void Adam::restore(std::vector<Slot> slots, int64_t t) {
  if (slots.size() != slots_.size())
    throw std::invalid_argument("adam: restored state has wrong slot count");
  for (size_t i = 0; i < slots.size(); ++i)
    if (slots[i].name != slots_[i].name || slots[i].m.size() != slots_[i].m.size())
      throw std::invalid_argument("adam: restored state does not match parameters");
  slots_ = std::move(slots);
  t_ = t;
}

}  // namespace dta
