#pragma once

#include <string>
#include <vector>

#include "dta/modules.hpp"

namespace dta {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Standard bias-corrected Adam over a registry's parameters, in registry
/// order. Aborts with the parameter's name on any non-finite gradient.
class Adam {
 public:
  Adam(ParamRegistry<float>& reg, AdamConfig cfg);

  void step();
  int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  struct Slot {
    std::string name;
    std::vector<float> m, v;
  };
  const std::vector<Slot>& slots() const { return slots_; }
  void restore(std::vector<Slot> slots, int64_t t);

 private:
  ParamRegistry<float>* reg_;
  AdamConfig cfg_;
  std::vector<Slot> slots_;
  int64_t t_ = 0;
};

}  // namespace dta
