#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dta/tensor.hpp"

namespace dta {

using GradFn = std::function<Tensor<double>(std::vector<Tensor<double>>&)>;

/// Central-difference check of reverse-mode gradients, f64 only. Returns the
/// max over all input coordinates of |analytic - numeric| /
/// max(|analytic|, |numeric|, 1e-8). Throws if fn produces non-finite values.
double gradcheck(const GradFn& fn, std::vector<Tensor<double>> inputs,
                 double delta = 1e-4);

struct GradCheckResult {
  std::string name;
  double max_rel_err;
  bool ok;  // against the per-check gate (1e-4)
};

/// The substrate-wide gradient suite behind the `gradcheck` CLI subcommand:
/// every differentiable op plus the composite blocks, seeded deterministically.
std::vector<GradCheckResult> run_gradcheck_suite(uint64_t seed);

}  // namespace dta
