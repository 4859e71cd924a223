#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace dta {

/// Deterministic splitmix64 stream. Identical (seed, stream label, draw
/// sequence) gives identical values on every platform; std:: distributions
/// are avoided on purpose. Streams derive from the root seed only, so the
/// draws made on one stream never shift another.
class RngState {
 public:
  explicit RngState(uint64_t seed);

  RngState stream(std::string_view label) const;

  uint64_t next_u64();
  double u01();  // [0, 1), 53-bit resolution
  double uniform(double lo, double hi);
  int64_t uniform_int(int64_t n);  // [0, n)
  double normal();
  double trunc_normal(double sigma);  // resamples outside +-2 sigma

  template <typename T>
  void fill_normal(std::span<T> out, double sigma);
  template <typename T>
  void fill_trunc_normal(std::span<T> out, double sigma);

  uint64_t seed() const { return root_; }

 private:
  RngState(uint64_t root, uint64_t state);
  uint64_t root_;
  uint64_t state_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace dta
