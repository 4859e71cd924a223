#include "dta/rng.hpp"

#include <cmath>

namespace dta {

namespace {

uint64_t splitmix64(uint64_t& s) {
  s += 0x9e3779b97f4a7c15ULL;
  uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr double kTwoPi = 6.283185307179586476925286766559;

}  // namespace

RngState::RngState(uint64_t seed) : root_(seed), state_(seed) {
  // Scramble once so nearby seeds do not start with nearby states.
  state_ = splitmix64(state_);
}

RngState::RngState(uint64_t root, uint64_t state) : root_(root), state_(state) {}

RngState RngState::stream(std::string_view label) const {
  uint64_t mix = root_ ^ (fnv1a(label) * 0x9e3779b97f4a7c15ULL);
  uint64_t st = mix;
  splitmix64(st);
  return RngState(mix, st);
}

uint64_t RngState::next_u64() { return splitmix64(state_); }

double RngState::u01() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngState::uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

int64_t RngState::uniform_int(int64_t n) {
  if (n <= 0) return 0;
  return static_cast<int64_t>((static_cast<__uint128_t>(next_u64()) *
                               static_cast<__uint128_t>(n)) >>
                              64);
}

double RngState::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  double u1 = u01();
  double u2 = u01();
  if (u1 < 1e-300) u1 = 1e-300;
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = kTwoPi * u2;
  cached_ = r * std::sin(a);
  has_cached_ = true;
  return r * std::cos(a);
}

double RngState::trunc_normal(double sigma) {
  for (;;) {
    double z = normal();
    if (z >= -2.0 && z <= 2.0) return z * sigma;
  }
}

template <typename T>
void RngState::fill_normal(std::span<T> out, double sigma) {
  for (T& v : out) v = static_cast<T>(normal() * sigma);
}

template <typename T>
void RngState::fill_trunc_normal(std::span<T> out, double sigma) {
  for (T& v : out) v = static_cast<T>(trunc_normal(sigma));
}

template void RngState::fill_normal<float>(std::span<float>, double);
template void RngState::fill_normal<double>(std::span<double>, double);
template void RngState::fill_trunc_normal<float>(std::span<float>, double);
template void RngState::fill_trunc_normal<double>(std::span<double>, double);

}  // namespace dta
