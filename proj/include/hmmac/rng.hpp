#pragma once

#include <cstdint>
#include <cmath>
#include <random>

namespace hmmac {

// splitmix64 finalizer; used to derive independent stream seeds from a root
// seed by a counter scheme: derive_seed(root, a, b) = mix(mix(root ^ mix(a)) ^ mix(b)).
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a,
                                    std::uint64_t b = 0) noexcept {
  return mix64(mix64(root ^ mix64(a)) ^ mix64(b + 0x632be59bd9b4e019ULL));
}

// Fixed-consumption generator: every uniform() draws exactly one 64-bit word,
// so identical seeds give bit-identical streams on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

  std::uint64_t next() { return engine_(); }

  // Uniform double in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return uniform() < p; }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
  }

  double normal() {
    // Box-Muller, one draw per call for fixed consumption.
    constexpr double two_pi = 6.283185307179586476925286766559;
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace hmmac
