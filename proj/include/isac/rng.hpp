// rng.hpp - seeded splitmix64 generator with counter-based stream derivation
//
// Every random draw in the library flows through this generator so that a run
// is reproducible from one master seed regardless of thread count: each
// (trial, pair, ...) unit derives its own stream from the master seed and a
// list of integer keys, never sharing state across threads.
#pragma once

#include <cstdint>
#include <initializer_list>
#include <cmath>

#include "isac/types.hpp"

namespace isac {

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(mix(seed)) {}

  // Derive an independent stream from a master seed and a key path,
  // e.g. Rng::derive(master, {suite_id, snr_index, trial, pair}).
  static Rng derive(uint64_t master, std::initializer_list<uint64_t> keys) {
    uint64_t s = mix(master);
    for (uint64_t k : keys) s = mix(s ^ mix(k + 0x9E3779B97F4A7C15ULL));
    Rng r(0);
    r.state_ = s;
    r.has_spare_ = false;
    return r;
  }

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // Uniform index in [0, n). Multiply-shift; bias is O(n/2^64).
  uint64_t index(uint64_t n) {
    return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  // Standard normal via Box-Muller (pairs cached).
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log1p(-u1));
    has_spare_ = true;
    spare_ = r * std::sin(kTwoPi * u2);
    return r * std::cos(kTwoPi * u2);
  }

  // Circularly-symmetric complex Gaussian CN(0, variance).
  Complex cgaussian(double variance) {
    double s = std::sqrt(variance / 2.0);
    double re = gaussian();
    double im = gaussian();
    return Complex(s * re, s * im);
  }

 private:
  static uint64_t mix(uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace isac
