#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace affect {

// Deterministic PRNG with hand-rolled distributions. std:: distributions are
// implementation-defined, which would break byte-identical dataset generation
// across toolchains; everything seeded goes through this class instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  // xorshift64* core
  std::uint64_t next_u64() {
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dull;
  }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  std::uint64_t uniform_int(std::uint64_t n) {
    return n ? next_u64() % n : 0;
  }

  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi_inclusive) {
    return lo + static_cast<std::int64_t>(uniform_int(static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
  }

  // Box-Muller; one value per call, no cached spare so the draw sequence is
  // trivially reproducible.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Derive an independent stream, e.g. per epoch or per video.
  Rng fork(std::uint64_t salt) const {
    std::uint64_t s = state_ ^ (salt + 0x9e3779b97f4a7c15ull + (state_ << 6) + (state_ >> 2));
    return Rng(s);
  }

 private:
  std::uint64_t state_;
};

}  // namespace affect
