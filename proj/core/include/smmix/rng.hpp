#pragma once

#include <cmath>
#include <cstdint>

namespace smmix {

// Counter-based generator: output i of stream (key) is a stateless hash of
// (key, counter). Splitting derives an independent key, so every consumer
// (per-step mixing, per-epoch shuffles, dataset synthesis) owns a stream that
// is reproducible across platforms and trivially resumable from a saved
// (key, counter) pair. The mixing function is the SplitMix64 finalizer
// applied twice, which passes the usual statistical batteries at this scale.
class Rng {
 public:
  explicit Rng(std::uint64_t key = 0, std::uint64_t counter = 0)
      : key_(key), counter_(counter) {}

  std::uint64_t next_u64() {
    std::uint64_t z = mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_);
    return mix(z ^ key_);
  }

  // Uniform in [0, 1). 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) {
    // Modulo bias is < 2^-50 for desk-scale n; acceptable here.
    return next_u64() % n;
  }

  // Standard normal via Box-Muller (one value per call, deterministic).
  double normal() {
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  // Normal(0, std) resampled until within 2 std, the usual ViT init.
  double truncated_normal(double stddev) {
    for (;;) {
      double v = normal();
      if (v >= -2.0 && v <= 2.0) return v * stddev;
    }
  }

  // Beta(a, a) by Johnk's method; exact for a <= 1 and fine for the a ~ 1
  // values used here.
  double beta_symmetric(double a) {
    for (;;) {
      double x = std::pow(next_double(), 1.0 / a);
      double y = std::pow(next_double(), 1.0 / a);
      if (x + y > 0.0 && x + y <= 1.0) return x / (x + y);
    }
  }

  // Independent stream derived from this one's key. Does not consume state.
  Rng split(std::uint64_t stream) const {
    return Rng(mix(key_ ^ mix(stream + 0x123456789abcdefULL)));
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace smmix
