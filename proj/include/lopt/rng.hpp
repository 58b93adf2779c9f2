#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace lopt {

// Seeded random stream. The engine is std::mt19937_64; the value
// transformations are written out here instead of using std::*_distribution
// so that streams are bit-reproducible across standard library versions.
// normal() always consumes exactly two engine draws (no cached spare).
class RandomStream {
 public:
  explicit RandomStream(uint64_t seed, uint64_t stream = 0)
      : eng_(mix(seed, stream)) {}

  // Uniform in [0, 1).
  double u01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  double normal(double mean = 0.0, double stddev = 1.0) {
    // Box-Muller; u1 in (0, 1] so log() is safe.
    double u1 = (static_cast<double>(eng_() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = u01();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Uniform integer in [0, n). n must be positive.
  uint64_t below(uint64_t n) {
    // Rejection sampling on the top bits; unbiased and reproducible.
    uint64_t threshold = (~n + 1) % n;  // 2^64 mod n
    for (;;) {
      uint64_t r = eng_();
      if (r >= threshold) return r % n;
    }
  }

  uint64_t raw() { return eng_(); }

 private:
  static uint64_t mix(uint64_t seed, uint64_t stream) {
    // splitmix64 over (seed, stream) so nearby seeds give unrelated streams.
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::mt19937_64 eng_;
};

}  // namespace lopt
