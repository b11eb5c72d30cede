#pragma once
// Counter-based deterministic random streams. Every draw is a pure function of
// (key, counter), so parallel consumers keyed by (seed, row) produce identical
// results regardless of scheduling.

#include <cstdint>

#include "bsem/math/normal.hpp"

namespace bsem {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine64(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ (0x9e3779b97f4a7c15ULL + b + (a << 6) + (a >> 2)));
}

class CounterRng {
 public:
  CounterRng() : key_(0), counter_(0) {}
  explicit CounterRng(std::uint64_t key) : key_(key), counter_(0) {}
  CounterRng(std::uint64_t seed, std::uint64_t stream) : key_(hash_combine64(seed, stream)), counter_(0) {}

  std::uint64_t next_u64() { return splitmix64(key_ ^ splitmix64(counter_++)); }

  // uniform on the open interval (0,1)
  double uniform() {
    const std::uint64_t r = next_u64() >> 11;  // 53 bits
    return (static_cast<double>(r) + 0.5) * (1.0 / 9007199254740992.0);
  }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  double normal() { return norm_quantile(uniform()); }

  // Marsaglia-Tsang; shape a > 0, unit scale.
  double gamma(double a) {
    if (a < 1.0) {
      const double u = uniform();
      return gamma(a + 1.0) * std::pow(u, 1.0 / a);
    }
    const double d = a - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double chisq(double df) { return 2.0 * gamma(0.5 * df); }

  double beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    return x / (x + y);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace bsem
