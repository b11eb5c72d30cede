#pragma once
// Owen-scrambled Sobol points, with a digitally-shifted rank-1 lattice
// fallback beyond the direction-number table limit.

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "bsem/math/rng.hpp"
#include "bsem/math/sobol_tables.hpp"

namespace bsem {

namespace detail {

inline std::uint32_t reverse_bits32(std::uint32_t v) {
  v = ((v >> 1) & 0x55555555u) | ((v & 0x55555555u) << 1);
  v = ((v >> 2) & 0x33333333u) | ((v & 0x33333333u) << 2);
  v = ((v >> 4) & 0x0f0f0f0fu) | ((v & 0x0f0f0f0fu) << 4);
  v = ((v >> 8) & 0x00ff00ffu) | ((v & 0x00ff00ffu) << 8);
  return (v >> 16) | (v << 16);
}

// Hash-based nested uniform (Owen) scrambling in base 2: each output bit is
// permuted by a hash of all more-significant bits (Laine-Karras construction).
inline std::uint32_t owen_scramble(std::uint32_t x, std::uint32_t key) {
  x = reverse_bits32(x);
  x += key;
  x ^= x * 0x6c50b47cu;
  x ^= x * 0xb82f1e52u;
  x ^= x * 0xc7afe638u;
  x ^= x * 0x8d22f6e6u;
  return reverse_bits32(x);
}

}  // namespace detail

// Generates points of the Sobol sequence in up to 129 dimensions, each
// dimension independently Owen-scrambled with a key derived from (seed, dim).
class SobolOwen {
 public:
  static constexpr int kMaxDim = sobol_tables::kMaxDimensions;
  static constexpr int kBits = 32;

  SobolOwen(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim < 1 || dim > kMaxDim) throw std::invalid_argument("SobolOwen: dimension out of range");
    dirs_.assign(static_cast<std::size_t>(dim) * kBits, 0u);
    // dimension 0: van der Corput, all m-values 1
    for (int b = 0; b < kBits; ++b) dir(0, b) = 1u << (31 - b);
    for (int k = 1; k < dim; ++k) {
      const int deg = sobol_tables::kPolyDegree[k - 1];
      const std::uint32_t poly = sobol_tables::kPolyEncoded[k - 1];
      const int ninit = sobol_tables::kInitCount[k - 1];
      const int off = sobol_tables::kInitOffset[k - 1];
      for (int b = 0; b < ninit && b < kBits; ++b)
        dir(k, b) = sobol_tables::kInitValues[off + b] << (31 - b);
      for (int b = deg; b < kBits; ++b) {
        std::uint32_t n = dir(k, b - deg) >> deg;
        for (int j = 1; j < deg; ++j)
          if ((poly >> (deg - j - 1)) & 1u) n ^= dir(k, b - j);
        n ^= dir(k, b - deg);
        dir(k, b) = n;
      }
    }
    keys_.resize(dim);
    for (int k = 0; k < dim; ++k)
      keys_[k] = static_cast<std::uint32_t>(hash_combine64(seed, 0x50b0153eULL + k) >> 32);
  }

  int dim() const { return dim_; }

  // i-th point (0-based) of the scrambled sequence, in (0,1)^dim.
  void point(std::uint32_t i, double* out) const {
    // scramble the sequence index too (Owen-scrambled index = randomized
    // digital shift of the generating matrices' input)
    for (int k = 0; k < dim_; ++k) {
      std::uint32_t x = 0;
      std::uint32_t g = i ^ (i >> 1);  // Gray code; same net point set
      int b = 0;
      while (g) {
        if (g & 1u) x ^= dir(k, b);
        g >>= 1;
        ++b;
      }
      x = detail::owen_scramble(x, keys_[k]);
      out[k] = (static_cast<double>(x) + 0.5) * (1.0 / 4294967296.0);
    }
  }

  std::vector<std::vector<double>> points(int n) const {
    std::vector<std::vector<double>> pts(n, std::vector<double>(dim_));
    for (int i = 0; i < n; ++i) point(static_cast<std::uint32_t>(i), pts[i].data());
    return pts;
  }

 private:
  std::uint32_t& dir(int k, int b) { return dirs_[static_cast<std::size_t>(k) * kBits + b]; }
  std::uint32_t dir(int k, int b) const { return dirs_[static_cast<std::size_t>(k) * kBits + b]; }

  int dim_;
  std::uint64_t seed_;
  std::vector<std::uint32_t> dirs_;
  std::vector<std::uint32_t> keys_;
};

// Digitally-shifted Korobov rank-1 lattice, used when the requested dimension
// exceeds the Sobol table limit.
inline std::vector<std::vector<double>> lattice_points(int n, int dim, std::uint64_t seed) {
  std::vector<double> shift(dim);
  CounterRng rng(seed, 0x1a7710ceULL);
  for (int k = 0; k < dim; ++k) shift[k] = rng.uniform();
  std::vector<std::uint64_t> g(dim);
  const std::uint64_t a = 76543 % static_cast<std::uint64_t>(n);
  g[0] = 1;
  for (int k = 1; k < dim; ++k) g[k] = (g[k - 1] * a) % static_cast<std::uint64_t>(n);
  std::vector<std::vector<double>> pts(n, std::vector<double>(dim));
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < dim; ++k) {
      double u = std::fmod(static_cast<double>(i) * static_cast<double>(g[k]) / n + shift[k], 1.0);
      if (u <= 0.0) u += 1.0;
      pts[i][k] = u;
    }
  return pts;
}

// QMC point set in (0,1)^dim: Owen-scrambled Sobol when the table covers dim,
// otherwise the lattice fallback.
inline std::vector<std::vector<double>> qmc_points(int n, int dim, std::uint64_t seed) {
  if (dim <= SobolOwen::kMaxDim) return SobolOwen(dim, seed).points(n);
  return lattice_points(n, dim, seed);
}

}  // namespace bsem
