#pragma once
// Skew-normal distribution SN(xi, omega, alpha): density, CDF (via Owen's T),
// moments, skewness-delta relation, a bisection-grade quantile oracle, and an
// iteration-free fast quantile backed by a per-alpha monotone Hermite table.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "bsem/math/normal.hpp"

namespace bsem {

// Largest attainable |skewness| of the skew-normal family (delta -> 1 limit).
inline constexpr double kSnMaxSkewness = 0.9952717464311565;

inline double sn_pdf(double t, double xi, double omega, double alpha) {
  const double z = (t - xi) / omega;
  return 2.0 / omega * norm_pdf(z) * norm_cdf(alpha * z);
}

inline double sn_logpdf(double t, double xi, double omega, double alpha) {
  const double z = (t - xi) / omega;
  return std::log(2.0 / omega) + log_norm_pdf(z) + log_norm_cdf(alpha * z);
}

inline double sn_cdf(double t, double xi, double omega, double alpha) {
  const double z = (t - xi) / omega;
  double v = norm_cdf(z) - 2.0 * owen_t(z, alpha);
  return std::clamp(v, 0.0, 1.0);
}

inline double sn_delta(double alpha) { return alpha / std::sqrt(1.0 + alpha * alpha); }

inline double sn_mean(double xi, double omega, double alpha) {
  return xi + omega * sn_delta(alpha) * std::sqrt(2.0 / kPi);
}

inline double sn_var(double omega, double alpha) {
  const double d = sn_delta(alpha);
  return omega * omega * (1.0 - 2.0 * d * d / kPi);
}

inline double sn_sd(double omega, double alpha) { return std::sqrt(sn_var(omega, alpha)); }

inline double sn_skewness(double alpha) {
  const double d = sn_delta(alpha);
  const double b = d * std::sqrt(2.0 / kPi);
  const double v = 1.0 - b * b;
  return (4.0 - kPi) / 2.0 * b * b * b / std::pow(v, 1.5);
}

// Inverse of sn_skewness: |gamma1| -> delta, sign-matched; gamma1 is clamped
// to 0.995 of the attainable bound before inversion.
inline double sn_delta_from_skewness(double gamma1) {
  const double cap = 0.995 * kSnMaxSkewness;
  const double g = std::clamp(gamma1, -cap, cap);
  const double a23 = std::pow(std::fabs(g), 2.0 / 3.0);
  const double c23 = std::pow((4.0 - kPi) / 2.0, 2.0 / 3.0);
  const double d = std::sqrt(kPi / 2.0 * a23 / (a23 + c23));
  return (g >= 0.0) ? d : -d;
}

inline double sn_alpha_from_delta(double delta) {
  const double d = std::clamp(delta, -0.999999, 0.999999);
  return d / std::sqrt(1.0 - d * d);
}

// Quantile by bracketed bisection with Newton polishing; the reference oracle.
inline double sn_quantile_bisect(double u, double xi, double omega, double alpha, double tol = 1e-13) {
  if (!(u > 0.0 && u < 1.0)) throw std::domain_error("sn_quantile: u outside (0,1)");
  // bracket in standardized coordinates
  double lo = -1.0, hi = 1.0;
  while (sn_cdf(lo, 0.0, 1.0, alpha) > u) lo *= 2.0;
  while (sn_cdf(hi, 0.0, 1.0, alpha) < u) hi *= 2.0;
  double z = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const double c = sn_cdf(z, 0.0, 1.0, alpha);
    if (c > u)
      hi = z;
    else
      lo = z;
    // Newton step when it stays inside the bracket
    const double f = sn_pdf(z, 0.0, 1.0, alpha);
    double znew;
    if (f > 1e-300) {
      znew = z - (c - u) / f;
      if (!(znew > lo && znew < hi)) znew = 0.5 * (lo + hi);
    } else {
      znew = 0.5 * (lo + hi);
    }
    if (std::fabs(znew - z) < tol * std::max(1.0, std::fabs(z))) {
      z = znew;
      break;
    }
    z = znew;
  }
  return xi + omega * z;
}

// Iteration-free skew-normal quantile: at construction, tabulates
// h(z) = Q_sn(Phi(z)) on a dense grid with exact slopes
// h'(z) = phi(z) / f_sn(h(z)) and interpolates with cubic Hermite segments.
// Calls cost one Phi^-1 plus one polynomial evaluation.
class SnQuantileFast {
 public:
  SnQuantileFast() = default;

  SnQuantileFast(double xi, double omega, double alpha, int nodes = 2049, double zmax = 6.6)
      : xi_(xi), omega_(omega), alpha_(alpha), zmin_(-zmax), dz_((2.0 * zmax) / (nodes - 1)) {
    h_.resize(nodes);
    hp_.resize(nodes);
    if (std::fabs(alpha) < 1e-12) {
      gaussian_ = true;
      return;
    }
    // walk the grid, carrying the previous solution as the Newton start
    double z0 = zmin_;
    double t = sn_quantile_bisect(norm_cdf(z0), 0.0, 1.0, alpha);
    for (int i = 0; i < nodes; ++i) {
      const double z = zmin_ + i * dz_;
      const double u = norm_cdf(z);
      // Newton refinement from the previous node's value
      for (int it = 0; it < 50; ++it) {
        const double c = sn_cdf(t, 0.0, 1.0, alpha);
        const double f = sn_pdf(t, 0.0, 1.0, alpha);
        if (f < 1e-300) {
          t = sn_quantile_bisect(u, 0.0, 1.0, alpha);
          break;
        }
        const double step = (c - u) / f;
        t -= step;
        if (std::fabs(step) < 1e-14 * std::max(1.0, std::fabs(t))) break;
      }
      h_[i] = t;
      const double f = sn_pdf(t, 0.0, 1.0, alpha);
      hp_[i] = (f > 1e-300) ? norm_pdf(z) / f : 0.0;
    }
  }

  double xi() const { return xi_; }
  double omega() const { return omega_; }
  double alpha() const { return alpha_; }

  // quantile of SN(xi, omega, alpha) at u in (0,1)
  double operator()(double u) const {
    if (!(u > 0.0 && u < 1.0)) throw std::domain_error("SnQuantileFast: u outside (0,1)");
    const double z = norm_quantile(u);
    return xi_ + omega_ * h_of_z(z);
  }

  // quantile expressed as a function of the standard-normal deviate z
  double from_normal(double z) const { return xi_ + omega_ * h_of_z(z); }

 private:
  double h_of_z(double z) const {
    if (gaussian_) return z;
    const int n = static_cast<int>(h_.size());
    if (z <= zmin_) return h_.front() + hp_.front() * (z - zmin_);
    const double zmax = zmin_ + (n - 1) * dz_;
    if (z >= zmax) return h_.back() + hp_.back() * (z - zmax);
    const int i = std::min(n - 2, static_cast<int>((z - zmin_) / dz_));
    const double s = (z - (zmin_ + i * dz_)) / dz_;
    const double s2 = s * s, s3 = s2 * s;
    const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s;
    const double h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
    return h00 * h_[i] + h10 * dz_ * hp_[i] + h01 * h_[i + 1] + h11 * dz_ * hp_[i + 1];
  }

  double xi_ = 0.0, omega_ = 1.0, alpha_ = 0.0;
  double zmin_ = -6.6, dz_ = 0.0;
  bool gaussian_ = false;
  std::vector<double> h_, hp_;
};

}  // namespace bsem
