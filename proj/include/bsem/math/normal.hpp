#pragma once
// Standard-normal density, CDF, inverse CDF (Wichura AS241), and Owen's T.

#include <cmath>
#include <limits>
#include <stdexcept>

namespace bsem {

inline constexpr double kPi = 3.141592653589793238462643383279502884;
inline constexpr double kLog2Pi = 1.837877066409345483560659472811235279;

inline double norm_pdf(double z) {
  return std::exp(-0.5 * z * z) * 0.3989422804014326779399460599343818685;
}

inline double log_norm_pdf(double z) { return -0.5 * (z * z + kLog2Pi); }

inline double norm_cdf(double z) { return 0.5 * std::erfc(-z * 0.7071067811865475244008443621048490393); }

// Log of the standard normal CDF, stable in the deep left tail.
inline double log_norm_cdf(double z) {
  if (z > -8.0) return std::log(norm_cdf(z));
  // asymptotic expansion: Phi(z) ~ phi(z)/|z| * (1 - 1/z^2 + 3/z^4 - ...)
  const double z2 = z * z;
  return log_norm_pdf(z) - std::log(-z) + std::log1p(-1.0 / z2 + 3.0 / (z2 * z2));
}

// Wichura's algorithm AS241 (PPND16): inverse of the standard normal CDF,
// accurate to ~1e-16 relative over the full open interval (0,1).
inline double norm_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (p == 1.0) return std::numeric_limits<double>::infinity();
    throw std::domain_error("norm_quantile: p outside [0,1]");
  }
  const double q = p - 0.5;
  double r;
  if (std::fabs(q) <= 0.425) {
    r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r + 6.7265770927008700853e+4) * r +
                4.5921953931549871457e+4) * r + 1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
              1.3314166789178437745e+2) * r + 3.3871328727963666080e+0) /
           (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r + 3.9307895800092710610e+4) * r +
                2.1213794301586595867e+4) * r + 5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
              4.2313330701600911252e+1) * r + 1.0);
  }
  r = (q < 0.0) ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r + 2.41780725177450611770e-1) * r +
               1.27045825245236838258e+0) * r + 3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r +
             4.63033784615654529590e+0) * r + 1.42343711074968357734e+0) /
          (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r + 1.51986665636164571966e-2) * r +
               1.48103976427480074590e-1) * r + 6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r +
             2.05319162663775882187e+0) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 1.24266094738807843860e-3) * r +
               2.65321895265761230930e-2) * r + 2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r +
             5.46378491116411436990e+0) * r + 6.65790464350110377720e+0) /
          (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r + 1.84631831751005468180e-5) * r +
               7.86869131145613259100e-4) * r + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
             5.99832206555887937690e-1) * r + 1.0);
  }
  return (q < 0.0) ? -val : val;
}

// Owen's T function T(h, a): P(0 < X < a*h | ...) integral
//   T(h,a) = (1/2pi) * int_0^a exp(-h^2(1+x^2)/2)/(1+x^2) dx.
// Series evaluation for |a| <= 1, reduction T(h,a) for |a| > 1 via
//   T(h,a) = Phi(h)/2 + Phi(ah)/2 - Phi(h)Phi(ah) - T(ah, 1/a)  (h,a > 0).
namespace detail {

// Gauss-Legendre nodes/weights on [-1,1], computed once by Newton on P_n.
template <int N>
struct GaussLegendreTable {
  double x[N];
  double w[N];
  GaussLegendreTable() {
    const int m = (N + 1) / 2;
    for (int i = 0; i < m; ++i) {
      double z = std::cos(kPi * (i + 0.75) / (N + 0.5));
      double pp = 0.0;
      for (int it = 0; it < 100; ++it) {
        double p1 = 1.0, p2 = 0.0;
        for (int j = 0; j < N; ++j) {
          const double p3 = p2;
          p2 = p1;
          p1 = ((2.0 * j + 1.0) * z * p2 - j * p3) / (j + 1.0);
        }
        pp = N * (z * p1 - p2) / (z * z - 1.0);
        const double z1 = z;
        z = z1 - p1 / pp;
        if (std::fabs(z - z1) < 1e-15) break;
      }
      x[i] = -z;
      x[N - 1 - i] = z;
      w[i] = w[N - 1 - i] = 2.0 / ((1.0 - z * z) * pp * pp);
    }
  }
};

inline double owen_t_core(double h, double a) {
  // |a| <= 1, h >= 0, a >= 0; 64-point Gauss-Legendre on [0, a].
  static const GaussLegendreTable<64> gl;
  const double hh = -0.5 * h * h;
  const double half = 0.5 * a;
  double s = 0.0;
  for (int i = 0; i < 64; ++i) {
    const double x = half * (1.0 + gl.x[i]);
    const double x2 = 1.0 + x * x;
    s += gl.w[i] * half * std::exp(hh * x2) / x2;
  }
  return s / (2.0 * kPi);
}
}  // namespace detail

inline double owen_t(double h, double a) {
  // Symmetries: T(h,a) = T(-h,a) = -T(h,-a).
  double sign = 1.0;
  if (a < 0.0) { a = -a; sign = -sign; }
  h = std::fabs(h);
  if (a == 0.0) return 0.0;
  double val;
  if (a <= 1.0) {
    val = detail::owen_t_core(h, a);
  } else {
    const double ah = a * h;
    val = 0.5 * (norm_cdf(h) + norm_cdf(ah)) - norm_cdf(h) * norm_cdf(ah) - detail::owen_t_core(ah, 1.0 / a);
  }
  return sign * val;
}

}  // namespace bsem
