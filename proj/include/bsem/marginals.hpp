// Per-parameter marginal posterior approximation: axis scan along the
// conditional-mean direction, linear-tilt volume correction, and weighted
// skew-normal fit scored by NMAD.
#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "bsem/math/normal.hpp"
#include "bsem/math/skewnormal.hpp"
#include "bsem/math/util.hpp"
#include "bsem/posterior.hpp"

namespace bsem {

enum class TiltMethod { Shortcut, ShortcutFd, Hessian, None };

inline TiltMethod tilt_method_from_string(const std::string& s) {
  if (s == "shortcut") return TiltMethod::Shortcut;
  if (s == "shortcut_fd") return TiltMethod::ShortcutFd;
  if (s == "hessian") return TiltMethod::Hessian;
  if (s == "none") return TiltMethod::None;
  throw std::invalid_argument("unknown marginal correction method: " + s);
}

struct ProfileRecord {
  int j = -1;
  Eigen::VectorXd z_grid;
  Eigen::VectorXd raw;       // log-posterior along the scan, shifted so max = 0
  double tilt_slope = 0.0;   // gamma'_j
  Eigen::VectorXd adjusted;  // raw + tilt_slope * z
  std::vector<std::string> warnings;
};

struct SkewNormalMarginal {
  double xi = 0.0;
  double omega = 1.0;
  double alpha = 0.0;
  double c = 0.0;  // log normalization offset of the fitted curve
  double nmad = 0.0;
  bool gaussian_fallback = false;

  double pdf(double t) const { return sn_pdf(t, xi, omega, alpha); }
  double mean() const { return sn_mean(xi, omega, alpha); }
  double sd() const { return sn_sd(omega, alpha); }
  double quantile(double u) const { return sn_quantile_bisect(u, xi, omega, alpha); }
};

// ---------------------------------------------------------------------------
// Axis scan

inline ProfileRecord scan_profile(int j, const Eigen::VectorXd& center, const Eigen::MatrixXd& Omega,
                                  const PosteriorFn& post, int ngrid = 21) {
  const int m = static_cast<int>(center.size());
  ProfileRecord rec;
  rec.j = j;
  rec.z_grid.resize(ngrid);
  rec.raw.resize(ngrid);
  const Eigen::VectorXd v = Omega.col(j) / std::sqrt(Omega(j, j));
  Eigen::VectorXd g(m);
  for (int k = 0; k < ngrid; ++k) {
    const double z = -4.0 + 8.0 * k / (ngrid - 1);
    rec.z_grid[k] = z;
    double f = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd th = center + v * z;
    if (!post(th, f, g)) f = -std::numeric_limits<double>::infinity();
    rec.raw[k] = f;
  }
  double fmax = -std::numeric_limits<double>::infinity();
  double fmin = std::numeric_limits<double>::infinity();
  for (int k = 0; k < ngrid; ++k)
    if (std::isfinite(rec.raw[k])) {
      fmax = std::max(fmax, rec.raw[k]);
      fmin = std::min(fmin, rec.raw[k]);
    }
  if (!std::isfinite(fmax)) throw std::runtime_error("profile scan: no finite grid values for parameter " + std::to_string(j));
  bool clamped = false;
  for (int k = 0; k < ngrid; ++k) {
    if (!std::isfinite(rec.raw[k])) {
      rec.raw[k] = fmin - 30.0;
      clamped = true;
    }
    rec.raw[k] -= fmax;
  }
  if (clamped)
    rec.warnings.push_back("parameter " + std::to_string(j) + ": non-finite log-posterior at scan edge, clamped");
  rec.adjusted = rec.raw;
  return rec;
}

// ---------------------------------------------------------------------------
// Tilt slope gamma'_j = -1/2 d/dz log|H_cond(z)| along v_j

namespace detail {

// k-th column removed/kept index helper
inline Eigen::MatrixXd drop_rowcol(const Eigen::MatrixXd& A, int j) {
  const int m = static_cast<int>(A.rows());
  Eigen::MatrixXd B(m - 1, m - 1);
  for (int r = 0, rr = 0; r < m; ++r) {
    if (r == j) continue;
    for (int c = 0, cc = 0; c < m; ++c) {
      if (c == j) continue;
      B(rr, cc) = A(r, c);
      ++cc;
    }
    ++rr;
  }
  return B;
}

// log|A| via LLT; returns false if not positive definite
inline bool logdet_pd(const Eigen::MatrixXd& A, double& out) {
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success) return false;
  out = 0.0;
  for (int i = 0; i < A.rows(); ++i) out += 2.0 * std::log(llt.matrixL()(i, i));
  return true;
}

// FD Hessian of -post at x (2m gradient evaluations)
inline Eigen::MatrixXd fd_neg_hessian(const PosteriorFn& post, const Eigen::VectorXd& x) {
  const int m = static_cast<int>(x.size());
  const double eps = std::cbrt(std::numeric_limits<double>::epsilon());
  Eigen::MatrixXd A(m, m);
  Eigen::VectorXd gp(m), gm(m);
  double f;
  for (int j = 0; j < m; ++j) {
    const double h = eps * std::max(1.0, std::fabs(x[j]));
    Eigen::VectorXd xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    if (!post(xp, f, gp) || !post(xm, f, gm))
      throw std::runtime_error("tilt slope: non-finite gradient in FD Hessian");
    A.col(j) = -(gp - gm) / (2.0 * h);
  }
  return 0.5 * (A + A.transpose());
}

}  // namespace detail

// "hessian" method: full FD Hessians at z = +-1 along v_j, conditional
// log-determinants, centered difference. Cost 4m gradient evaluations.
// Returns false (fallback to no correction) when a conditional Hessian is
// not positive definite at a probe point.
inline bool tilt_slope_hessian(int j, const Eigen::VectorXd& center, const Eigen::MatrixXd& Omega,
                               const PosteriorFn& post, double& slope) {
  const int m = static_cast<int>(center.size());
  slope = 0.0;
  if (m == 1) return true;
  const Eigen::VectorXd v = Omega.col(j) / std::sqrt(Omega(j, j));
  const Eigen::MatrixXd Hp = detail::fd_neg_hessian(post, center + v);
  const Eigen::MatrixXd Hm = detail::fd_neg_hessian(post, center - v);
  double ldp, ldm;
  if (!detail::logdet_pd(detail::drop_rowcol(Hp, j), ldp) || !detail::logdet_pd(detail::drop_rowcol(Hm, j), ldm))
    return false;
  slope = -0.25 * (ldp - ldm);
  return true;
}

// "shortcut" / "shortcut_fd" methods: trace identity
//   d/dz log|H_cond(z)| = tr(A_j dH_cond/dz),  A_j = H_cond^{-1} = Schur
//   complement of Omega at j; with A_j = sum_c c c^T over Cholesky columns,
//   tr(A_j dH/dz) = sum_c d/dz (c^T H c) = -sum_c T[c,c,v]  (T = third
//   derivative tensor of the log-posterior). Each T[c,c,v] is a second
//   difference of the directional derivative v^T g along c (central: 2
//   gradients per column; forward: 1 per column, with the linear term
//   v' Hess c estimated once from a single extra gradient along v).
//   Cost 2m+2 / m+2 gradient evaluations.
inline bool tilt_slope_shortcut(int j, const Eigen::VectorXd& center, const Eigen::MatrixXd& Omega,
                                const PosteriorFn& post, bool central, double& slope) {
  const int m = static_cast<int>(center.size());
  slope = 0.0;
  if (m == 1) return true;
  const Eigen::VectorXd v = Omega.col(j) / std::sqrt(Omega(j, j));

  // conditional covariance A_j = Omega_{-j,-j} - Omega_{-j,j} Omega_{j,-j} / Omega_jj
  Eigen::MatrixXd A = detail::drop_rowcol(Omega, j);
  Eigen::VectorXd oj(m - 1);
  for (int r = 0, rr = 0; r < m; ++r)
    if (r != j) oj[rr++] = Omega(r, j);
  A -= oj * oj.transpose() / Omega(j, j);
  Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (A + A.transpose()));
  if (llt.info() != Eigen::Success) return false;
  const Eigen::MatrixXd Lc = llt.matrixL();

  const double h = std::pow(std::numeric_limits<double>::epsilon(), 0.25);
  double f;
  Eigen::VectorXd g0(m), gp(m), gm(m), gv(m);
  if (!post(center, f, g0)) return false;
  const double vg0 = v.dot(g0);
  const double vnorm = v.norm();
  if (!central) {
    // directional Hessian row along v, for the linear term of the forward
    // difference: Hess(center) vhat ~ (g(center + h vhat) - g(center - h vhat)) / 2h
    // (central, so the linear term does not leak an O(1) bias into T)
    Eigen::VectorXd gvm(m);
    if (!post(center + h * (v / vnorm), f, gv)) return false;
    if (!post(center - h * (v / vnorm), f, gvm)) return false;
    gv = (gv - gvm) / 2.0;
  }

  double tr = 0.0;  // sum_c T[c,c,v]
  for (int col = 0; col < m - 1; ++col) {
    Eigen::VectorXd c = Eigen::VectorXd::Zero(m);
    for (int r = 0, rr = 0; r < m; ++r)
      if (r != j) c[r] = Lc(rr++, col);
    const double cn = c.norm();
    if (cn < 1e-14) continue;
    const double scale = cn * cn;  // T[c,c,v] = |c|^2 T[chat,chat,v]
    c /= cn;
    if (central) {
      if (!post(center + h * c, f, gp) || !post(center - h * c, f, gm)) return false;
      tr += scale * (v.dot(gp) - 2.0 * vg0 + v.dot(gm)) / (h * h);
    } else {
      if (!post(center + h * c, f, gp)) return false;
      // v^T g(x+hc) = v^T g(x) + h v^T Hess c + (h^2/2) T[c,c,v]
      const double lin = vnorm * c.dot(gv) / h;
      tr += scale * 2.0 * (v.dot(gp) - vg0 - h * lin) / (h * h);
    }
  }
  // gamma' = -1/2 tr(A dH/dz) = +1/2 sum_c T[c,c,v]
  slope = 0.5 * tr;
  return true;
}

inline void apply_tilt(ProfileRecord& rec, int j, const Eigen::VectorXd& center, const Eigen::MatrixXd& Omega,
                       const PosteriorFn& post, TiltMethod method) {
  double slope = 0.0;
  bool ok = true;
  switch (method) {
    case TiltMethod::None:
      break;
    case TiltMethod::Hessian:
      ok = tilt_slope_hessian(j, center, Omega, post, slope);
      break;
    case TiltMethod::Shortcut:
      ok = tilt_slope_shortcut(j, center, Omega, post, true, slope);
      break;
    case TiltMethod::ShortcutFd:
      ok = tilt_slope_shortcut(j, center, Omega, post, false, slope);
      break;
  }
  if (!ok) {
    slope = 0.0;
    rec.warnings.push_back("parameter " + std::to_string(j) +
                           ": non-positive-definite conditional Hessian, tilt correction disabled");
  }
  rec.tilt_slope = slope;
  rec.adjusted = rec.raw + slope * rec.z_grid;
}

// ---------------------------------------------------------------------------
// Weighted skew-normal fit

namespace detail {

struct TrapMoments {
  double mass, mean, var, skew;
};

inline TrapMoments trapezoid_moments(const Eigen::VectorXd& z, const Eigen::VectorXd& logf) {
  const int n = static_cast<int>(z.size());
  Eigen::VectorXd f(n);
  for (int k = 0; k < n; ++k) f[k] = std::exp(logf[k]);
  auto integ = [&](auto&& fn) {
    double s = 0.0;
    for (int k = 0; k + 1 < n; ++k) s += 0.5 * (z[k + 1] - z[k]) * (fn(k) + fn(k + 1));
    return s;
  };
  TrapMoments out;
  out.mass = integ([&](int k) { return f[k]; });
  out.mean = integ([&](int k) { return z[k] * f[k]; }) / out.mass;
  out.var = integ([&](int k) { return (z[k] - out.mean) * (z[k] - out.mean) * f[k]; }) / out.mass;
  const double m3 = integ([&](int k) { return std::pow(z[k] - out.mean, 3) * f[k]; }) / out.mass;
  out.skew = m3 / std::pow(out.var, 1.5);
  return out;
}

// value and (xi, log omega, alpha, c)-gradient of e^c f_SN(t)
inline double sn_curve(double t, const double* p, double* grad) {
  const double xi = p[0], omega = std::exp(p[1]), alpha = p[2], c = p[3];
  const double s = (t - xi) / omega;
  const double phi = norm_pdf(s), Phi = norm_cdf(alpha * s), phia = norm_pdf(alpha * s);
  const double f = (2.0 / omega) * phi * Phi;
  const double val = std::exp(c) * f;
  if (grad) {
    const double k = -s * phi * Phi + alpha * phi * phia;  // d(phi*Phi)/ds
    const double df_dxi = -(2.0 / (omega * omega)) * k;
    const double df_domega = -f / omega - (2.0 * s / (omega * omega)) * k;
    const double df_dalpha = (2.0 / omega) * phi * phia * s;
    grad[0] = std::exp(c) * df_dxi;
    grad[1] = std::exp(c) * df_domega * omega;  // d/d log omega
    grad[2] = std::exp(c) * df_dalpha;
    grad[3] = val;
  }
  return val;
}

}  // namespace detail

inline SkewNormalMarginal fit_skew_normal(const ProfileRecord& rec) {
  const int n = static_cast<int>(rec.z_grid.size());
  Eigen::VectorXd y(n), w(n);
  for (int k = 0; k < n; ++k) {
    y[k] = std::exp(rec.adjusted[k]);
    w[k] = std::max(y[k], std::exp(-20.0));
  }
  const auto mom = detail::trapezoid_moments(rec.z_grid, rec.adjusted);

  // moment starts via the skewness-delta relation
  const double skew = std::clamp(mom.skew, -0.995 * kSnMaxSkewness, 0.995 * kSnMaxSkewness);
  const double delta = sn_delta_from_skewness(skew);
  const double omega0 = std::sqrt(mom.var / (1.0 - 2.0 * delta * delta / kPi));
  const double xi0 = mom.mean - omega0 * delta * std::sqrt(2.0 / kPi);
  double p[4] = {xi0, std::log(omega0), sn_alpha_from_delta(delta), std::log(std::max(mom.mass, 1e-300))};

  auto objective = [&](const double* q, Eigen::Vector4d* grad, Eigen::Matrix4d* hess) {
    double obj = 0.0;
    if (grad) grad->setZero();
    if (hess) hess->setZero();
    double gk[4];
    for (int k = 0; k < n; ++k) {
      const double fk = detail::sn_curve(rec.z_grid[k], q, grad ? gk : nullptr);
      const double r = y[k] - fk;
      obj += w[k] * r * r;
      if (grad) {
        Eigen::Map<Eigen::Vector4d> gv(gk);
        *grad += -2.0 * w[k] * r * gv;
        if (hess) *hess += 2.0 * w[k] * gv * gv.transpose();  // Gauss-Newton
      }
    }
    return obj;
  };

  // Levenberg-Marquardt with Gauss-Newton Hessian
  bool ok = true;
  double lambda = 1e-3;
  Eigen::Vector4d grad;
  Eigen::Matrix4d hess;
  double obj = objective(p, &grad, &hess);
  if (!std::isfinite(obj)) ok = false;
  for (int it = 0; ok && it < 200; ++it) {
    Eigen::Matrix4d A = hess;
    A.diagonal() += lambda * hess.diagonal().cwiseMax(1e-12);
    const Eigen::Vector4d step = A.ldlt().solve(-grad);
    double q[4] = {p[0] + step[0], p[1] + step[1], p[2] + step[2], p[3] + step[3]};
    q[1] = std::clamp(q[1], std::log(1e-6), std::log(1e6));
    q[2] = std::clamp(q[2], -50.0, 50.0);
    const double obj_new = objective(q, nullptr, nullptr);
    if (std::isfinite(obj_new) && obj_new <= obj) {
      const bool converged = (obj - obj_new) < 1e-14 * (1.0 + obj) && step.cwiseAbs().maxCoeff() < 1e-10;
      std::copy(q, q + 4, p);
      obj = objective(p, &grad, &hess);
      lambda = std::max(lambda * 0.3, 1e-12);
      if (converged) break;
    } else {
      lambda *= 10.0;
      if (lambda > 1e12) break;
    }
  }
  if (!std::isfinite(obj)) ok = false;

  SkewNormalMarginal sn;
  if (ok) {
    sn.xi = p[0];
    sn.omega = std::exp(p[1]);
    sn.alpha = p[2];
    sn.c = p[3];
  } else {
    sn.xi = mom.mean;
    sn.omega = std::sqrt(mom.var);
    sn.alpha = 0.0;
    sn.c = std::log(std::max(mom.mass, 1e-300));
    sn.gaussian_fallback = true;
  }
  return sn;
}

inline double nmad(const ProfileRecord& rec, const SkewNormalMarginal& sn) {
  double num = 0.0, den = 0.0;
  for (int k = 0; k < rec.z_grid.size(); ++k) {
    const double yk = std::exp(rec.adjusted[k]);
    const double fk = std::exp(sn.c) * sn.pdf(rec.z_grid[k]);
    num = std::max(num, std::fabs(yk - fk));
    den = std::max(den, yk);
  }
  return num / den;
}

// ---------------------------------------------------------------------------
// Driver: profile all parameters (embarrassingly parallel)

struct MarginalResults {
  std::vector<ProfileRecord> profiles;
  std::vector<SkewNormalMarginal> marginals;
  std::vector<std::string> warnings;
  double nmad_max = 0.0, nmad_mean = 0.0;
};

inline MarginalResults profile_marginals(const PosteriorFn& post, const LaplaceFit& fit,
                                         TiltMethod method = TiltMethod::Shortcut, int ngrid = 21, int cores = 1) {
  const int m = static_cast<int>(fit.theta_star.size());
  const Eigen::VectorXd center = fit.center();
  MarginalResults out;
  out.profiles.resize(m);
  out.marginals.resize(m);

  auto work = [&](int j) {
    ProfileRecord rec = scan_profile(j, center, fit.Omega, post, ngrid);
    apply_tilt(rec, j, center, fit.Omega, post, method);
    SkewNormalMarginal sn = fit_skew_normal(rec);
    sn.nmad = nmad(rec, sn);
    out.profiles[j] = std::move(rec);
    out.marginals[j] = sn;
  };

  if (cores <= 0) cores = (m > 120) ? static_cast<int>(std::thread::hardware_concurrency()) : 1;
  cores = std::max(1, std::min(cores, m));
  if (cores == 1) {
    for (int j = 0; j < m; ++j) work(j);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int t = 0; t < cores; ++t)
      pool.emplace_back([&] {
        for (int j = next.fetch_add(1); j < m; j = next.fetch_add(1)) work(j);
      });
    for (auto& th : pool) th.join();
  }

  for (int j = 0; j < m; ++j) {
    for (const auto& wmsg : out.profiles[j].warnings) out.warnings.push_back(wmsg);
    out.nmad_max = std::max(out.nmad_max, out.marginals[j].nmad);
    out.nmad_mean += out.marginals[j].nmad / m;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Natural-scale summaries: x_j = g^{-1}(theta_center_j + sqrt(Omega_jj) T),
// T ~ SN(xi, omega, alpha), by 129-point Gauss-Legendre over the quantile
// range [1e-6, 1-1e-6]. Transform kinds mirror the reduced parameter space:
// identity (coefficients), exp (log-variances), tanh (atanh-correlations).

enum class NaturalTransform { Identity, Exp, Tanh };

struct NaturalSummary {
  double mean = 0.0, sd = 0.0, q025 = 0.0, q500 = 0.0, q975 = 0.0;
};

inline NaturalTransform natural_transform_for(const ParameterTable& pt, int j) {
  const ParamRow& r = pt.rows[pt.prior_representatives()[j]];
  switch (r.mat) {
    case Mat::ThetaVar:
    case Mat::PsiVar:
      return NaturalTransform::Exp;
    case Mat::ThetaCor:
    case Mat::PsiCor:
      return NaturalTransform::Tanh;
    default:
      return NaturalTransform::Identity;
  }
}

inline double apply_transform(NaturalTransform tr, double t) {
  switch (tr) {
    case NaturalTransform::Exp:
      return std::exp(t);
    case NaturalTransform::Tanh:
      return std::tanh(t);
    default:
      return t;
  }
}

inline NaturalSummary marginal_to_natural(const SkewNormalMarginal& sn, double center, double scale,
                                          NaturalTransform tr) {
  static const detail::GaussLegendreTable<129> gl;
  const double ulo = 1e-6, uhi = 1.0 - 1e-6;
  double mean = 0.0, m2 = 0.0;
  for (int i = 0; i < 129; ++i) {
    const double u = ulo + 0.5 * (gl.x[i] + 1.0) * (uhi - ulo);
    const double x = apply_transform(tr, center + scale * sn.quantile(u));
    const double w = 0.5 * gl.w[i] * (uhi - ulo);
    mean += w * x;
    m2 += w * x * x;
  }
  NaturalSummary out;
  out.mean = mean;
  out.sd = std::sqrt(std::max(0.0, m2 - mean * mean));
  out.q025 = apply_transform(tr, center + scale * sn.quantile(0.025));
  out.q500 = apply_transform(tr, center + scale * sn.quantile(0.5));
  out.q975 = apply_transform(tr, center + scale * sn.quantile(0.975));
  return out;
}

}  // namespace bsem
