// NORTA-adjusted Gaussian copula over the fitted skew-normal marginals:
// joint posterior sampling, derived quantities, prior predictive draws.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "bsem/marginals.hpp"
#include "bsem/math/rng.hpp"
#include "bsem/math/skewnormal.hpp"
#include "bsem/math/util.hpp"
#include "bsem/posterior.hpp"

namespace bsem {

// Iteration-free SN quantile with the CopulaModel's accuracy contract
// (< 1e-7 relative error against bisection on the exact CDF); thin wrapper
// for one-off calls, models keep per-parameter SnQuantileFast tables.
inline double qsn_fast(double u, double xi, double omega, double alpha) {
  if (!(u > 0.0 && u < 1.0)) throw std::domain_error("qsn_fast: u outside (0,1)");
  if (!(omega > 0.0)) throw std::domain_error("qsn_fast: omega must be positive");
  SnQuantileFast q(xi, omega, alpha);
  return q(u);
}

struct CopulaModel {
  Eigen::MatrixXd R;       // Laplace correlation = cor(Omega)
  Eigen::MatrixXd R_star;  // NORTA-adjusted correlation
  Eigen::MatrixXd L_star;  // Cholesky factor of R_star
  std::vector<SkewNormalMarginal> marginals;
  std::vector<SnQuantileFast> quantile_splines;  // per-parameter fast inverse CDF
  Eigen::VectorXd center;                        // theta-scale scan centers
  Eigen::VectorXd scale;                         // sqrt(Omega_jj)
  std::uint64_t seed = 1;
  std::vector<std::string> warnings;
};

// ---------------------------------------------------------------------------
// NORTA correlation matching

namespace detail {

// Pearson correlation of (Q1(Phi(Z1)), Q2(Phi(Z2))) under corr(Z1,Z2) = rho,
// by a 9-node (81-point 2D) Gauss-Hermite rule.
inline double norta_attained(double rho, const SnQuantileFast& q1, const SnQuantileFast& q2, double mu1, double sd1,
                             double mu2, double sd2) {
  const auto& xs = gh9_nodes();
  const auto& ws = gh9_weights();
  const double s = std::sqrt(std::max(0.0, 1.0 - rho * rho));
  double e12 = 0.0;
  for (int a = 0; a < 9; ++a) {
    const double z1 = std::sqrt(2.0) * xs[a];
    const double x1 = q1.from_normal(z1);
    for (int b = 0; b < 9; ++b) {
      const double z2 = rho * std::sqrt(2.0) * xs[a] + s * std::sqrt(2.0) * xs[b];
      e12 += ws[a] * ws[b] * x1 * q2.from_normal(z2);
    }
  }
  e12 /= kPi;  // Hermite weight normalization, two dimensions
  return (e12 - mu1 * mu2) / (sd1 * sd2);
}

}  // namespace detail

// Solve for the Gaussian-copula correlations whose implied SN-marginal Pearson
// correlations match R. Pairs where both marginals are effectively Gaussian
// (|alpha| < 0.01) are copied unchanged.
inline Eigen::MatrixXd norta_adjust(const Eigen::MatrixXd& R, const std::vector<SkewNormalMarginal>& marginals,
                                    const std::vector<SnQuantileFast>& splines,
                                    std::vector<std::string>* warnings = nullptr) {
  const int m = static_cast<int>(R.rows());
  Eigen::MatrixXd Rs = R;
  std::vector<double> mu(m), sd(m);
  for (int j = 0; j < m; ++j) {
    mu[j] = marginals[j].mean();
    sd[j] = marginals[j].sd();
  }
  for (int j = 0; j < m; ++j) {
    for (int k = j + 1; k < m; ++k) {
      if (std::fabs(marginals[j].alpha) < 0.01 && std::fabs(marginals[k].alpha) < 0.01) continue;
      const double target = R(j, k);
      if (target == 0.0) continue;  // odd-function symmetry: attained(0) = 0
      auto attained = [&](double rho) {
        return detail::norta_attained(rho, splines[j], splines[k], mu[j], sd[j], mu[k], sd[k]);
      };
      double lo = -0.999, hi = 0.999;
      double flo = attained(lo) - target, fhi = attained(hi) - target;
      if (flo > 0.0 || fhi < 0.0) {
        // target beyond the attainable range: clamp to the boundary
        Rs(j, k) = Rs(k, j) = (flo > 0.0) ? lo : hi;
        if (warnings)
          warnings->push_back("norta: target correlation " + std::to_string(target) + " for pair (" +
                              std::to_string(j) + "," + std::to_string(k) + ") not attainable, clamped");
        continue;
      }
      // bisection/secant hybrid on the monotone attained-correlation curve
      double rho = std::clamp(target, lo, hi);
      double f = attained(rho) - target;
      for (int it = 0; it < 100 && (hi - lo) > 1e-6; ++it) {
        if (f > 0.0)
          hi = rho;
        else
          lo = rho;
        const double df = (f > 0.0) ? (f - flo) : (fhi - f);
        double nxt;
        if (f > 0.0) {
          nxt = (df > 0.0) ? rho - f * (rho - lo) / df : 0.5 * (lo + hi);
        } else {
          nxt = (df > 0.0) ? rho + (-f) * (hi - rho) / df : 0.5 * (lo + hi);
        }
        if (!(nxt > lo && nxt < hi)) nxt = 0.5 * (lo + hi);
        rho = nxt;
        f = attained(rho) - target;
        if (f > 0.0)
          fhi = f;
        else
          flo = f;
        if (std::fabs(f) < 1e-9) break;
      }
      Rs(j, k) = Rs(k, j) = rho;
    }
  }
  Rs = nearest_pd(Rs, 1e-8);
  // restore the exact unit diagonal after repair
  for (int j = 0; j < m; ++j) Rs(j, j) = 1.0;
  return Rs;
}

inline CopulaModel build_copula(const LaplaceFit& fit, const MarginalResults& marg, std::uint64_t seed = 1) {
  const int m = static_cast<int>(fit.theta_star.size());
  CopulaModel cm;
  cm.seed = seed;
  cm.center = fit.center();
  cm.scale.resize(m);
  cm.marginals = marg.marginals;
  cm.R.resize(m, m);
  for (int j = 0; j < m; ++j) cm.scale[j] = std::sqrt(fit.Omega(j, j));
  for (int j = 0; j < m; ++j)
    for (int k = 0; k < m; ++k) cm.R(j, k) = fit.Omega(j, k) / (cm.scale[j] * cm.scale[k]);
  cm.quantile_splines.reserve(m);
  for (int j = 0; j < m; ++j) {
    const auto& sn = cm.marginals[j];
    cm.quantile_splines.emplace_back(sn.xi, sn.omega, std::fabs(sn.alpha) < 0.01 ? 0.0 : sn.alpha);
  }
  cm.R_star = norta_adjust(cm.R, cm.marginals, cm.quantile_splines, &cm.warnings);
  Eigen::LLT<Eigen::MatrixXd> llt(cm.R_star);
  if (llt.info() != Eigen::Success) throw std::runtime_error("copula: adjusted correlation not positive definite");
  cm.L_star = llt.matrixL();
  return cm;
}

// ---------------------------------------------------------------------------
// Posterior sampling

struct PosteriorSample {
  Eigen::MatrixXd theta;  // nsamp x m, reduced unconstrained scale
  Eigen::MatrixXd x;      // nsamp x n_rows, natural scale (Defined rows evaluated)
};

// fill Defined rows of a natural-parameter vector from their expressions
inline void evaluate_defined(const ParameterTable& pt, Eigen::VectorXd& x) {
  std::map<std::string, double> env;
  for (std::size_t r = 0; r < pt.rows.size(); ++r)
    if (!pt.rows[r].label.empty() && pt.rows[r].mat != Mat::Defined) env[pt.rows[r].label] = x[r];
  for (std::size_t r = 0; r < pt.rows.size(); ++r) {
    const ParamRow& row = pt.rows[r];
    if (row.mat != Mat::Defined) continue;
    x[r] = evaluate_expression(row.expression, env);
    env[row.lhs] = x[r];  // later := rows may reference earlier ones
  }
}

inline PosteriorSample sample_posterior(const CopulaModel& cm, const ParameterTable& pt, int nsamp,
                                        std::uint64_t seed, int cores = 1) {
  const int m = static_cast<int>(cm.center.size());
  PosteriorSample out;
  out.theta.resize(nsamp, m);
  out.x.resize(nsamp, static_cast<int>(pt.rows.size()));

  auto row_work = [&](int i) {
    CounterRng rng(seed, static_cast<std::uint64_t>(i));
    Eigen::VectorXd eps(m);
    for (int j = 0; j < m; ++j) eps[j] = rng.normal();
    const Eigen::VectorXd z = cm.L_star * eps;
    Eigen::VectorXd th(m);
    for (int j = 0; j < m; ++j) th[j] = cm.center[j] + cm.scale[j] * cm.quantile_splines[j].from_normal(z[j]);
    out.theta.row(i) = th;
    Eigen::VectorXd x = pt.pars_to_x(th);
    evaluate_defined(pt, x);
    out.x.row(i) = x;
  };

  cores = std::max(1, std::min(cores, nsamp));
  if (cores == 1) {
    for (int i = 0; i < nsamp; ++i) row_work(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int t = 0; t < cores; ++t)
      pool.emplace_back([&] {
        for (int i = next.fetch_add(1); i < nsamp; i = next.fetch_add(1)) row_work(i);
      });
    for (auto& th : pool) th.join();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Derived quantities

struct DerivedSummary {
  std::string name;
  double mean = 0.0, sd = 0.0, q025 = 0.0, q500 = 0.0, q975 = 0.0;
  double sn_alpha = 0.0;  // shape of the SN refit (0 when not requested/degenerate)
  bool sn_refit = false;
};

namespace detail {

inline double sample_quantile(std::vector<double> v, double u) {
  std::sort(v.begin(), v.end());
  const double h = u * (static_cast<double>(v.size()) - 1.0);
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - lo) * (v[lo + 1] - v[lo]);
}

// maximum-likelihood SN fit to a sample, moment start via the delta relation
inline bool sn_fit_ml(const std::vector<double>& v, double& xi, double& omega, double& alpha) {
  const int n = static_cast<int>(v.size());
  double mean = 0.0;
  for (double t : v) mean += t / n;
  double m2 = 0.0, m3 = 0.0;
  for (double t : v) {
    m2 += (t - mean) * (t - mean) / n;
    m3 += std::pow(t - mean, 3) / n;
  }
  if (!(m2 > 0.0)) return false;
  const double skew = std::clamp(m3 / std::pow(m2, 1.5), -0.995 * kSnMaxSkewness, 0.995 * kSnMaxSkewness);
  const double delta = sn_delta_from_skewness(skew);
  double p0[3];
  p0[1] = std::log(std::sqrt(m2 / (1.0 - 2.0 * delta * delta / kPi)));
  p0[2] = sn_alpha_from_delta(delta);
  p0[0] = mean - std::exp(p0[1]) * delta * std::sqrt(2.0 / kPi);

  auto negll = [&](const Eigen::VectorXd& p, Eigen::VectorXd& g) {
    const double x0 = p[0], w = std::exp(p[1]), a = p[2];
    double f = 0.0;
    g.setZero(3);
    for (double t : v) {
      const double s = (t - x0) / w;
      const double lF = log_norm_cdf(a * s);
      f -= std::log(2.0) - std::log(w) + log_norm_pdf(s) + lF;
      // ratio phi(as)/Phi(as), computed stably through logs
      const double hr = std::exp(log_norm_pdf(a * s) - lF);
      g[0] -= (s / w) - (a / w) * hr;
      g[1] -= (-1.0 + s * s - a * s * hr);
      g[2] -= s * hr;
    }
    return f;
  };
  BfgsOptions opt;
  opt.max_iter = 200;
  opt.grad_tol = 1e-8;
  Eigen::VectorXd p = Eigen::Map<Eigen::Vector3d>(p0);
  auto res = bfgs_minimize([&](const Eigen::VectorXd& q, Eigen::VectorXd& g) { return negll(q, g); }, p, opt);
  if (!std::isfinite(res.f)) return false;
  xi = res.x[0];
  omega = std::exp(res.x[1]);
  alpha = res.x[2];
  return true;
}

}  // namespace detail

// summaries of the Defined (:=) rows and covariance rows from the sample
inline std::vector<DerivedSummary> derived_quantities(const Eigen::MatrixXd& x_samp, const ParameterTable& pt,
                                                      bool sn_fit_sample = false) {
  std::vector<DerivedSummary> out;
  const int nsamp = static_cast<int>(x_samp.rows());
  for (std::size_t r = 0; r < pt.rows.size(); ++r) {
    const ParamRow& row = pt.rows[r];
    const bool is_cov = (row.mat == Mat::ThetaCor || row.mat == Mat::PsiCor) && row.free_index != 0;
    if (row.mat != Mat::Defined && !is_cov) continue;
    DerivedSummary ds;
    ds.name = pt.param_name(row);
    std::vector<double> v(nsamp);
    for (int i = 0; i < nsamp; ++i) v[i] = x_samp(i, static_cast<int>(r));
    double mean = 0.0;
    for (double t : v) mean += t / nsamp;
    double var = 0.0;
    for (double t : v) var += (t - mean) * (t - mean) / nsamp;
    ds.mean = mean;
    ds.sd = std::sqrt(var);
    if (sn_fit_sample && ds.sd > 0.0) {
      double xi, omega, alpha;
      if (detail::sn_fit_ml(v, xi, omega, alpha)) {
        ds.sn_refit = true;
        ds.sn_alpha = alpha;
        ds.q025 = sn_quantile_bisect(0.025, xi, omega, alpha);
        ds.q500 = sn_quantile_bisect(0.5, xi, omega, alpha);
        ds.q975 = sn_quantile_bisect(0.975, xi, omega, alpha);
      }
    }
    if (!ds.sn_refit) {
      ds.q025 = detail::sample_quantile(v, 0.025);
      ds.q500 = detail::sample_quantile(v, 0.5);
      ds.q975 = detail::sample_quantile(v, 0.975);
    }
    out.push_back(std::move(ds));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Posterior covariance

// natural-scale sample covariance over the non-Defined rows
inline Eigen::MatrixXd posterior_vcov(const Eigen::MatrixXd& x_samp) {
  const int n = static_cast<int>(x_samp.rows());
  const Eigen::RowVectorXd mu = x_samp.colwise().mean();
  Eigen::MatrixXd c = x_samp.rowwise() - mu;
  return c.transpose() * c / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Prior predictive

// draw one natural-parameter vector from the priors (on each prior's target
// scale, mapped back to the reduced theta scale)
inline Eigen::VectorXd sample_prior_theta(const ParameterTable& pt, CounterRng& rng) {
  Eigen::VectorXd theta(pt.m);
  const auto& reps = pt.prior_representatives();
  for (int j = 0; j < pt.m; ++j) {
    const ParamRow& row = pt.rows[reps[j]];
    const PriorSpec& pr = row.prior;
    const bool is_var = (row.mat == Mat::ThetaVar || row.mat == Mat::PsiVar);
    const bool is_cor = (row.mat == Mat::ThetaCor || row.mat == Mat::PsiCor);
    double t;
    if (is_cor) {
      double rho;
      if (pr.family == PriorSpec::Family::Beta)
        rho = 2.0 * rng.beta(pr.p1, pr.p2) - 1.0;
      else
        rho = std::clamp(pr.p1 + pr.p2 * rng.normal(), -0.9999, 0.9999);
      t = std::atanh(rho);
    } else if (is_var) {
      double var;
      if (pr.family == PriorSpec::Family::Gamma) {
        const double draw = rng.gamma(pr.p1) / pr.p2;
        var = (pr.target_scale == PriorSpec::Scale::Sd) ? draw * draw : draw;
      } else {
        var = std::exp(pr.p1 + pr.p2 * rng.normal());
      }
      t = std::log(var);
    } else {
      t = pr.p1 + pr.p2 * rng.normal();
    }
    theta[j] = t;
  }
  return theta;
}

// nsamp synthetic datasets of the input shape, drawn from the prior
// predictive: theta ~ prior, eta/y* through the generative equations
inline std::vector<Eigen::MatrixXd> sample_prior_predictive(const ParameterTable& pt, int n, int nsamp,
                                                            std::uint64_t seed) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(nsamp);
  const int p = static_cast<int>(pt.ov[0].size());
  for (int b = 0; b < nsamp; ++b) {
    CounterRng rng(seed, static_cast<std::uint64_t>(b));
    Eigen::MatrixXd y(n, p);
    Eigen::VectorXd theta;
    ImpliedMoments mom;
    for (int attempt = 0;; ++attempt) {
      theta = sample_prior_theta(pt, rng);
      try {
        mom = implied_moments(model_matrices(pt, pt.pars_to_x(theta), 1, 1));
        break;
      } catch (const std::exception&) {
        if (attempt >= 100) throw;
      }
    }
    Eigen::LLT<Eigen::MatrixXd> llt(mom.sigma);
    if (llt.info() != Eigen::Success) {
      --b;  // the implied covariance can be semi-definite at extreme draws
      continue;
    }
    const Eigen::MatrixXd L = llt.matrixL();
    Eigen::VectorXd z(p);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < p; ++k) z[k] = rng.normal();
      y.row(i) = (mom.mu + L * z).transpose();
    }
    out.push_back(std::move(y));
  }
  return out;
}

}  // namespace bsem
