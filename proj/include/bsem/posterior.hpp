#pragma once
// Posterior mode, finite-difference Hessian, Laplace covariance, QMC
// variational mean shift, and the convergence diagnostics vector.

#include <Eigen/Dense>
#include <bit>
#include <cmath>
#include <functional>
#include <limits>

#include <nlohmann/json.hpp>

#include "bsem/likelihood.hpp"
#include "bsem/math/bfgs.hpp"
#include "bsem/math/normal.hpp"
#include "bsem/math/sobol.hpp"
#include "bsem/partable.hpp"

namespace bsem {

// f(theta) with gradient; returns false at inadmissible points (f = -inf)
using PosteriorFn = std::function<bool(const Eigen::VectorXd&, double&, Eigen::VectorXd&)>;

struct Diagnostics {
  int npar = 0;
  int nsamp = 0;
  int converged = 0;
  int iterations = 0;
  double grad_inf = 0.0, grad_inf_rel = 0.0, grad_l2 = 0.0;
  double hess_cond = 0.0;
  int vb_applied = 0;
  double vb_kld_global = 0.0, kld_max = 0.0, kld_mean = 0.0;
  double nmad_max = 0.0, nmad_mean = 0.0;

  nlohmann::json to_json() const {
    return nlohmann::json{{"npar", npar},
                          {"nsamp", nsamp},
                          {"converged", converged},
                          {"iterations", iterations},
                          {"grad_inf", grad_inf},
                          {"grad_inf_rel", grad_inf_rel},
                          {"grad_l2", grad_l2},
                          {"hess_cond", hess_cond},
                          {"vb_applied", vb_applied},
                          {"vb_kld_global", vb_kld_global},
                          {"kld_max", kld_max},
                          {"kld_mean", kld_mean},
                          {"nmad_max", nmad_max},
                          {"nmad_mean", nmad_mean}};
  }
};

struct PosteriorControl {
  int iter_max = 1000;
  int eval_max = 2000;
  double tol = 1e-6;      // on grad_inf / max(1, |objective|)
  int qmc_points = 0;     // 0 = auto: min(100, max(30, 2m))
  std::uint64_t seed = 1;
  bool vb = true;
};

// log pi(theta | y) = block loglik(x(theta)) + log prior(theta), with the
// chain-rule gradient J^T grad_x + grad_prior
inline PosteriorFn make_log_posterior(const ParameterTable& pt, const SemLikelihood& lik) {
  return [&pt, &lik](const Eigen::VectorXd& theta, double& f, Eigen::VectorXd& g) {
    const Eigen::VectorXd x = pt.pars_to_x(theta);
    Eigen::VectorXd gx;
    if (!lik.loglik_grad(x, f, gx)) {
      f = -std::numeric_limits<double>::infinity();
      return false;
    }
    const Eigen::MatrixXd J = pt.jacobian_x_wrt_theta(theta);
    g = J.transpose() * gx + pt.grad_log_prior(theta);
    f += pt.log_prior(theta);
    return true;
  };
}

inline BfgsResult find_mode(const PosteriorFn& post, const Eigen::VectorXd& theta0, const PosteriorControl& control) {
  {
    double f0;
    Eigen::VectorXd g0;
    if (!post(theta0, f0, g0) || !std::isfinite(f0))
      throw ModelError("NonFiniteObjective", "log posterior is not finite at the start values");
  }
  BfgsOptions opt;
  opt.max_iter = control.iter_max;
  opt.max_eval = control.eval_max;
  opt.grad_tol = 0.0;
  opt.rel_grad_tol = control.tol;
  ObjectiveFn obj = [&post](const Eigen::VectorXd& th, Eigen::VectorXd& g) {
    double f;
    if (!post(th, f, g)) {
      g.setZero();
      return std::numeric_limits<double>::infinity();
    }
    g = -g;
    return -f;
  };
  BfgsResult res = bfgs_minimize(obj, theta0, opt);
  res.f = -res.f;
  res.grad = -res.grad;
  return res;
}

// negative Hessian of the log posterior via a central-difference Jacobian of
// the analytic gradient (2m gradient evaluations), symmetrized
inline Eigen::MatrixXd hessian_at_mode(const PosteriorFn& post, const Eigen::VectorXd& theta_star) {
  const int m = static_cast<int>(theta_star.size());
  const double eps13 = std::cbrt(std::numeric_limits<double>::epsilon());
  Eigen::MatrixXd A(m, m);
  double f;
  Eigen::VectorXd gp(m), gm(m);
  for (int j = 0; j < m; ++j) {
    const double h = eps13 * std::max(1.0, std::fabs(theta_star[j]));
    Eigen::VectorXd tp = theta_star, tm = theta_star;
    tp[j] += h;
    tm[j] -= h;
    if (!post(tp, f, gp) || !post(tm, f, gm))
      throw ModelError("NonPositiveDefinite", "inadmissible point in the Hessian stencil");
    A.col(j) = (gp - gm) / (2.0 * h);
  }
  Eigen::MatrixXd H = -0.5 * (A + A.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(H);
  if (llt.info() != Eigen::Success)
    throw ModelError("NotPositiveDefinite",
                     "negative Hessian at the mode is not positive-definite; fit aborted");
  return H;
}

struct VbShiftResult {
  Eigen::VectorXd delta;      // shift on the theta scale
  Eigen::VectorXd d;          // shift in whitened coordinates
  double objective_shifted = 0.0;    // mean log posterior at the shifted points
  double objective_unshifted = 0.0;  // mean log posterior at d = 0
  bool applied = false;
  int b_qmc = 0;
};

inline VbShiftResult vb_shift(const PosteriorFn& post, const Eigen::VectorXd& theta_star, const Eigen::MatrixXd& L,
                              int b_qmc, std::uint64_t seed) {
  const int m = static_cast<int>(theta_star.size());
  if (b_qmc <= 0) b_qmc = std::min(100, std::max(30, 2 * m));
  // Sobol sequences are balanced only at power-of-two lengths; round up to
  // keep the QMC average unbiased
  b_qmc = static_cast<int>(std::bit_ceil(static_cast<unsigned>(b_qmc)));
  VbShiftResult out;
  out.b_qmc = b_qmc;
  out.delta = Eigen::VectorXd::Zero(m);
  out.d = Eigen::VectorXd::Zero(m);

  // fixed scrambled Sobol points mapped to standard normal
  const auto U = qmc_points(b_qmc, m, seed);
  Eigen::MatrixXd Z(b_qmc, m);
  for (int b = 0; b < b_qmc; ++b)
    for (int j = 0; j < m; ++j) Z(b, j) = norm_quantile(U[b][j]);

  // objective: minimize -(1/B) sum_b L(theta* + L(d + z_b)); gradient is the
  // QMC average of -L^T grad, reduced in fixed index order
  ObjectiveFn obj = [&](const Eigen::VectorXd& d, Eigen::VectorXd& g) {
    double total = 0.0;
    g = Eigen::VectorXd::Zero(m);
    double f;
    Eigen::VectorXd gt(m);
    for (int b = 0; b < b_qmc; ++b) {
      const Eigen::VectorXd th = theta_star + L * (d + Z.row(b).transpose());
      if (!post(th, f, gt) || !std::isfinite(f)) return std::numeric_limits<double>::infinity();
      total += f;
      g += L.transpose() * gt;
    }
    g = -g / static_cast<double>(b_qmc);
    return -total / static_cast<double>(b_qmc);
  };

  Eigen::VectorXd g0(m);
  const double f0 = obj(Eigen::VectorXd::Zero(m), g0);
  out.objective_unshifted = -f0;
  if (!std::isfinite(f0)) return out;  // delta = 0, not applied

  BfgsOptions opt;
  opt.max_iter = 200;
  opt.max_eval = 400;
  opt.grad_tol = 1e-6;
  BfgsResult res = bfgs_minimize(obj, Eigen::VectorXd::Zero(m), opt);
  if (!std::isfinite(res.f) || -res.f < out.objective_unshifted) return out;
  out.d = res.x;
  out.delta = L * res.x;
  out.objective_shifted = -res.f;
  out.applied = true;
  return out;
}

struct LaplaceFit {
  Eigen::VectorXd theta_star;  // mode
  Eigen::VectorXd delta_hat;   // VB shift
  Eigen::MatrixXd H, Omega, L; // negative Hessian, its inverse, chol(Omega)
  double objective_at_mode = 0.0;
  int iterations = 0;
  Diagnostics diag;

  Eigen::VectorXd center() const { return theta_star + delta_hat; }
};

inline LaplaceFit laplace_fit(const ParameterTable& pt, const SemLikelihood& lik,
                              const PosteriorControl& control = {}) {
  const PosteriorFn post = make_log_posterior(pt, lik);
  LaplaceFit fit;
  const int m = pt.m;
  fit.diag.npar = m;

  BfgsResult mode = find_mode(post, pt.start_theta(), control);
  fit.theta_star = mode.x;
  fit.objective_at_mode = mode.f;
  fit.iterations = mode.iterations;
  fit.diag.iterations = mode.iterations;
  fit.diag.converged = mode.converged ? 1 : 0;
  fit.diag.grad_inf = mode.grad.lpNorm<Eigen::Infinity>();
  fit.diag.grad_l2 = mode.grad.norm();
  fit.diag.grad_inf_rel = fit.diag.grad_inf / std::max(1.0, std::fabs(mode.f));

  fit.H = hessian_at_mode(post, fit.theta_star);
  Eigen::LLT<Eigen::MatrixXd> lltH(fit.H);
  fit.Omega = lltH.solve(Eigen::MatrixXd::Identity(m, m));
  fit.Omega = (0.5 * (fit.Omega + fit.Omega.transpose())).eval();
  fit.L = Eigen::LLT<Eigen::MatrixXd>(fit.Omega).matrixL();
  {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fit.H);
    fit.diag.hess_cond = es.eigenvalues().maxCoeff() / es.eigenvalues().minCoeff();
  }

  fit.delta_hat = Eigen::VectorXd::Zero(m);
  if (control.vb) {
    VbShiftResult vb = vb_shift(post, fit.theta_star, fit.L, control.qmc_points, control.seed);
    fit.delta_hat = vb.delta;
    fit.diag.vb_applied = vb.applied ? 1 : 0;
    if (vb.applied) {
      // global KLD: gap between the log posterior at the mode and the QMC
      // average of the log posterior under the shifted Gaussian (= m/2 when
      // the posterior is exactly Gaussian); this is the VB correction later
      // subtracted from the Laplace marginal log-likelihood
      fit.diag.vb_kld_global = fit.objective_at_mode - vb.objective_shifted;
      Eigen::VectorXd kld(m);
      for (int j = 0; j < m; ++j) kld[j] = fit.delta_hat[j] * fit.delta_hat[j] / (2.0 * fit.Omega(j, j));
      fit.diag.kld_max = kld.maxCoeff();
      fit.diag.kld_mean = kld.mean();
    }
  }
  return fit;
}

}  // namespace bsem
