#pragma once
// Dense BFGS minimizer with strong-Wolfe line search (Nocedal & Wright,
// Algorithms 3.5/3.6). Objectives may return +inf to signal inadmissible
// points; the line search backtracks away from them.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>

namespace bsem {

struct BfgsOptions {
  int max_iter = 1000;
  int max_eval = 2000;
  double grad_tol = 1e-8;           // on the infinity norm of the gradient
  double rel_grad_tol = 0.0;        // optional: grad_inf / max(1,|f|)
  double c1 = 1e-4;
  double c2 = 0.9;
};

struct BfgsResult {
  Eigen::VectorXd x;
  double f = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd grad;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

// fn(x, grad_out) -> f; grad_out is always requested.
using ObjectiveFn = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

inline BfgsResult bfgs_minimize(const ObjectiveFn& fn, const Eigen::VectorXd& x0, const BfgsOptions& opt = {}) {
  const int n = static_cast<int>(x0.size());
  BfgsResult res;
  res.x = x0;
  res.grad.resize(n);
  int evals = 0;
  auto eval = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    ++evals;
    return fn(x, g);
  };

  double f = eval(res.x, res.grad);
  if (!std::isfinite(f)) {
    res.f = f;
    res.evaluations = evals;
    return res;  // NonFiniteObjective at start
  }

  Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd g = res.grad;
  bool first_update = true;

  for (int iter = 0; iter < opt.max_iter && evals < opt.max_eval; ++iter) {
    res.iterations = iter + 1;
    const double ginf = g.lpNorm<Eigen::Infinity>();
    if (ginf < opt.grad_tol || (opt.rel_grad_tol > 0.0 && ginf / std::max(1.0, std::fabs(f)) < opt.rel_grad_tol)) {
      res.converged = true;
      break;
    }

    Eigen::VectorXd p = -(Hinv * g);
    double dphi0 = g.dot(p);
    if (!(dphi0 < 0.0)) {  // not a descent direction; reset
      Hinv.setIdentity();
      p = -g;
      dphi0 = g.dot(p);
      if (!(dphi0 < 0.0)) break;
    }

    // strong-Wolfe line search
    const double phi0 = f;
    double alpha_prev = 0.0, phi_prev = phi0, dphi_prev = dphi0;
    // unit steps once curvature is calibrated; a conservative first step
    // guards against the raw-gradient scale at poor start values
    double alpha = first_update ? std::min(1.0, 1.0 / std::max(1.0, p.lpNorm<Eigen::Infinity>())) : 1.0;
    double alpha_lo = 0.0, alpha_hi = 0.0, phi_lo = 0.0, dphi_lo = 0.0;
    bool bracketed = false, ok = false;
    Eigen::VectorXd xt(n), gt(n);
    double ft = 0.0;

    for (int ls = 0; ls < 60 && evals < opt.max_eval; ++ls) {
      xt = res.x + alpha * p;
      ft = eval(xt, gt);
      if (!std::isfinite(ft)) {  // inadmissible: shrink hard
        alpha = alpha_prev + 0.25 * (alpha - alpha_prev);
        continue;
      }
      const double dphit = gt.dot(p);
      if (ft > phi0 + opt.c1 * alpha * dphi0 || (ls > 0 && ft >= phi_prev)) {
        alpha_lo = alpha_prev; phi_lo = phi_prev; dphi_lo = dphi_prev;
        alpha_hi = alpha;
        bracketed = true;
        break;
      }
      if (std::fabs(dphit) <= -opt.c2 * dphi0) {
        ok = true;
        break;
      }
      if (dphit >= 0.0) {
        alpha_lo = alpha; phi_lo = ft; dphi_lo = dphit;
        alpha_hi = alpha_prev;
        bracketed = true;
        break;
      }
      alpha_prev = alpha; phi_prev = ft; dphi_prev = dphit;
      alpha *= 2.0;
    }

    if (bracketed && !ok) {
      for (int z = 0; z < 60 && evals < opt.max_eval; ++z) {
        alpha = 0.5 * (alpha_lo + alpha_hi);
        xt = res.x + alpha * p;
        ft = eval(xt, gt);
        const double dphit = std::isfinite(ft) ? gt.dot(p) : 0.0;
        if (!std::isfinite(ft) || ft > phi0 + opt.c1 * alpha * dphi0 || ft >= phi_lo) {
          alpha_hi = alpha;
        } else {
          if (std::fabs(dphit) <= -opt.c2 * dphi0) {
            ok = true;
            break;
          }
          if (dphit * (alpha_hi - alpha_lo) >= 0.0) alpha_hi = alpha_lo;
          alpha_lo = alpha; phi_lo = ft; dphi_lo = dphit;
        }
        if (std::fabs(alpha_hi - alpha_lo) < 1e-14 * std::max(1.0, std::fabs(alpha_lo))) {
          ok = std::isfinite(ft) && ft < phi0;
          break;
        }
      }
    }

    if (!ok && !(std::isfinite(ft) && ft < phi0)) {
      // line search failed; stop (gradient tolerance decides convergence flag)
      res.converged = g.lpNorm<Eigen::Infinity>() < 10.0 * opt.grad_tol;
      break;
    }

    const Eigen::VectorXd s = xt - res.x;
    const Eigen::VectorXd y = gt - g;
    const double sy = s.dot(y);
    res.x = xt;
    f = ft;
    g = gt;
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (first_update) {
        Hinv *= sy / y.squaredNorm();  // initial scaling (Nocedal & Wright 6.20)
        first_update = false;
      }
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
      Hinv = (I - rho * s * y.transpose()) * Hinv * (I - rho * y * s.transpose()) + rho * s * s.transpose();
    }
  }

  res.f = f;
  res.grad = g;
  res.evaluations = evals;
  if (!res.converged) res.converged = g.lpNorm<Eigen::Infinity>() < opt.grad_tol;
  return res;
}

}  // namespace bsem
