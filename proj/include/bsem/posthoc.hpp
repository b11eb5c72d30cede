#pragma once
// Post-estimation inference: marginal likelihood, DIC, posterior predictive
// checks, Bayesian fit indices, model comparison, factor scores, prediction,
// missing-value imputation, and standardized solutions.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "bsem/copula.hpp"
#include "bsem/data.hpp"
#include "bsem/likelihood.hpp"
#include "bsem/math/rng.hpp"
#include "bsem/posterior.hpp"

namespace bsem {

// ---------------------------------------------------------------------------
// Marginal log-likelihood (Laplace evidence with the VB correction)
// ---------------------------------------------------------------------------

// log m(y) = L(theta*) + (m/2) log 2pi + sum_k log L_kk - KLD_global,
// where L is the Cholesky factor of Omega and L(theta*) the log joint at the
// mode. Deterministic given the fit.
inline double marginal_loglik(const LaplaceFit& fit) {
  const int m = static_cast<int>(fit.theta_star.size());
  double half_logdet = 0.0;
  for (int k = 0; k < m; ++k) half_logdet += std::log(fit.L(k, k));
  return fit.objective_at_mode + 0.5 * m * std::log(2.0 * kPi) + half_logdet - fit.diag.vb_kld_global;
}

// ---------------------------------------------------------------------------
// DIC
// ---------------------------------------------------------------------------

struct DicResult {
  double dic = 0.0;
  double p_d = 0.0;
  double dbar = 0.0;   // posterior mean deviance
  double d_hat = 0.0;  // deviance at the posterior mean of x
  int n_used = 0;      // draws with finite deviance
};

// D(x) = -2 loglik(x); point estimate = posterior mean of the natural rows.
inline DicResult dic(const SemLikelihood& lik, const Eigen::MatrixXd& x_samp) {
  const int B = static_cast<int>(x_samp.rows());
  DicResult r;
  double sum = 0.0;
  for (int b = 0; b < B; ++b) {
    const double l = lik.loglik(x_samp.row(b).transpose());
    if (!std::isfinite(l)) continue;
    sum += -2.0 * l;
    ++r.n_used;
  }
  if (r.n_used == 0) throw std::runtime_error("dic: no admissible posterior draws");
  r.dbar = sum / r.n_used;
  const Eigen::VectorXd xmean = x_samp.colwise().mean();
  r.d_hat = -2.0 * lik.loglik(xmean);
  r.p_d = r.dbar - r.d_hat;
  r.dic = r.dbar + r.p_d;
  return r;
}

// ---------------------------------------------------------------------------
// Posterior predictive p-value (Wishart check)
// ---------------------------------------------------------------------------

namespace detail {

// Lower-triangular Bartlett factor of a Wishart(df, V) draw given chol(V).
inline Eigen::MatrixXd wishart_draw(const Eigen::MatrixXd& cholV, double df, CounterRng& rng) {
  const int p = static_cast<int>(cholV.rows());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
  for (int i = 0; i < p; ++i) {
    A(i, i) = std::sqrt(rng.chisq(df - i));
    for (int j = 0; j < i; ++j) A(i, j) = rng.normal();
  }
  const Eigen::MatrixXd LA = cholV * A;
  return LA * LA.transpose();
}

// ML discrepancy nu * [log|Sigma| + tr(S Sigma^-1) - log|S| - p]
// (+ quadratic mean term when d is non-null).
inline double ml_discrepancy(const Eigen::MatrixXd& S, const Eigen::MatrixXd& sigma_inv,
                             double logdet_sigma, double nu, const Eigen::VectorXd* d,
                             double n_mean, const Eigen::MatrixXd* sigma_inv_mean) {
  const int p = static_cast<int>(S.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::quiet_NaN();
  double logdet_s = 0.0;
  for (int i = 0; i < p; ++i) logdet_s += 2.0 * std::log(llt.matrixL()(i, i));
  double f = nu * (logdet_sigma + (sigma_inv * S).trace() - logdet_s - p);
  if (d != nullptr) f += n_mean * d->dot(*sigma_inv_mean * *d);
  return f;
}

}  // namespace detail

struct PppResult {
  double ppp = 0.0;
  int n_used = 0;  // draws entering the fraction
  std::vector<std::string> warnings;
};

// For each posterior draw: replicate the sample covariance from a Wishart
// distribution centered at the implied covariance, and compare the ML
// discrepancies of observed vs replicated data. Missing-pattern blocks too
// small for a full-rank Wishart draw are skipped; two-level models sum a
// pooled-within and a cluster-mean (between) discrepancy.
inline PppResult ppp_chisq(const ParameterTable& pt, const std::vector<DataBlock>& blocks,
                           const Eigen::MatrixXd& x_samp, std::uint64_t seed = 1,
                           bool mean_term = false) {
  const int B = static_cast<int>(x_samp.rows());
  PppResult out;
  int exceed = 0;
  bool warned_small = false;

  for (int b = 0; b < B; ++b) {
    const Eigen::VectorXd x = x_samp.row(b).transpose();
    CounterRng rng(seed, static_cast<std::uint64_t>(b));
    double d_obs = 0.0, d_rep = 0.0;
    bool ok = true;

    // per-group implied moments, computed lazily
    std::map<int, ImpliedMoments> im1, im2;
    auto implied = [&](int g, int level) -> const ImpliedMoments& {
      auto& cache = (level == 1) ? im1 : im2;
      auto it = cache.find(g);
      if (it == cache.end()) it = cache.emplace(g, implied_moments(model_matrices(pt, x, g, level))).first;
      return it->second;
    };

    // two-level accumulators (per group)
    struct ClusterAccum {
      Eigen::MatrixXd SW;
      double nu_w = 0.0;
      std::vector<Eigen::VectorXd> means;
      std::vector<double> sizes;
      int pw = 0;
    };
    std::map<int, ClusterAccum> clus;

    try {
      for (const DataBlock& blk : blocks) {
        if (blk.kind == DataBlock::Kind::Cluster) {
          if (blk.has_missing) continue;  // incomplete clusters excluded from the check
          auto& ca = clus[blk.group];
          if (ca.pw == 0) {
            ca.pw = static_cast<int>(blk.within_obs.size());
            ca.SW = Eigen::MatrixXd::Zero(ca.pw, ca.pw);
          }
          ca.SW += blk.SW;
          ca.nu_w += blk.n - 1;
          ca.means.push_back(blk.ybar_w);
          ca.sizes.push_back(blk.n);
          continue;
        }
        const int po = static_cast<int>(blk.observed.size());
        if (blk.n - 1 < po || po == 0) {
          if (!warned_small && b == 0) {
            out.warnings.push_back("ppp: skipped blocks too small for a full-rank Wishart replicate");
            warned_small = true;
          }
          continue;
        }
        const ImpliedMoments& im = implied(blk.group, 1);
        Eigen::MatrixXd sig(po, po);
        Eigen::VectorXd mu(po);
        for (int a = 0; a < po; ++a) {
          mu[a] = im.mu[blk.observed[a]];
          for (int c = 0; c < po; ++c) sig(a, c) = im.sigma(blk.observed[a], blk.observed[c]);
        }
        Eigen::LLT<Eigen::MatrixXd> llt(sig);
        if (llt.info() != Eigen::Success) { ok = false; break; }
        double logdet = 0.0;
        for (int a = 0; a < po; ++a) logdet += 2.0 * std::log(llt.matrixL()(a, a));
        const Eigen::MatrixXd sig_inv = llt.solve(Eigen::MatrixXd::Identity(po, po));
        const double nu = blk.n - 1.0;
        // unbiased observed covariance; replicated one from Wishart(n-1, Sigma/(n-1))
        const Eigen::MatrixXd S_obs = blk.S * (blk.n / nu);
        const Eigen::MatrixXd cholV = Eigen::MatrixXd(llt.matrixL()) / std::sqrt(nu);
        const Eigen::MatrixXd S_rep_cov = detail::wishart_draw(cholV, nu, rng);
        const bool use_mean = mean_term && pt.meanstructure;
        Eigen::VectorXd d_o, d_r;
        if (use_mean) {
          d_o = blk.ybar - mu;
          Eigen::VectorXd z(po);
          for (int a = 0; a < po; ++a) z[a] = rng.normal();
          d_r = (Eigen::MatrixXd(llt.matrixL()) * z) / std::sqrt(static_cast<double>(blk.n));
        }
        const double fo = detail::ml_discrepancy(S_obs, sig_inv, logdet, nu, use_mean ? &d_o : nullptr,
                                                 blk.n, &sig_inv);
        const double fr = detail::ml_discrepancy(S_rep_cov, sig_inv, logdet, nu, use_mean ? &d_r : nullptr,
                                                 blk.n, &sig_inv);
        if (!std::isfinite(fo) || !std::isfinite(fr)) { ok = false; break; }
        d_obs += fo;
        d_rep += fr;
      }

      // two-level: pooled within + cluster-mean between discrepancies
      for (auto& [g, ca] : clus) {
        const ImpliedMoments& w = implied(g, 1);
        const ImpliedMoments& btw = implied(g, 2);
        const int pw = ca.pw;
        const int J = static_cast<int>(ca.means.size());
        if (ca.nu_w < pw || J - 1 < pw) { ok = false; break; }
        // within: pooled S_W vs Sigma_W
        Eigen::LLT<Eigen::MatrixXd> lltw(w.sigma);
        if (lltw.info() != Eigen::Success) { ok = false; break; }
        double logdet_w = 0.0;
        for (int a = 0; a < pw; ++a) logdet_w += 2.0 * std::log(lltw.matrixL()(a, a));
        const Eigen::MatrixXd w_inv = lltw.solve(Eigen::MatrixXd::Identity(pw, pw));
        const Eigen::MatrixXd SW_hat = ca.SW / ca.nu_w;
        const Eigen::MatrixXd cholW = Eigen::MatrixXd(lltw.matrixL()) / std::sqrt(ca.nu_w);
        const Eigen::MatrixXd SW_rep = detail::wishart_draw(cholW, ca.nu_w, rng);
        const double fwo = detail::ml_discrepancy(SW_hat, w_inv, logdet_w, ca.nu_w, nullptr, 0.0, nullptr);
        const double fwr = detail::ml_discrepancy(SW_rep, w_inv, logdet_w, ca.nu_w, nullptr, 0.0, nullptr);
        // between: covariance of cluster means vs Sigma_B restricted to the
        // within variables + Sigma_W / n~ (average cluster size)
        double N = 0.0;
        for (double s : ca.sizes) N += s;
        const double nbar = N / J;
        Eigen::MatrixXd sigma_b(pw, pw);
        // between implied covariance on the within-variable part: map within
        // index a -> level-2 ov index (by variable name)
        std::vector<int> map_b(pw, -1);
        for (int a = 0; a < pw; ++a) {
          const std::string& nm = pt.ov[0][static_cast<std::size_t>(a)];
          map_b[a] = pt.ov_index(2, nm);
        }
        for (int a = 0; a < pw; ++a)
          for (int c = 0; c < pw; ++c)
            sigma_b(a, c) = (map_b[a] >= 0 && map_b[c] >= 0) ? btw.sigma(map_b[a], map_b[c]) : 0.0;
        const Eigen::MatrixXd C = sigma_b + w.sigma / nbar;
        Eigen::LLT<Eigen::MatrixXd> lltc(C);
        if (lltc.info() != Eigen::Success) { ok = false; break; }
        double logdet_c = 0.0;
        for (int a = 0; a < pw; ++a) logdet_c += 2.0 * std::log(lltc.matrixL()(a, a));
        const Eigen::MatrixXd c_inv = lltc.solve(Eigen::MatrixXd::Identity(pw, pw));
        Eigen::VectorXd gmean = Eigen::VectorXd::Zero(pw);
        for (const auto& mve : ca.means) gmean += mve;
        gmean /= J;
        Eigen::MatrixXd SB = Eigen::MatrixXd::Zero(pw, pw);
        for (const auto& mve : ca.means) SB += (mve - gmean) * (mve - gmean).transpose();
        SB /= (J - 1.0);
        const double nu_b = J - 1.0;
        const Eigen::MatrixXd cholC = Eigen::MatrixXd(lltc.matrixL()) / std::sqrt(nu_b);
        const Eigen::MatrixXd SB_rep = detail::wishart_draw(cholC, nu_b, rng);
        const double fbo = detail::ml_discrepancy(SB, c_inv, logdet_c, nu_b, nullptr, 0.0, nullptr);
        const double fbr = detail::ml_discrepancy(SB_rep, c_inv, logdet_c, nu_b, nullptr, 0.0, nullptr);
        if (!std::isfinite(fwo) || !std::isfinite(fwr) || !std::isfinite(fbo) || !std::isfinite(fbr)) {
          ok = false;
          break;
        }
        d_obs += fwo + fbo;
        d_rep += fwr + fbr;
      }
    } catch (const std::exception&) {
      ok = false;
    }
    if (!ok) continue;
    ++out.n_used;
    if (d_rep > d_obs) ++exceed;
  }
  if (out.n_used == 0) throw std::runtime_error("ppp_chisq: no admissible posterior draws");
  out.ppp = static_cast<double>(exceed) / out.n_used;
  return out;
}

// ---------------------------------------------------------------------------
// Bayesian fit indices
// ---------------------------------------------------------------------------

// Per-draw deviance chi-squares of one model against the saturated model,
// plus the pieces needed for the adjusted fit-index formulas.
struct ChisqDraws {
  Eigen::VectorXd chisq;  // D_b - D_sat per draw
  double p_d = 0.0;
  double df = 0.0;  // classical df: saturated moments minus free parameters
  int n = 0;        // total observation count
};

// Saturated log-likelihood from complete-data group blocks (d = 0, S fits
// exactly). Only single-level complete-data models are supported here.
inline double saturated_loglik(const ParameterTable& pt, const std::vector<DataBlock>& blocks) {
  double l = 0.0;
  for (const DataBlock& blk : blocks) {
    if (blk.kind != DataBlock::Kind::Group)
      throw std::runtime_error("fit indices require complete single-level data");
    const int p = static_cast<int>(blk.observed.size());
    Eigen::LLT<Eigen::MatrixXd> llt(blk.S);
    if (llt.info() != Eigen::Success) throw std::runtime_error("saturated_loglik: sample covariance not PD");
    double logdet = 0.0;
    for (int a = 0; a < p; ++a) logdet += 2.0 * std::log(llt.matrixL()(a, a));
    l += -0.5 * blk.n * (p * std::log(2.0 * kPi) + logdet + p);
  }
  (void)pt;
  return l;
}

inline ChisqDraws chisq_draws(const ParameterTable& pt, const SemLikelihood& lik,
                              const Eigen::MatrixXd& x_samp) {
  const double l_sat = saturated_loglik(pt, lik.blocks());
  const DicResult d = dic(lik, x_samp);
  const int B = static_cast<int>(x_samp.rows());
  ChisqDraws out;
  out.p_d = d.p_d;
  out.chisq.resize(B);
  for (int b = 0; b < B; ++b) {
    const double l = lik.loglik(x_samp.row(b).transpose());
    out.chisq[b] = std::isfinite(l) ? -2.0 * (l - l_sat) : std::numeric_limits<double>::quiet_NaN();
  }
  int nmoments = 0, ntot = 0;
  for (const DataBlock& blk : lik.blocks()) {
    const int p = static_cast<int>(blk.observed.size());
    nmoments += p * (p + 1) / 2 + (pt.meanstructure ? p : 0);
    ntot += blk.n;
  }
  out.df = nmoments - pt.m;
  out.n = ntot;
  return out;
}

struct FitIndexDraws {
  Eigen::VectorXd brmsea, bcfi, btli, bnfi;
  double df_adj = 0.0, df_adj_baseline = 0.0;
};

// Standard index formulas applied to the p_D-adjusted chi-square and the
// effective degrees of freedom df - p_D, per posterior draw. The baseline is
// an independence model fitted by the same pipeline; draws are paired by
// index (both vectors must have equal length).
inline FitIndexDraws bayes_fit_indices(const ChisqDraws& target, const ChisqDraws& baseline) {
  const int B = static_cast<int>(target.chisq.size());
  if (static_cast<int>(baseline.chisq.size()) != B)
    throw std::invalid_argument("bayes_fit_indices: draw counts differ");
  FitIndexDraws out;
  out.df_adj = target.df - target.p_d;
  out.df_adj_baseline = baseline.df - baseline.p_d;
  out.brmsea.resize(B);
  out.bcfi.resize(B);
  out.btli.resize(B);
  out.bnfi.resize(B);
  for (int b = 0; b < B; ++b) {
    const double ct = target.chisq[b] - target.p_d;
    const double cb = baseline.chisq[b] - baseline.p_d;
    const double num_t = std::max(ct - out.df_adj, 0.0);
    const double num_b = std::max(cb - out.df_adj_baseline, 0.0);
    out.brmsea[b] = (out.df_adj > 0.0) ? std::sqrt(num_t / (out.df_adj * target.n)) : 0.0;
    const double den = std::max(num_t, num_b);
    out.bcfi[b] = (den > 0.0) ? 1.0 - num_t / den : 1.0;
    const double rt = (out.df_adj > 0.0) ? ct / out.df_adj : 0.0;
    const double rb = (out.df_adj_baseline > 0.0) ? cb / out.df_adj_baseline : 0.0;
    out.btli[b] = (rb - 1.0 != 0.0) ? (rb - rt) / (rb - 1.0) : 1.0;
    out.bnfi[b] = (cb != 0.0) ? (cb - ct) / cb : 1.0;
  }
  return out;
}

// Model source text for the independence baseline: free variances only
// (covariances fixed at zero, means free when the target has a meanstructure).
inline std::string independence_model_source(const ParameterTable& pt) {
  std::string src;
  for (const std::string& v : pt.ov[0]) src += v + " ~~ " + v + "\n";
  return src;
}

// ---------------------------------------------------------------------------
// Model comparison
// ---------------------------------------------------------------------------

struct ModelSummary {
  std::string name;
  int npar = 0;
  double marg_loglik = 0.0;
  double dic = 0.0;
  double p_d = 0.0;
  std::map<std::string, double> fit_measures;  // optional extra columns
};

struct CompareRow {
  ModelSummary model;
  double logbf = 0.0;  // relative to the best (highest marginal loglik) model
};

inline std::vector<CompareRow> compare(std::vector<ModelSummary> models) {
  std::stable_sort(models.begin(), models.end(),
                   [](const ModelSummary& a, const ModelSummary& b) { return a.marg_loglik > b.marg_loglik; });
  std::vector<CompareRow> rows;
  rows.reserve(models.size());
  const double best = models.empty() ? 0.0 : models.front().marg_loglik;
  for (auto& ms : models) {
    CompareRow r;
    r.logbf = ms.marg_loglik - best;
    r.model = std::move(ms);
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Factor scores, prediction, imputation
// ---------------------------------------------------------------------------

enum class PredictType { Lv, Ov, Ypred, Ymis };

inline PredictType predict_type_from_string(const std::string& s) {
  if (s == "lv") return PredictType::Lv;
  if (s == "ov") return PredictType::Ov;
  if (s == "ypred") return PredictType::Ypred;
  if (s == "ymis") return PredictType::Ymis;
  throw std::invalid_argument("unknown predict type: " + s);
}

struct FactorScoreDraws {
  std::vector<Eigen::MatrixXd> draws;
  std::vector<std::string> colnames;
  std::vector<std::string> warnings;
};

namespace detail {

// symmetric PSD square root for sampling from possibly singular conditionals
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& V) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (V + V.transpose()));
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// data matrix in model variable order (level-1 ov), NaN = missing
inline Eigen::MatrixXd data_in_ov_order(const ParameterTable& pt, const Dataset& ds) {
  const auto& ov = pt.ov[0];
  const int n = ds.nrows(), p = static_cast<int>(ov.size());
  Eigen::MatrixXd Y(n, p);
  for (int j = 0; j < p; ++j) {
    const auto it = std::find(ds.columns.begin(), ds.columns.end(), ov[j]);
    if (it == ds.columns.end()) throw std::runtime_error("unknown variable: " + ov[j]);
    Y.col(j) = ds.values.col(it - ds.columns.begin());
  }
  return Y;
}

struct PatternGroup {
  int group = 1;
  std::vector<int> obs;   // observed ov indices
  std::vector<int> mis;   // missing ov indices
  std::vector<int> rows;  // data row indices
};

inline std::vector<PatternGroup> group_by_pattern(const Eigen::MatrixXd& Y, const std::vector<int>& group) {
  std::map<std::pair<int, std::vector<bool>>, std::size_t> seen;
  std::vector<PatternGroup> out;
  const int n = static_cast<int>(Y.rows()), p = static_cast<int>(Y.cols());
  for (int i = 0; i < n; ++i) {
    std::vector<bool> pat(p);
    for (int j = 0; j < p; ++j) pat[j] = std::isfinite(Y(i, j));
    const int g = group.empty() ? 1 : group[i];
    auto key = std::make_pair(g, pat);
    auto it = seen.find(key);
    if (it == seen.end()) {
      PatternGroup pg;
      pg.group = g;
      for (int j = 0; j < p; ++j) (pat[j] ? pg.obs : pg.mis).push_back(j);
      out.push_back(std::move(pg));
      it = seen.emplace(std::move(key), out.size() - 1).first;
    }
    out[it->second].rows.push_back(i);
  }
  return out;
}

// two-level ymis: per cluster, the within rows are jointly normal with
// covariance delta_ij Sigma_W + Sigma_B and mean mu_W + mu_B, so missing
// cells are drawn from the exact conditional given every observed cell in
// the cluster (including clustermates).
inline FactorScoreDraws predict_ymis_twolevel(const ParameterTable& pt, const Dataset& ds,
                                              const Eigen::MatrixXd& x_samp, std::uint64_t seed) {
  FactorScoreDraws out;
  const Eigen::MatrixXd Y = data_in_ov_order(pt, ds);
  const int n = static_cast<int>(Y.rows());
  const int p1 = static_cast<int>(pt.ov[0].size());
  const int B = static_cast<int>(x_samp.rows());
  if (ds.cluster.empty()) throw std::runtime_error("predict: two-level ymis requires a cluster column");

  bool any_missing = false;
  for (int i = 0; i < n && !any_missing; ++i)
    for (int j = 0; j < p1 && !any_missing; ++j) any_missing = !std::isfinite(Y(i, j));
  if (!any_missing) {
    out.warnings.push_back("ymis: data contain no missing values");
    return out;
  }
  out.colnames = pt.ov[0];

  // within ov -> level-2 ov index (-1 when the variable has no between part)
  std::vector<int> map2(p1, -1);
  for (int j = 0; j < p1; ++j) {
    const auto it = std::find(pt.ov[1].begin(), pt.ov[1].end(), pt.ov[0][j]);
    if (it != pt.ov[1].end()) map2[j] = static_cast<int>(it - pt.ov[1].begin());
  }
  // cluster -> rows, in order of first appearance
  std::vector<std::vector<int>> clusters;
  {
    std::map<int, std::size_t> idx;
    for (int i = 0; i < n; ++i) {
      auto it = idx.find(ds.cluster[i]);
      if (it == idx.end()) {
        clusters.emplace_back();
        it = idx.emplace(ds.cluster[i], clusters.size() - 1).first;
      }
      clusters[it->second].push_back(i);
    }
  }

  out.draws.reserve(B);
  for (int b = 0; b < B; ++b) {
    const Eigen::VectorXd x = x_samp.row(b).transpose();
    std::map<int, std::pair<ImpliedMoments, ImpliedMoments>> gm;
    for (int g = 1; g <= pt.ngroups; ++g)
      gm.emplace(g, std::make_pair(implied_moments(model_matrices(pt, x, g, 1)),
                                   implied_moments(model_matrices(pt, x, g, 2))));
    Eigen::MatrixXd D = Y;
    for (std::size_t cj = 0; cj < clusters.size(); ++cj) {
      const auto& rows = clusters[cj];
      const int g = ds.group.empty() ? 1 : ds.group[rows[0]];
      const ImpliedMoments& im1 = gm.at(g).first;
      const ImpliedMoments& im2 = gm.at(g).second;
      std::vector<std::pair<int, int>> obs, mis;  // (local row, var)
      for (std::size_t r = 0; r < rows.size(); ++r)
        for (int j = 0; j < p1; ++j)
          (std::isfinite(Y(rows[r], j)) ? obs : mis).emplace_back(static_cast<int>(r), j);
      if (mis.empty()) continue;
      auto cov = [&](const std::pair<int, int>& a, const std::pair<int, int>& c) {
        double v = (a.first == c.first) ? im1.sigma(a.second, c.second) : 0.0;
        if (map2[a.second] >= 0 && map2[c.second] >= 0) v += im2.sigma(map2[a.second], map2[c.second]);
        return v;
      };
      auto mean = [&](const std::pair<int, int>& a) {
        double v = im1.mu[a.second];
        if (map2[a.second] >= 0) v += im2.mu[map2[a.second]];
        return v;
      };
      const int no = static_cast<int>(obs.size()), nm = static_cast<int>(mis.size());
      Eigen::MatrixXd Coo(no, no), Cmo(nm, no), Cmm(nm, nm);
      Eigen::VectorXd d(no), mu_m(nm);
      for (int a = 0; a < no; ++a) {
        d[a] = Y(rows[obs[a].first], obs[a].second) - mean(obs[a]);
        for (int c = 0; c < no; ++c) Coo(a, c) = cov(obs[a], obs[c]);
      }
      for (int a = 0; a < nm; ++a) {
        mu_m[a] = mean(mis[a]);
        for (int c = 0; c < no; ++c) Cmo(a, c) = cov(mis[a], obs[c]);
        for (int c = 0; c < nm; ++c) Cmm(a, c) = cov(mis[a], mis[c]);
      }
      Eigen::VectorXd cond = mu_m;
      Eigen::MatrixXd V = Cmm;
      if (no > 0) {
        Eigen::LLT<Eigen::MatrixXd> llt(Coo);
        if (llt.info() != Eigen::Success)
          throw std::runtime_error("predict: cluster covariance not PD at a posterior draw");
        const Eigen::MatrixXd K = llt.solve(Cmo.transpose()).transpose();
        cond += K * d;
        V -= K * Cmo.transpose();
      }
      const Eigen::MatrixXd Vs = psd_sqrt(V);
      CounterRng rng(seed, static_cast<std::uint64_t>(b) * clusters.size() + cj);
      Eigen::VectorXd z(nm);
      for (int a = 0; a < nm; ++a) z[a] = rng.normal();
      const Eigen::VectorXd draw = cond + Vs * z;
      for (int a = 0; a < nm; ++a) D(rows[mis[a].first], mis[a].second) = draw[a];
    }
    out.draws.push_back(std::move(D));
  }
  return out;
}

}  // namespace detail

// Level-1 prediction. Per posterior draw b: factor scores eta_s drawn from the
// exact conditional N(m_s, V) given the observed entries of row s; ov/ypred
// propagate through the measurement model; ymis fills missing cells from the
// partitioned-normal conditional, one Cholesky per missing-data pattern.
inline FactorScoreDraws predict_scores(const ParameterTable& pt, const Dataset& ds,
                                       const Eigen::MatrixXd& x_samp, PredictType type,
                                       std::uint64_t seed = 1) {
  if (pt.nlevels == 2 && type == PredictType::Ymis)
    return detail::predict_ymis_twolevel(pt, ds, x_samp, seed);
  FactorScoreDraws out;
  const Eigen::MatrixXd Y = detail::data_in_ov_order(pt, ds);
  const int n = static_cast<int>(Y.rows());
  const int p = static_cast<int>(Y.cols());
  const int q = static_cast<int>(pt.lv[0].size());
  const int B = static_cast<int>(x_samp.rows());
  const auto patterns = detail::group_by_pattern(Y, ds.group);

  // without a meanstructure the likelihood treats the means as saturated, so
  // condition on deviations from the group sample means instead of nu
  Eigen::MatrixXd ybar_g = Eigen::MatrixXd::Zero(pt.ngroups, p);
  if (!pt.meanstructure) {
    Eigen::MatrixXd cnt = Eigen::MatrixXd::Zero(pt.ngroups, p);
    for (int i = 0; i < n; ++i) {
      const int g = ds.group.empty() ? 1 : ds.group[i];
      for (int j = 0; j < p; ++j)
        if (std::isfinite(Y(i, j))) {
          ybar_g(g - 1, j) += Y(i, j);
          cnt(g - 1, j) += 1.0;
        }
    }
    ybar_g.array() /= cnt.array().max(1.0);
  }

  if (type == PredictType::Ymis) {
    bool any_missing = false;
    for (const auto& pg : patterns) any_missing = any_missing || !pg.mis.empty();
    if (!any_missing) {
      out.warnings.push_back("ymis: data contain no missing values");
      return out;
    }
    out.colnames = pt.ov[0];
  } else if (type == PredictType::Lv) {
    out.colnames = pt.lv[0];
  } else {
    out.colnames = pt.ov[0];
  }

  out.draws.reserve(B);
  for (int b = 0; b < B; ++b) {
    const Eigen::VectorXd x = x_samp.row(b).transpose();
    // per-group structural quantities
    struct GroupMats {
      Eigen::MatrixXd lambda, theta, psi_t, sigma;
      Eigen::VectorXd nu, mu_eta, mu;
    };
    std::map<int, GroupMats> gm;
    for (int g = 1; g <= pt.ngroups; ++g) {
      ModelMatrices mm = model_matrices(pt, x, g, 1);
      GroupMats gmat;
      const Eigen::MatrixXd A =
          (Eigen::MatrixXd::Identity(q, q) - mm.beta).fullPivLu().inverse();
      gmat.lambda = mm.lambda;
      gmat.theta = mm.theta;
      gmat.psi_t = A * mm.psi * A.transpose();
      gmat.mu_eta = A * mm.alpha;
      gmat.nu = mm.nu;
      gmat.mu = pt.meanstructure ? (mm.nu + mm.lambda * gmat.mu_eta).eval()
                                 : ybar_g.row(g - 1).transpose().eval();
      gmat.sigma = mm.lambda * gmat.psi_t * mm.lambda.transpose() + mm.theta;
      gm.emplace(g, std::move(gmat));
    }

    Eigen::MatrixXd D;
    if (type == PredictType::Lv) D.setZero(n, q);
    else D.setZero(n, p);

    for (const auto& pg : patterns) {
      const GroupMats& G = gm.at(pg.group);
      const int po = static_cast<int>(pg.obs.size());
      Eigen::MatrixXd sig_oo(po, po), lam_o(po, q);
      Eigen::VectorXd mu_o(po);
      for (int a = 0; a < po; ++a) {
        mu_o[a] = G.mu[pg.obs[a]];
        lam_o.row(a) = G.lambda.row(pg.obs[a]);
        for (int c = 0; c < po; ++c) sig_oo(a, c) = G.sigma(pg.obs[a], pg.obs[c]);
      }
      Eigen::LLT<Eigen::MatrixXd> llt(sig_oo);
      if (po > 0 && llt.info() != Eigen::Success)
        throw std::runtime_error("predict: implied covariance not PD at a posterior draw");

      if (type == PredictType::Ymis) {
        const int pm = static_cast<int>(pg.mis.size());
        Eigen::MatrixXd K, Vs;
        if (pm > 0) {
          Eigen::MatrixXd sig_mo(pm, po), sig_mm(pm, pm);
          for (int a = 0; a < pm; ++a) {
            for (int c = 0; c < po; ++c) sig_mo(a, c) = G.sigma(pg.mis[a], pg.obs[c]);
            for (int c = 0; c < pm; ++c) sig_mm(a, c) = G.sigma(pg.mis[a], pg.mis[c]);
          }
          K = (po > 0) ? llt.solve(sig_mo.transpose()).transpose().eval()
                       : Eigen::MatrixXd::Zero(pm, 0).eval();
          Vs = detail::psd_sqrt(sig_mm - ((po > 0) ? (K * sig_mo.transpose()).eval()
                                                   : Eigen::MatrixXd::Zero(pm, pm).eval()));
        }
        for (int i : pg.rows) {
          for (int a = 0; a < po; ++a) D(i, pg.obs[a]) = Y(i, pg.obs[a]);
          if (pm == 0) continue;
          CounterRng rng(seed, static_cast<std::uint64_t>(b) * n + i);
          Eigen::VectorXd z(pm);
          for (int a = 0; a < pm; ++a) z[a] = rng.normal();
          Eigen::VectorXd mu_m(pm);
          for (int a = 0; a < pm; ++a) mu_m[a] = G.mu[pg.mis[a]];
          Eigen::VectorXd yo(po);
          for (int a = 0; a < po; ++a) yo[a] = Y(i, pg.obs[a]);
          const Eigen::VectorXd cond = mu_m + ((po > 0) ? (K * (yo - mu_o)).eval()
                                                        : Eigen::VectorXd::Zero(pm).eval());
          const Eigen::VectorXd draw = cond + Vs * z;
          for (int a = 0; a < pm; ++a) D(i, pg.mis[a]) = draw[a];
        }
        continue;
      }

      // factor scores: K = Psi~ Lambda_o' Sigma_oo^-1
      const Eigen::MatrixXd K =
          (po > 0) ? (G.psi_t * lam_o.transpose() * llt.solve(Eigen::MatrixXd::Identity(po, po))).eval()
                   : Eigen::MatrixXd::Zero(q, 0).eval();
      const Eigen::MatrixXd V = G.psi_t - ((po > 0) ? (K * lam_o * G.psi_t).eval()
                                                    : Eigen::MatrixXd::Zero(q, q).eval());
      const Eigen::MatrixXd Vs = detail::psd_sqrt(V);
      const Eigen::MatrixXd Ts = (type == PredictType::Ypred) ? detail::psd_sqrt(G.theta) : Eigen::MatrixXd();

      for (int i : pg.rows) {
        CounterRng rng(seed, static_cast<std::uint64_t>(b) * n + i);
        Eigen::VectorXd z(q);
        for (int a = 0; a < q; ++a) z[a] = rng.normal();
        Eigen::VectorXd yo(po);
        for (int a = 0; a < po; ++a) yo[a] = Y(i, pg.obs[a]);
        const Eigen::VectorXd m_s =
            G.mu_eta + ((po > 0) ? (K * (yo - mu_o)).eval() : Eigen::VectorXd::Zero(q).eval());
        const Eigen::VectorXd eta = m_s + Vs * z;
        if (type == PredictType::Lv) {
          D.row(i) = eta.transpose();
        } else {
          // equals nu + Lambda*eta with a meanstructure; keeps the saturated
          // group means otherwise
          Eigen::VectorXd yhat = G.mu + G.lambda * (eta - G.mu_eta);
          if (type == PredictType::Ypred) {
            Eigen::VectorXd e(p);
            for (int a = 0; a < p; ++a) e[a] = rng.normal();
            yhat += Ts * e;
          }
          D.row(i) = yhat.transpose();
        }
      }
    }
    out.draws.push_back(std::move(D));
  }
  return out;
}

// Level-2 (cluster) factor scores via a BLUP-type estimator: per draw, impute
// missing within-cluster cells from the marginal (within + between) moments,
// form cluster means, and condition the between-level latents on them through
// the between model. Returns J x q2 matrices in cluster order of first
// appearance; q2 covers the level-2 latents including phantom (observed)
// between variables.
inline FactorScoreDraws predict_scores_level2(const ParameterTable& pt, const Dataset& ds,
                                              const Eigen::MatrixXd& x_samp, std::uint64_t seed = 1) {
  if (pt.nlevels != 2) throw std::runtime_error("predict: level=2 requires a two-level model");
  if (ds.cluster.empty()) throw std::runtime_error("predict: level=2 requires a cluster column");
  FactorScoreDraws out;
  out.colnames = pt.lv[1];
  const Eigen::MatrixXd Y = detail::data_in_ov_order(pt, ds);
  const int n = static_cast<int>(Y.rows());
  const int p1 = static_cast<int>(pt.ov[0].size());
  const int q2 = static_cast<int>(pt.lv[1].size());
  const auto& ov2 = pt.ov[1];
  const int p2 = static_cast<int>(ov2.size());

  // union index: level-1 variables first, then between-only variables
  std::vector<int> map2(p2);
  int extra = 0;
  for (int j = 0; j < p2; ++j) {
    const int k = pt.ov_index(1, ov2[static_cast<std::size_t>(j)]);
    map2[j] = (k >= 0) ? k : p1 + extra++;
  }
  const int pu = p1 + extra;

  // cluster membership in order of first appearance
  std::vector<int> order;
  std::map<int, int> pos;
  std::vector<std::vector<int>> rows_of;
  for (int i = 0; i < n; ++i) {
    auto it = pos.find(ds.cluster[i]);
    if (it == pos.end()) {
      pos.emplace(ds.cluster[i], static_cast<int>(order.size()));
      order.push_back(ds.cluster[i]);
      rows_of.emplace_back();
      it = pos.find(ds.cluster[i]);
    }
    rows_of[it->second].push_back(i);
  }
  const int J = static_cast<int>(order.size());

  // between-only column values (constant within cluster)
  Eigen::MatrixXd yb = Eigen::MatrixXd::Constant(J, extra, std::numeric_limits<double>::quiet_NaN());
  for (int j = 0; j < p2; ++j) {
    if (map2[j] < p1) continue;
    const auto it = std::find(ds.columns.begin(), ds.columns.end(), ov2[static_cast<std::size_t>(j)]);
    if (it == ds.columns.end()) throw std::runtime_error("unknown variable: " + ov2[static_cast<std::size_t>(j)]);
    const auto col = ds.values.col(it - ds.columns.begin());
    for (int c = 0; c < J; ++c) yb(c, map2[j] - p1) = col[rows_of[static_cast<std::size_t>(c)].front()];
  }

  const int B = static_cast<int>(x_samp.rows());
  out.draws.reserve(B);
  for (int b = 0; b < B; ++b) {
    const Eigen::VectorXd x = x_samp.row(b).transpose();
    const ImpliedMoments w = implied_moments(model_matrices(pt, x, 1, 1));
    ModelMatrices mm2 = model_matrices(pt, x, 1, 2);
    const Eigen::MatrixXd A2 =
        (Eigen::MatrixXd::Identity(q2, q2) - mm2.beta).fullPivLu().inverse();
    const Eigen::MatrixXd psi_t2 = A2 * mm2.psi * A2.transpose();
    const Eigen::VectorXd mu_eta2 = A2 * mm2.alpha;
    const Eigen::VectorXd mu2 = mm2.nu + mm2.lambda * mu_eta2;
    const ImpliedMoments b2 = implied_moments(mm2);

    // union-level between moments
    Eigen::MatrixXd sigma_b = Eigen::MatrixXd::Zero(pu, pu);
    Eigen::VectorXd mu_u = Eigen::VectorXd::Zero(pu);
    Eigen::MatrixXd lam_u = Eigen::MatrixXd::Zero(pu, q2);
    for (int a = 0; a < p2; ++a) {
      mu_u[map2[a]] = mu2[a];
      lam_u.row(map2[a]) = mm2.lambda.row(a);
      for (int c = 0; c < p2; ++c) sigma_b(map2[a], map2[c]) = b2.sigma(a, c);
    }
    Eigen::MatrixXd sigma_w_u = Eigen::MatrixXd::Zero(pu, pu);
    sigma_w_u.topLeftCorner(p1, p1) = w.sigma;
    // marginal covariance of a single observation row (within variables)
    const Eigen::MatrixXd sigma_tot = w.sigma + sigma_b.topLeftCorner(p1, p1);
    const Eigen::VectorXd mu_w = w.mu + mu_u.head(p1);

    Eigen::MatrixXd D(J, q2);
    for (int c = 0; c < J; ++c) {
      CounterRng rng(seed, static_cast<std::uint64_t>(b) * (J + n) + c);
      const auto& rws = rows_of[static_cast<std::size_t>(c)];
      const double nj = static_cast<double>(rws.size());
      // cluster mean over within variables, imputing missing cells row-wise
      Eigen::VectorXd ymean = Eigen::VectorXd::Zero(p1);
      for (int i : rws) {
        Eigen::VectorXd yi(p1);
        std::vector<int> obs, mis;
        for (int a = 0; a < p1; ++a) (std::isfinite(Y(i, a)) ? obs : mis).push_back(a);
        for (int a : obs) yi[a] = Y(i, a);
        if (!mis.empty()) {
          const int po = static_cast<int>(obs.size()), pm = static_cast<int>(mis.size());
          Eigen::MatrixXd soo(po, po), smo(pm, po), smm(pm, pm);
          Eigen::VectorXd mo(po), mmu(pm), yo(po);
          for (int a = 0; a < po; ++a) {
            mo[a] = mu_w[obs[static_cast<std::size_t>(a)]];
            yo[a] = Y(i, obs[static_cast<std::size_t>(a)]);
            for (int d = 0; d < po; ++d) soo(a, d) = sigma_tot(obs[static_cast<std::size_t>(a)], obs[static_cast<std::size_t>(d)]);
          }
          for (int a = 0; a < pm; ++a) {
            mmu[a] = mu_w[mis[static_cast<std::size_t>(a)]];
            for (int d = 0; d < po; ++d) smo(a, d) = sigma_tot(mis[static_cast<std::size_t>(a)], obs[static_cast<std::size_t>(d)]);
            for (int d = 0; d < pm; ++d) smm(a, d) = sigma_tot(mis[static_cast<std::size_t>(a)], mis[static_cast<std::size_t>(d)]);
          }
          Eigen::VectorXd cond;
          Eigen::MatrixXd Vs;
          if (po > 0) {
            Eigen::LLT<Eigen::MatrixXd> llt(soo);
            if (llt.info() != Eigen::Success) throw std::runtime_error("predict: within covariance not PD");
            const Eigen::MatrixXd K = llt.solve(smo.transpose()).transpose();
            cond = mmu + K * (yo - mo);
            Vs = detail::psd_sqrt(smm - K * smo.transpose());
          } else {
            cond = mmu;
            Vs = detail::psd_sqrt(smm);
          }
          Eigen::VectorXd z(pm);
          for (int a = 0; a < pm; ++a) z[a] = rng.normal();
          const Eigen::VectorXd draw = cond + Vs * z;
          for (int a = 0; a < pm; ++a) yi[mis[static_cast<std::size_t>(a)]] = draw[a];
        }
        ymean += yi;
      }
      ymean /= nj;

      // union observation for the cluster; drop between-only entries that are
      // missing for this cluster
      std::vector<int> uobs;
      Eigen::VectorXd yu(pu);
      for (int a = 0; a < p1; ++a) {
        yu[a] = ymean[a];
        uobs.push_back(a);
      }
      for (int a = 0; a < extra; ++a)
        if (std::isfinite(yb(c, a))) {
          yu[p1 + a] = yb(c, a);
          uobs.push_back(p1 + a);
        }
      const int po = static_cast<int>(uobs.size());
      const Eigen::MatrixXd C = sigma_b + sigma_w_u / nj;
      Eigen::MatrixXd C_oo(po, po), cov_eta(q2, po);
      Eigen::VectorXd mo(po), yo(po);
      // Cov(eta2, cluster stat) = Psi~2 Lambda2' on the union index
      const Eigen::MatrixXd cov_full = psi_t2 * lam_u.transpose();
      for (int a = 0; a < po; ++a) {
        mo[a] = mu_u[uobs[static_cast<std::size_t>(a)]] + ((uobs[static_cast<std::size_t>(a)] < p1) ? w.mu[uobs[static_cast<std::size_t>(a)]] : 0.0);
        yo[a] = yu[uobs[static_cast<std::size_t>(a)]];
        cov_eta.col(a) = cov_full.col(uobs[static_cast<std::size_t>(a)]);
        for (int d = 0; d < po; ++d) C_oo(a, d) = C(uobs[static_cast<std::size_t>(a)], uobs[static_cast<std::size_t>(d)]);
      }
      Eigen::LLT<Eigen::MatrixXd> llt(C_oo);
      if (llt.info() != Eigen::Success) throw std::runtime_error("predict: cluster covariance not PD");
      const Eigen::MatrixXd K = llt.solve(cov_eta.transpose()).transpose();
      const Eigen::VectorXd m_c = mu_eta2 + K * (yo - mo);
      const Eigen::MatrixXd V = psi_t2 - K * cov_eta.transpose();
      const Eigen::MatrixXd Vs = detail::psd_sqrt(V);
      Eigen::VectorXd z(q2);
      for (int a = 0; a < q2; ++a) z[a] = rng.normal();
      D.row(c) = (m_c + Vs * z).transpose();
    }
    out.draws.push_back(std::move(D));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Standardized solutions
// ---------------------------------------------------------------------------

struct StdSolutionRow {
  int row_index = 0;  // index into pt.rows
  std::string lhs, op, rhs;
  int group = 1, level = 1;
  double est_std = 0.0, sd = 0.0, q025 = 0.0, q975 = 0.0;
};

// Standardize each posterior draw with the usual formulas (value divided by
// the implied standard deviations of the connected variables), then summarize.
inline std::vector<StdSolutionRow> standardized_solution(const ParameterTable& pt,
                                                         const Eigen::MatrixXd& x_samp) {
  const int B = static_cast<int>(x_samp.rows());
  const int R = pt.n_rows();
  std::vector<std::vector<double>> samples(static_cast<std::size_t>(R));
  for (auto& v : samples) v.reserve(static_cast<std::size_t>(B));

  for (int b = 0; b < B; ++b) {
    const Eigen::VectorXd x = x_samp.row(b).transpose();
    // implied SDs per (group, level)
    std::map<std::pair<int, int>, std::pair<Eigen::VectorXd, Eigen::VectorXd>> sds;  // (sd_ov, sd_lv)
    bool ok = true;
    for (int g = 1; g <= pt.ngroups && ok; ++g)
      for (int lv = 1; lv <= pt.nlevels && ok; ++lv) {
        ModelMatrices mm = model_matrices(pt, x, g, lv);
        const int q = static_cast<int>(mm.beta.rows());
        const Eigen::MatrixXd A = (Eigen::MatrixXd::Identity(q, q) - mm.beta).fullPivLu().inverse();
        const Eigen::MatrixXd psi_t = A * mm.psi * A.transpose();
        const Eigen::MatrixXd sigma = mm.lambda * psi_t * mm.lambda.transpose() + mm.theta;
        Eigen::VectorXd sd_ov = sigma.diagonal().cwiseMax(0.0).cwiseSqrt();
        Eigen::VectorXd sd_lv = psi_t.diagonal().cwiseMax(0.0).cwiseSqrt();
        if (!sd_ov.allFinite() || !sd_lv.allFinite()) ok = false;
        sds[{g, lv}] = {std::move(sd_ov), std::move(sd_lv)};
      }
    if (!ok) continue;
    for (int r = 0; r < R; ++r) {
      const ParamRow& row = pt.rows[static_cast<std::size_t>(r)];
      if (row.mat == Mat::Defined) continue;
      const auto& [sd_ov, sd_lv] = sds[{row.group, row.level}];
      const double v = x[r];
      double s = std::numeric_limits<double>::quiet_NaN();
      switch (row.mat) {
        case Mat::Lambda: s = v * sd_lv[row.col_j] / sd_ov[row.row_i]; break;
        case Mat::Beta: s = v * sd_lv[row.col_j] / sd_lv[row.row_i]; break;
        case Mat::Nu: s = v / sd_ov[row.row_i]; break;
        case Mat::Alpha: s = v / sd_lv[row.row_i]; break;
        case Mat::ThetaVar: s = v / (sd_ov[row.row_i] * sd_ov[row.row_i]); break;
        case Mat::ThetaCor: s = v / (sd_ov[row.row_i] * sd_ov[row.col_j]); break;
        case Mat::PsiVar: s = v / (sd_lv[row.row_i] * sd_lv[row.row_i]); break;
        case Mat::PsiCor: s = v / (sd_lv[row.row_i] * sd_lv[row.col_j]); break;
        case Mat::Defined: break;
      }
      if (std::isfinite(s)) samples[static_cast<std::size_t>(r)].push_back(s);
    }
  }

  std::vector<StdSolutionRow> out;
  for (int r = 0; r < R; ++r) {
    const ParamRow& row = pt.rows[static_cast<std::size_t>(r)];
    if (row.mat == Mat::Defined) continue;
    auto& v = samples[static_cast<std::size_t>(r)];
    if (v.empty()) continue;
    StdSolutionRow s;
    s.row_index = r;
    s.lhs = row.lhs;
    s.op = row.op;
    s.rhs = row.rhs;
    s.group = row.group;
    s.level = row.level;
    double mean = 0.0;
    for (double t : v) mean += t;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double t : v) var += (t - mean) * (t - mean);
    var /= std::max<std::size_t>(v.size() - 1, 1);
    std::sort(v.begin(), v.end());
    s.est_std = mean;
    s.sd = std::sqrt(var);
    s.q025 = detail::sample_quantile(v, 0.025);
    s.q975 = detail::sample_quantile(v, 0.975);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace bsem
