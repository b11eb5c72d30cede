// Acceptance suite: ten end-to-end criteria, one pass/fail line each.
// Exit status is nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "bsem/fit.hpp"
#include "bsem/math/rng.hpp"
#include "oracle.hpp"

using namespace bsem;

namespace {

int g_failures = 0;

void report(int num, const std::string& title, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %2d: %s (%s)\n", pass ? "PASS" : "FAIL", num, title.c_str(), detail.c_str());
  if (!pass) ++g_failures;
}

std::string source_dir() {
  const char* p = std::getenv("BSEM_SOURCE_DIR");
  if (!p) throw std::runtime_error("BSEM_SOURCE_DIR not set");
  return p;
}

const char* kPoldemModel = R"(
ind60 =~ x1 + x2 + x3
dem60 =~ y1 + y2 + y3 + y4
dem65 =~ y5 + y6 + y7 + y8
dem60 ~ ind60
dem65 ~ ind60 + dem60
y1 ~~ y5
y2 ~~ y4 + y6
y3 ~~ y7
y4 ~~ y8
y6 ~~ y8
)";

const SummaryRow& find_row(const FitResult& R, const std::string& lhs, const std::string& op,
                           const std::string& rhs) {
  for (const auto& r : R.summary)
    if (r.lhs == lhs && r.op == op && r.rhs == rhs) return r;
  throw std::runtime_error("summary row not found: " + lhs + op + rhs);
}

double wall_seconds(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Checker {
  std::ostringstream why;
  bool ok = true;
  void expect(bool cond, const std::string& what) {
    if (!cond) {
      if (!ok) why << "; ";
      why << what;
      ok = false;
    }
  }
};

std::string fmtnum(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

Dataset make_dataset(const Eigen::MatrixXd& Y, const std::vector<std::string>& cols) {
  Dataset ds;
  ds.columns = cols;
  ds.values = Y;
  return ds;
}

// -------------------------------------------------------------------------
// criterion 1: political-democracy end-to-end against the published table

void criterion_1() {
  Checker c;
  const auto t0 = std::chrono::steady_clock::now();
  Dataset ds = load_csv(source_dir() + "/data/political_democracy.csv");
  FitConfig cfg;
  cfg.seed = 1;
  cfg.nsamp = 1000;
  cfg.cores = 1;
  FitResult R = run_fit_from(kPoldemModel, ds, cfg);
  const double elapsed = wall_seconds(t0);

  auto pin = [&](const std::string& lhs, const std::string& op, const std::string& rhs, double est,
                 double sd) {
    const SummaryRow& r = find_row(R, lhs, op, rhs);
    c.expect(std::fabs(r.est - est) < 0.05, lhs + op + rhs + " est " + fmtnum(r.est));
    c.expect(std::fabs(r.sd - sd) < 0.15 * sd, lhs + op + rhs + " sd " + fmtnum(r.sd));
  };
  pin("ind60", "=~", "x2", 2.220, 0.147);
  pin("dem60", "~", "ind60", 1.453, 0.396);
  pin("x1", "~~", "x1", 0.089, 0.021);

  c.expect(std::fabs(R.measures.marg_loglik - (-1657.051)) < 1.0,
           "marg_loglik " + fmtnum(R.measures.marg_loglik));
  c.expect(std::fabs(R.measures.dic - 3157.117) < 5.0, "dic " + fmtnum(R.measures.dic));
  c.expect(std::fabs(R.measures.p_d - 30.285) < 2.0, "p_d " + fmtnum(R.measures.p_d));
  c.expect(std::fabs(R.measures.ppp - 0.522) < 0.08, "ppp " + fmtnum(R.measures.ppp));
  c.expect(std::fabs(R.vb_mean_shift - 0.202) < 0.05, "vb shift " + fmtnum(R.vb_mean_shift));
  c.expect(R.fit.diag.nmad_max <= 0.08, "nmad_max " + fmtnum(R.fit.diag.nmad_max));
  c.expect(std::fabs(R.fit.diag.hess_cond - 240.0) < 0.25 * 240.0,
           "hess_cond " + fmtnum(R.fit.diag.hess_cond));
  c.expect(elapsed < 30.0, "runtime " + fmtnum(elapsed) + "s");

  report(1, "political-democracy end-to-end pins", c.ok,
         c.ok ? "marg_loglik " + fmtnum(R.measures.marg_loglik) + ", dic " + fmtnum(R.measures.dic) +
                    ", ppp " + fmtnum(R.measures.ppp) + ", " + fmtnum(elapsed) + "s"
              : c.why.str());
}

// -------------------------------------------------------------------------
// criterion 2: MCMC oracle agreement and VB dominance on a 1-factor model

Eigen::MatrixXd simulate_one_factor(int n, std::uint64_t seed) {
  const double lam[4] = {1.0, 0.9, 1.1, 0.8};
  const double tht[4] = {0.5, 0.6, 0.4, 0.55};
  Eigen::MatrixXd Y(n, 4);
  for (int i = 0; i < n; ++i) {
    CounterRng rng(seed, i);
    const double f = std::sqrt(0.9) * rng.normal();
    const double shared = std::sqrt(0.15) * rng.normal();  // y1-y2 residual covariance
    for (int j = 0; j < 4; ++j) {
      const double ev = (j < 2) ? tht[j] - 0.15 : tht[j];
      Y(i, j) = lam[j] * f + std::sqrt(ev) * rng.normal() + (j < 2 ? shared : 0.0);
    }
  }
  return Y;
}

void criterion_2() {
  Checker c;
  const auto t0 = std::chrono::steady_clock::now();
  const Eigen::MatrixXd Y = simulate_one_factor(75, 2024);
  Dataset ds = make_dataset(Y, {"y1", "y2", "y3", "y4"});
  const std::string model = "f =~ y1 + y2 + y3 + y4\ny1 ~~ y2\n";

  FitConfig cfg;
  cfg.seed = 1;
  cfg.nsamp = 4000;
  FitResult Rvb = run_fit_from(model, ds, cfg);
  cfg.vb = false;
  FitResult Rraw = run_fit_from(model, ds, cfg);
  c.expect(Rvb.pt.m == 9, "expected 9 free parameters, got " + std::to_string(Rvb.pt.m));

  SemLikelihood lik(Rvb.pt, Rvb.blocks.blocks);
  const PosteriorFn post = make_log_posterior(Rvb.pt, lik);
  oracle::LogDensity logp = [&](const Eigen::VectorXd& th) {
    double f;
    Eigen::VectorXd g;
    if (!post(th, f, g)) return -std::numeric_limits<double>::infinity();
    return f;
  };
  oracle::McmcOptions mopt;
  mopt.seed = 99;
  const oracle::McmcResult chain = oracle::mcmc_sample(logp, Rvb.fit.theta_star, mopt);

  // thin the pooled draws for the kernel density estimate
  const int thin = 10;
  const int nth = static_cast<int>(chain.draws.rows()) / thin;
  Eigen::MatrixXd ref(nth, Rvb.pt.m);
  for (int i = 0; i < nth; ++i) ref.row(i) = chain.draws.row(static_cast<long>(i) * thin);

  double min_vb = 1.0, mean_vb = 0.0, mean_raw = 0.0;
  for (int j = 0; j < Rvb.pt.m; ++j) {
    const double jv = oracle::js_similarity(Rvb.samp.theta.col(j), ref.col(j));
    const double jr = oracle::js_similarity(Rraw.samp.theta.col(j), ref.col(j));
    min_vb = std::min(min_vb, jv);
    mean_vb += jv / Rvb.pt.m;
    mean_raw += jr / Rvb.pt.m;
  }
  const double elapsed = wall_seconds(t0);
  c.expect(min_vb >= 0.93, "min per-parameter JS " + fmtnum(min_vb));
  c.expect(mean_vb > mean_raw,
           "VB mean JS " + fmtnum(mean_vb) + " not above uncorrected " + fmtnum(mean_raw));
  c.expect(elapsed < 300.0, "runtime " + fmtnum(elapsed) + "s");

  report(2, "MCMC oracle agreement, VB dominates uncorrected", c.ok,
         "min JS " + fmtnum(min_vb) + ", mean VB " + fmtnum(mean_vb) + " vs raw " + fmtnum(mean_raw) +
             ", rhat " + fmtnum(chain.rhat_max) + ", " + fmtnum(elapsed) + "s" +
             (c.ok ? "" : "; " + c.why.str()));
}

// -------------------------------------------------------------------------
// criteria 3 and 4: gradient and likelihood oracles over the block kinds

Eigen::MatrixXd simulate_two_factor(int n, std::uint64_t seed) {
  Eigen::MatrixXd Y(n, 6);
  for (int i = 0; i < n; ++i) {
    CounterRng rng(seed, i);
    const double f1 = rng.normal();
    const double f2 = 0.4 * f1 + std::sqrt(1.0 - 0.16) * rng.normal();
    const double l[6] = {1.0, 0.8, 1.1, 1.0, 0.9, 1.2};
    for (int j = 0; j < 6; ++j) Y(i, j) = l[j] * (j < 3 ? f1 : f2) + 0.7 * rng.normal();
  }
  return Y;
}

struct TwoLevelSim {
  Dataset ds;
  Eigen::MatrixXd truth;  // complete values before holes are punched
};

TwoLevelSim simulate_two_level(int nclus, int per, std::uint64_t seed, double miss_rate) {
  TwoLevelSim out;
  const int n = nclus * per;
  Eigen::MatrixXd Y(n, 3);  // x, m, y
  std::vector<int> cl(n);
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> N01;
  std::uniform_real_distribution<double> U01;
  int r = 0;
  for (int j = 0; j < nclus; ++j) {
    const double ux = std::sqrt(0.3) * N01(gen), um = std::sqrt(0.3) * N01(gen),
                 uy = std::sqrt(0.3) * N01(gen);
    for (int i = 0; i < per; ++i, ++r) {
      const double xw = N01(gen);
      const double mw = 0.5 * xw + 0.8 * N01(gen);
      const double yw = 0.5 * mw + 0.3 * xw + 0.8 * N01(gen);
      Y(r, 0) = ux + xw;
      Y(r, 1) = um + mw;
      Y(r, 2) = uy + yw;
      cl[r] = j + 1;
    }
  }
  out.truth = Y;
  if (miss_rate > 0.0) {
    r = 0;
    for (int j = 0; j < nclus; ++j)
      for (int i = 0; i < per; ++i, ++r) {
        const double p = 1.0 / (1.0 + std::exp(2.5 - 1.3 * Y(r, 0)));
        if (U01(gen) < p) Y(r, 1) = std::numeric_limits<double>::quiet_NaN();
        if (U01(gen) < p) Y(r, 2) = std::numeric_limits<double>::quiet_NaN();
      }
  }
  out.ds = make_dataset(Y, {"x", "m", "y"});
  out.ds.cluster = cl;
  return out;
}

const char* kTwoLevelModel = R"(
level: 1
m ~ x
y ~ m + x
level: 2
x ~~ x
m ~~ m
y ~~ y
)";

// max relative error of the analytic gradient against central differences at
// npts admissible points around the posterior mode
double fd_gradient_error(const FitResult& R, int npts, std::uint64_t seed) {
  SemLikelihood lik(R.pt, R.blocks.blocks);
  const PosteriorFn post = make_log_posterior(R.pt, lik);
  const int m = R.pt.m;
  double worst = 0.0;
  int done = 0;
  for (int t = 0; done < npts && t < npts * 20; ++t) {
    CounterRng rng(seed, t);
    Eigen::VectorXd th = R.fit.theta_star;
    for (int j = 0; j < m; ++j) th[j] += 0.2 * rng.normal();
    double f;
    Eigen::VectorXd g;
    if (!post(th, f, g) || !std::isfinite(f)) continue;
    ++done;
    for (int j = 0; j < m; ++j) {
      const double h = 3e-5 * std::max(1.0, std::fabs(th[j]));
      Eigen::VectorXd tp = th, tm = th, gd;
      tp[j] += h;
      tm[j] -= h;
      double fp, fm;
      if (!post(tp, fp, gd) || !post(tm, fm, gd)) continue;
      const double fd = (fp - fm) / (2.0 * h);
      worst = std::max(worst, std::fabs(fd - g[j]) / std::max(1.0, std::fabs(g[j])));
    }
  }
  if (done < npts) throw std::runtime_error("fd_gradient_error: too few admissible points");
  return worst;
}

void criteria_3_and_4() {
  // shared fixtures ---------------------------------------------------------
  const Eigen::MatrixXd Yc = simulate_two_factor(50, 7);
  const std::string model2f = "f1 =~ x1 + x2 + x3\nf2 =~ x4 + x5 + x6\nf1 ~~ f2\n";
  const std::vector<std::string> cols = {"x1", "x2", "x3", "x4", "x5", "x6"};

  FitConfig base;
  base.nsamp = 50;  // sampling size is irrelevant here

  // complete single group
  FitResult Rcomp = run_fit_from(model2f, make_dataset(Yc, cols), base);

  // missing patterns (~10% MCAR holes)
  Eigen::MatrixXd Ym = Yc;
  {
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> U01;
    for (int i = 0; i < Ym.rows(); ++i)
      for (int j = 0; j < Ym.cols(); ++j)
        if (U01(gen) < 0.10) Ym(i, j) = std::numeric_limits<double>::quiet_NaN();
  }
  FitConfig mlcfg = base;
  mlcfg.missing = "ml";
  FitResult Rmiss = run_fit_from(model2f, make_dataset(Ym, cols), mlcfg);

  // two groups
  Dataset dsg = make_dataset(simulate_two_factor(85, 11), cols);
  dsg.ngroups = 2;
  dsg.group.assign(85, 1);
  for (int i = 40; i < 85; ++i) dsg.group[i] = 2;
  dsg.group_labels = {"g1", "g2"};
  FitResult Rgrp = run_fit_from(model2f, dsg, base);

  // two-level clusters
  TwoLevelSim tl = simulate_two_level(12, 6, 17, 0.0);
  FitResult Rtwo = run_fit_from(kTwoLevelModel, tl.ds, base);

  // criterion 3: analytic gradient vs central differences -------------------
  {
    Checker c;
    const struct {
      const char* kind;
      const FitResult* R;
    } kinds[] = {{"complete", &Rcomp}, {"missing", &Rmiss}, {"multigroup", &Rgrp}, {"two-level", &Rtwo}};
    std::ostringstream det;
    for (const auto& k : kinds) {
      const double err = fd_gradient_error(*k.R, 200, 31);
      det << k.kind << " " << fmtnum(err) << " ";
      c.expect(err < 1e-5, std::string(k.kind) + " rel err " + fmtnum(err));
    }
    report(3, "analytic gradients match finite differences (200 pts x 4 block kinds)", c.ok,
           c.ok ? det.str() : c.why.str());
  }

  // criterion 4: likelihood against dense oracles ---------------------------
  {
    Checker c;
    // missing-pattern block vs per-case observed-submatrix MVN
    {
      SemLikelihood lik(Rmiss.pt, Rmiss.blocks.blocks);
      const Eigen::VectorXd x = Rmiss.pt.pars_to_x(Rmiss.fit.theta_star);
      const double total = lik.loglik(x);
      const ImpliedMoments im = implied_moments(model_matrices(Rmiss.pt, x, 1, 1));
      double dense = 0.0;
      for (int i = 0; i < Ym.rows(); ++i) {
        std::vector<int> obs;
        for (int j = 0; j < Ym.cols(); ++j)
          if (std::isfinite(Ym(i, j))) obs.push_back(j);
        if (obs.empty()) continue;
        const int po = static_cast<int>(obs.size());
        Eigen::VectorXd y(po), mu(po);
        Eigen::MatrixXd S(po, po);
        for (int a = 0; a < po; ++a) {
          y[a] = Ym(i, obs[a]);
          mu[a] = im.mu[obs[a]];
          for (int b = 0; b < po; ++b) S(a, b) = im.sigma(obs[a], obs[b]);
        }
        dense += oracle::mvn_logpdf(y, mu, S);
      }
      const double err = std::fabs(total - dense) / std::max(1.0, std::fabs(dense));
      c.expect(err < 1e-10, "missing-pattern vs dense sub-MVN rel err " + fmtnum(err));
    }
    // two-level block vs dense Kronecker-sum MVN on clusters of size <= 5
    {
      TwoLevelSim small = simulate_two_level(2, 4, 23, 0.0);
      small.ds.cluster = {1, 1, 1, 2, 2, 2, 2, 2};  // sizes 3 and 5
      FitResult Rs = run_fit_from(kTwoLevelModel, small.ds, base);
      SemLikelihood lik(Rs.pt, Rs.blocks.blocks);
      const Eigen::VectorXd x = Rs.pt.pars_to_x(Rs.fit.theta_star);
      const double total = lik.loglik(x);
      const ImpliedMoments w = implied_moments(model_matrices(Rs.pt, x, 1, 1));
      const ImpliedMoments b = implied_moments(model_matrices(Rs.pt, x, 1, 2));
      // align the within ov order with the data columns and the between order
      const int p = static_cast<int>(Rs.pt.ov[0].size());
      std::vector<int> col(p), m2(p);
      for (int a = 0; a < p; ++a) {
        col[a] = static_cast<int>(std::find(small.ds.columns.begin(), small.ds.columns.end(),
                                            Rs.pt.ov[0][a]) -
                                  small.ds.columns.begin());
        m2[a] = static_cast<int>(std::find(Rs.pt.ov[1].begin(), Rs.pt.ov[1].end(), Rs.pt.ov[0][a]) -
                                 Rs.pt.ov[1].begin());
      }
      double dense = 0.0;
      int row = 0;
      for (int cl = 0; cl < 2; ++cl) {
        const int nk = (cl == 0) ? 3 : 5;
        Eigen::VectorXd y(nk * p), mu(nk * p);
        Eigen::MatrixXd C(nk * p, nk * p);
        for (int i = 0; i < nk; ++i)
          for (int a = 0; a < p; ++a) {
            y[i * p + a] = small.ds.values(row + i, col[a]);
            mu[i * p + a] = w.mu[a] + b.mu[m2[a]];
            for (int j = 0; j < nk; ++j)
              for (int ccol = 0; ccol < p; ++ccol)
                C(i * p + a, j * p + ccol) = b.sigma(m2[a], m2[ccol]) + (i == j ? w.sigma(a, ccol) : 0.0);
          }
        dense += oracle::mvn_logpdf(y, mu, C);
        row += nk;
      }
      const double err = std::fabs(total - dense) / std::max(1.0, std::fabs(dense));
      c.expect(err < 1e-8, "two-level vs dense Kronecker MVN rel err " + fmtnum(err));
    }
    report(4, "likelihood matches dense MVN oracles", c.ok, c.ok ? "sub-MVN 1e-10, Kronecker 1e-8" : c.why.str());
  }
}

// -------------------------------------------------------------------------
// criterion 5: skew-normal quantile accuracy and speed

void criterion_5() {
  Checker c;
  std::vector<double> us = {1e-6, 1e-5, 1e-4, 1e-3, 0.01, 0.05};
  for (double u = 0.1; u < 0.95; u += 0.1) us.push_back(u);
  for (double u : {0.95, 0.99, 0.999, 0.9999, 0.99999, 0.999999}) us.push_back(u);
  const double alphas[] = {-10, -7, -4, -2, -1, -0.5, 0.0, 0.5, 1, 2, 4, 7, 10};

  double worst = 0.0;
  for (double a : alphas) {
    SnQuantileFast q(0.0, 1.0, a);
    for (double u : us) {
      const double fast = q(u);
      const double ref = sn_quantile_bisect(u, 0.0, 1.0, a);
      worst = std::max(worst, std::fabs(fast - ref) / std::max(1.0, std::fabs(ref)));
    }
  }
  c.expect(worst < 1e-7, "max rel err " + fmtnum(worst));

  // speed: amortized per-call cost vs the bisection oracle
  SnQuantileFast q5(0.0, 1.0, 5.0);
  volatile double sink = 0.0;
  const int nfast = 200000, nslow = 4000;
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < nfast; ++i) sink += q5(us[i % us.size()]);
  const double tfast = wall_seconds(t0) / nfast;
  t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < nslow; ++i) sink += sn_quantile_bisect(us[i % us.size()], 0.0, 1.0, 5.0);
  const double tslow = wall_seconds(t0) / nslow;
  const double speedup = tslow / tfast;
  c.expect(speedup >= 10.0, "speedup " + fmtnum(speedup) + "x");

  report(5, "fast SN quantile: 1e-7 accuracy, >= 10x faster than bisection", c.ok,
         "max rel err " + fmtnum(worst) + ", speedup " + fmtnum(speedup) + "x" +
             (c.ok ? "" : "; " + c.why.str()));
}

// -------------------------------------------------------------------------
// criterion 6: NORTA correlation matching

void criterion_6() {
  Checker c;
  SkewNormalMarginal sn;
  sn.xi = 0.0;
  sn.omega = 1.0;
  sn.alpha = 5.0;
  std::vector<SkewNormalMarginal> marg = {sn, sn};
  std::vector<SnQuantileFast> spl;
  spl.emplace_back(0.0, 1.0, 5.0);
  spl.emplace_back(0.0, 1.0, 5.0);
  Eigen::MatrixXd R(2, 2);
  R << 1.0, 0.5, 0.5, 1.0;
  const Eigen::MatrixXd Rs = norta_adjust(R, marg, spl);
  c.expect(Rs(0, 1) > 0.5, "adjusted rho " + fmtnum(Rs(0, 1)) + " not above target");

  const int n = 100000;
  const double rho = Rs(0, 1), s = std::sqrt(1.0 - rho * rho);
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    CounterRng rng(314, i);
    const double z1 = rng.normal(), z2 = rng.normal();
    const double x = spl[0].from_normal(z1), y = spl[1].from_normal(rho * z1 + s * z2);
    sx += x;
    sy += y;
    sxx += x * x;
    syy += y * y;
    sxy += x * y;
  }
  const double cxy = sxy / n - (sx / n) * (sy / n);
  const double corr = cxy / std::sqrt((sxx / n - sx / n * sx / n) * (syy / n - sy / n * sy / n));
  c.expect(std::fabs(corr - 0.5) < 0.01, "empirical corr " + fmtnum(corr));

  // Gaussian marginals pass through unchanged
  SkewNormalMarginal g;
  std::vector<SkewNormalMarginal> gm = {g, g};
  std::vector<SnQuantileFast> gs;
  gs.emplace_back(0.0, 1.0, 0.0);
  gs.emplace_back(0.0, 1.0, 0.0);
  const Eigen::MatrixXd Rg = norta_adjust(R, gm, gs);
  c.expect(Rg(0, 1) == 0.5, "gaussian pair changed: " + fmtnum(Rg(0, 1)));

  report(6, "NORTA recovers rho 0.50 +- 0.01 with SN(0,1,5) marginals", c.ok,
         "rho* " + fmtnum(Rs(0, 1)) + ", empirical " + fmtnum(corr) + (c.ok ? "" : "; " + c.why.str()));
}

// -------------------------------------------------------------------------
// criterion 7: MAR imputation coverage on the reduced two-level design

void criterion_7() {
  Checker c;
  int covered = 0, cells = 0;
  for (int rep = 0; rep < 8 && cells < 220; ++rep) {
    TwoLevelSim sim = simulate_two_level(10, 15, 1000 + rep, 0.15);
    FitConfig cfg;
    cfg.missing = "ml";
    cfg.nsamp = 500;
    cfg.seed = 100 + rep;
    FitResult R = run_fit_from(kTwoLevelModel, sim.ds, cfg);
    const FactorScoreDraws ym = predict_scores(R.pt, R.data, R.samp.x, PredictType::Ymis, cfg.seed);
    const int B = static_cast<int>(ym.draws.size());
    // draw columns follow the model's ov order, not the data column order
    std::vector<int> ovcol(sim.ds.columns.size());
    for (std::size_t j = 0; j < sim.ds.columns.size(); ++j)
      ovcol[j] = static_cast<int>(std::find(ym.colnames.begin(), ym.colnames.end(), sim.ds.columns[j]) -
                                  ym.colnames.begin());
    for (int i = 0; i < sim.ds.values.rows(); ++i)
      for (int j = 0; j < sim.ds.values.cols(); ++j) {
        if (std::isfinite(sim.ds.values(i, j))) continue;
        std::vector<double> v(B);
        for (int b = 0; b < B; ++b) v[b] = ym.draws[b](i, ovcol[j]);
        std::sort(v.begin(), v.end());
        const double lo = v[static_cast<std::size_t>(0.05 * (B - 1))];
        const double hi = v[static_cast<std::size_t>(0.95 * (B - 1))];
        const double truth = sim.truth(i, j);
        ++cells;
        if (truth >= lo && truth <= hi) ++covered;
      }
  }
  const double cov = static_cast<double>(covered) / cells;
  c.expect(cells >= 200, "only " + std::to_string(cells) + " missing cells");
  c.expect(cov >= 0.85 && cov <= 0.95, "coverage " + fmtnum(cov));
  report(7, "90% interval coverage of MAR imputations in [85%, 95%]", c.ok,
         fmtnum(100 * cov) + "% over " + std::to_string(cells) + " cells" + (c.ok ? "" : "; " + c.why.str()));
}

// -------------------------------------------------------------------------
// criterion 8: profile grid refinement gains < 0.5% beyond 21 points

double sn_js(const SkewNormalMarginal& a, const SkewNormalMarginal& b) {
  const double lo = std::min(a.mean() - 6 * a.sd(), b.mean() - 6 * b.sd());
  const double hi = std::max(a.mean() + 6 * a.sd(), b.mean() + 6 * b.sd());
  const int n = 401;
  Eigen::VectorXd pa(n), pb(n);
  for (int k = 0; k < n; ++k) {
    const double t = lo + (hi - lo) * k / (n - 1);
    pa[k] = a.pdf(t);
    pb[k] = b.pdf(t);
  }
  return oracle::js_similarity_grid(pa, pb);
}

void criterion_8() {
  Checker c;
  Dataset ds = load_csv(source_dir() + "/data/political_democracy.csv");
  FitConfig cfg;
  cfg.nsamp = 100;
  auto fit_with = [&](int ngrid) {
    FitConfig k = cfg;
    k.ngrid = ngrid;
    return run_fit_from(kPoldemModel, ds, k);
  };
  const FitResult R21 = fit_with(21), R41 = fit_with(41), R101 = fit_with(101);
  const int m = R21.pt.m;
  double js21 = 0.0, js41 = 0.0;
  for (int j = 0; j < m; ++j) {
    js21 += sn_js(R21.cm.marginals[j], R101.cm.marginals[j]) / m;
    js41 += sn_js(R41.cm.marginals[j], R101.cm.marginals[j]) / m;
  }
  const double gain = js41 - js21;
  c.expect(js21 > 0.98, "21-point mean JS vs 101 " + fmtnum(js21));
  c.expect(gain < 0.005, "gain " + fmtnum(gain));
  report(8, "ngrid 21 -> 41 gains < 0.5% mean JS vs 101-point profiles", c.ok,
         "mean JS 21: " + fmtnum(js21) + ", 41: " + fmtnum(js41) + ", gain " + fmtnum(gain) +
             (c.ok ? "" : "; " + c.why.str()));
}

// -------------------------------------------------------------------------
// criterion 9: soft-constraint circumplex beats fixed loadings

void criterion_9() {
  Checker c;
  const int nitems = 16, n = 300;
  std::vector<double> ideal_c(nitems), ideal_s(nitems), pert_c(nitems), pert_s(nitems);
  std::mt19937_64 gen(41);
  std::normal_distribution<double> N01;
  for (int i = 0; i < nitems; ++i) {
    const double phi = 2.0 * M_PI * i / nitems;
    const double phip = phi + 0.35 * N01(gen);
    ideal_c[i] = 0.7 * std::cos(phi);
    ideal_s[i] = 0.7 * std::sin(phi);
    pert_c[i] = 0.7 * std::cos(phip);
    pert_s[i] = 0.7 * std::sin(phip);
  }
  Eigen::MatrixXd Y(n, nitems);
  for (int r = 0; r < n; ++r) {
    const double g = N01(gen), f1 = N01(gen), f2 = N01(gen);
    for (int i = 0; i < nitems; ++i)
      Y(r, i) = 0.6 * g + pert_c[i] * f1 + pert_s[i] * f2 + 0.6 * N01(gen);
  }
  std::vector<std::string> cols(nitems);
  for (int i = 0; i < nitems; ++i) cols[i] = "it" + std::to_string(i + 1);
  Dataset ds = make_dataset(Y, cols);

  auto loading = [&](double v, const std::string& item, bool soft) {
    char buf[96];
    if (soft)
      std::snprintf(buf, sizeof(buf), "prior('normal(%.4f,0.15)')*start(%.4f)*%s", v, v, item.c_str());
    else
      std::snprintf(buf, sizeof(buf), "%.4f*%s", v, item.c_str());
    return std::string(buf);
  };
  auto model = [&](bool soft) {
    std::ostringstream ss;
    ss << "G =~";
    for (int i = 0; i < nitems; ++i) ss << (i ? " + " : " ") << loading(0.6, cols[i], soft);
    ss << "\nC =~";
    for (int i = 0; i < nitems; ++i) ss << (i ? " + " : " ") << loading(ideal_c[i], cols[i], soft);
    ss << "\nS =~";
    for (int i = 0; i < nitems; ++i) ss << (i ? " + " : " ") << loading(ideal_s[i], cols[i], soft);
    ss << "\nG ~~ 0*C\nG ~~ 0*S\nC ~~ 0*S\n";
    return ss.str();
  };

  FitConfig cfg;
  cfg.std_lv = true;
  cfg.nsamp = 300;
  FitResult Rsoft = run_fit_from(model(true), ds, cfg);
  FitResult Rfix = run_fit_from(model(false), ds, cfg);

  std::vector<ModelSummary> models(2);
  models[0].name = "soft";
  models[0].npar = Rsoft.pt.m;
  models[0].marg_loglik = Rsoft.measures.marg_loglik;
  models[1].name = "fixed";
  models[1].npar = Rfix.pt.m;
  models[1].marg_loglik = Rfix.measures.marg_loglik;
  const auto rows = compare(std::move(models));
  c.expect(rows[0].model.name == "soft", "best model is " + rows[0].model.name);
  c.expect(rows[1].logbf < 0.0, "logBF of runner-up " + fmtnum(rows[1].logbf));
  report(9, "circumplex: soft loading constraints beat fixed ideal loadings", c.ok,
         "logBF(fixed vs soft) " + fmtnum(Rfix.measures.marg_loglik - Rsoft.measures.marg_loglik) +
             (c.ok ? "" : "; " + c.why.str()));
}

// -------------------------------------------------------------------------
// criterion 10: bit-identical fit artifacts at any thread count

void criterion_10() {
  Checker c;
  Dataset ds = load_csv(source_dir() + "/data/political_democracy.csv");
  FitConfig cfg;
  cfg.nsamp = 500;
  cfg.seed = 1;
  auto dump = [&](int cores) {
    FitConfig k = cfg;
    k.cores = cores;
    return fit_to_json(run_fit_from(kPoldemModel, ds, k), false).dump();
  };
  const std::string a = dump(1), b = dump(1), d = dump(4), e = dump(8);
  c.expect(a == b, "repeat run differs at cores=1");
  c.expect(a == d, "cores=4 differs from cores=1");
  c.expect(a == e, "cores=8 differs from cores=1");
  report(10, "identical config + seed: bit-identical artifacts across thread counts", c.ok,
         c.ok ? std::to_string(a.size()) + " bytes, cores {1,1,4,8} all equal" : c.why.str());
}

}  // namespace

int main() {
  using Criterion = void (*)();
  const struct {
    int num;
    const char* title;
    Criterion fn;
  } singles[] = {{1, "political-democracy end-to-end pins", &criterion_1},
                 {2, "MCMC oracle agreement", &criterion_2},
                 {0, "gradient + likelihood oracles", &criteria_3_and_4},
                 {5, "SN quantile", &criterion_5},
                 {6, "NORTA", &criterion_6},
                 {7, "MAR imputation coverage", &criterion_7},
                 {8, "grid refinement", &criterion_8},
                 {9, "circumplex soft constraints", &criterion_9},
                 {10, "determinism", &criterion_10}};
  for (const auto& s : singles) {
    try {
      s.fn();
    } catch (const std::exception& ex) {
      report(s.num, s.title, false, std::string("exception: ") + ex.what());
      if (s.num == 0) report(4, "likelihood oracles", false, "skipped after exception above");
    }
  }
  std::printf("%s\n", g_failures == 0 ? "all acceptance criteria passed" : "ACCEPTANCE FAILURES PRESENT");
  return g_failures == 0 ? 0 : 1;
}
