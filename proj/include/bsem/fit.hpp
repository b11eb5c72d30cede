#pragma once
// Full fit pipeline orchestration and the self-contained JSON fit artifact
// consumed by the summary / diagnostics / compare / sample / predict
// subcommands. Large matrices are base64-encoded little-endian 64-bit floats.

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bsem/copula.hpp"
#include "bsem/data.hpp"
#include "bsem/marginals.hpp"
#include "bsem/posterior.hpp"
#include "bsem/posthoc.hpp"

namespace bsem {

inline constexpr const char* kBsemVersion = "0.1.0";

// ---------------------------------------------------------------------------
// base64 codec for double buffers (little-endian IEEE 754)
// ---------------------------------------------------------------------------

namespace detail {

inline const char* b64_alphabet() {
  return "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

inline std::string b64_encode(const unsigned char* data, std::size_t len) {
  const char* tab = b64_alphabet();
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  for (std::size_t i = 0; i < len; i += 3) {
    unsigned v = data[i] << 16;
    if (i + 1 < len) v |= data[i + 1] << 8;
    if (i + 2 < len) v |= data[i + 2];
    out.push_back(tab[(v >> 18) & 63]);
    out.push_back(tab[(v >> 12) & 63]);
    out.push_back(i + 1 < len ? tab[(v >> 6) & 63] : '=');
    out.push_back(i + 2 < len ? tab[v & 63] : '=');
  }
  return out;
}

inline std::vector<unsigned char> b64_decode(const std::string& s) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::vector<unsigned char> out;
  out.reserve(s.size() / 4 * 3);
  unsigned buf = 0;
  int bits = 0;
  for (char c : s) {
    const int v = val(c);
    if (v < 0) continue;  // '=' padding and whitespace
    buf = (buf << 6) | static_cast<unsigned>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<unsigned char>((buf >> bits) & 0xff));
    }
  }
  return out;
}

inline std::string encode_doubles(const double* p, std::size_t n) {
  std::vector<unsigned char> bytes(n * sizeof(double));
  std::memcpy(bytes.data(), p, bytes.size());
  return b64_encode(bytes.data(), bytes.size());
}

inline std::vector<double> decode_doubles(const std::string& s) {
  const auto bytes = b64_decode(s);
  std::vector<double> out(bytes.size() / sizeof(double));
  std::memcpy(out.data(), bytes.data(), out.size() * sizeof(double));
  return out;
}

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& M) {
  // row-major layout for readability of the stored stream
  std::vector<double> buf(static_cast<std::size_t>(M.size()));
  for (int i = 0; i < M.rows(); ++i)
    for (int j = 0; j < M.cols(); ++j) buf[static_cast<std::size_t>(i) * M.cols() + j] = M(i, j);
  return nlohmann::json{{"rows", M.rows()}, {"cols", M.cols()},
                        {"data", encode_doubles(buf.data(), buf.size())}};
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const int r = j.at("rows").get<int>(), c = j.at("cols").get<int>();
  const auto buf = decode_doubles(j.at("data").get<std::string>());
  if (static_cast<int>(buf.size()) != r * c) throw std::runtime_error("fit file: matrix payload size mismatch");
  Eigen::MatrixXd M(r, c);
  for (int i = 0; i < r; ++i)
    for (int k = 0; k < c; ++k) M(i, k) = buf[static_cast<std::size_t>(i) * c + k];
  return M;
}

inline nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  return nlohmann::json{{"rows", v.size()}, {"cols", 1}, {"data", encode_doubles(v.data(), v.size())}};
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  const Eigen::MatrixXd M = matrix_from_json(j);
  return Eigen::VectorXd(M.reshaped());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Fit configuration
// ---------------------------------------------------------------------------

struct FitConfig {
  std::string model_path, data_path, out_path;
  std::string group_col, cluster_col;
  std::string missing = "listwise";  // listwise | ml
  bool std_lv = false;
  bool meanstructure = false;
  std::uint64_t seed = 1;
  int nsamp = 1000;
  std::string marginal_correction = "shortcut";  // shortcut | shortcut_fd | hessian | none
  int ngrid = 21;
  bool vb = true;
  int optimizer_iter_max = 1000;
  int qmc_points = 0;
  int cores = 1;

  nlohmann::json to_json() const {
    return nlohmann::json{{"group_col", group_col},
                          {"cluster_col", cluster_col},
                          {"missing", missing},
                          {"std_lv", std_lv},
                          {"meanstructure", meanstructure},
                          {"seed", seed},
                          {"nsamp", nsamp},
                          {"marginal_correction", marginal_correction},
                          {"ngrid", ngrid},
                          {"vb", vb},
                          {"optimizer_iter_max", optimizer_iter_max},
                          {"qmc_points", qmc_points}};
  }
  static FitConfig from_json(const nlohmann::json& j) {
    FitConfig c;
    c.group_col = j.value("group_col", "");
    c.cluster_col = j.value("cluster_col", "");
    c.missing = j.value("missing", "listwise");
    c.std_lv = j.value("std_lv", false);
    c.meanstructure = j.value("meanstructure", false);
    c.seed = j.value("seed", std::uint64_t{1});
    c.nsamp = j.value("nsamp", 1000);
    c.marginal_correction = j.value("marginal_correction", "shortcut");
    c.ngrid = j.value("ngrid", 21);
    c.vb = j.value("vb", true);
    c.optimizer_iter_max = j.value("optimizer_iter_max", 1000);
    c.qmc_points = j.value("qmc_points", 0);
    return c;
  }
};

// ---------------------------------------------------------------------------
// Summary rows (natural scale)
// ---------------------------------------------------------------------------

struct SummaryRow {
  int row_index = 0;
  std::string lhs, op, rhs;
  int group = 1, level = 1;
  bool free = false;
  double est = 0.0, sd = 0.0, q025 = 0.0, q975 = 0.0, kld = 0.0;
  std::string prior;

  nlohmann::json to_json() const {
    nlohmann::json j{{"row", row_index}, {"lhs", lhs},     {"op", op},       {"rhs", rhs},
                     {"group", group},   {"level", level}, {"free", free},   {"est", est}};
    if (free) {
      j["sd"] = sd;
      j["q025"] = q025;
      j["q975"] = q975;
      j["kld"] = kld;
      j["prior"] = prior;
    }
    return j;
  }
  static SummaryRow from_json(const nlohmann::json& j) {
    SummaryRow r;
    r.row_index = j.at("row").get<int>();
    r.lhs = j.at("lhs").get<std::string>();
    r.op = j.at("op").get<std::string>();
    r.rhs = j.at("rhs").get<std::string>();
    r.group = j.at("group").get<int>();
    r.level = j.at("level").get<int>();
    r.free = j.at("free").get<bool>();
    r.est = j.at("est").get<double>();
    if (r.free) {
      r.sd = j.at("sd").get<double>();
      r.q025 = j.at("q025").get<double>();
      r.q975 = j.at("q975").get<double>();
      r.kld = j.at("kld").get<double>();
      r.prior = j.at("prior").get<std::string>();
    }
    return r;
  }
};

// ---------------------------------------------------------------------------
// Full fit result
// ---------------------------------------------------------------------------

struct FitMeasureSet {
  double marg_loglik = std::numeric_limits<double>::quiet_NaN();
  double dic = std::numeric_limits<double>::quiet_NaN();
  double p_d = std::numeric_limits<double>::quiet_NaN();
  double ppp = std::numeric_limits<double>::quiet_NaN();
  // posterior medians of the Bayesian fit indices; NaN when unavailable
  double brmsea = std::numeric_limits<double>::quiet_NaN();
  double bcfi = std::numeric_limits<double>::quiet_NaN();
  double btli = std::numeric_limits<double>::quiet_NaN();
  double bnfi = std::numeric_limits<double>::quiet_NaN();
};

struct FitResult {
  FitConfig cfg;
  std::string model_source;
  Dataset data;
  ParameterTable pt;
  BlockSet blocks;
  LaplaceFit fit;
  MarginalResults marg;
  CopulaModel cm;
  PosteriorSample samp;
  std::vector<SummaryRow> summary;
  FitMeasureSet measures;
  double vb_mean_shift = 0.0;  // mean |delta_j| / sd_j
  int n_obs = 0, n_dropped = 0;
  std::vector<std::string> warnings;
};

using ProgressFn = std::function<void(const std::string& stage, double millis)>;

namespace detail {

inline double median_of(Eigen::VectorXd v) {
  std::vector<double> s(v.data(), v.data() + v.size());
  std::sort(s.begin(), s.end());
  return sample_quantile(s, 0.5);
}

inline std::vector<SummaryRow> build_summary(const ParameterTable& pt, const LaplaceFit& fit,
                                             const MarginalResults& marg, const Eigen::MatrixXd& x_samp) {
  std::vector<SummaryRow> out;
  const Eigen::VectorXd center = fit.center();
  const int nsamp = static_cast<int>(x_samp.rows());
  for (int r = 0; r < pt.n_rows(); ++r) {
    const ParamRow& row = pt.rows[static_cast<std::size_t>(r)];
    SummaryRow s;
    s.row_index = r;
    s.lhs = row.lhs;
    s.op = row.op;
    s.rhs = row.rhs;
    s.group = row.group;
    s.level = row.level;
    const bool is_cov = (row.mat == Mat::ThetaCor || row.mat == Mat::PsiCor);
    if (row.free_index == 0 && row.mat != Mat::Defined) {
      s.free = false;
      s.est = row.fixed_value.value_or(0.0);
      out.push_back(std::move(s));
      continue;
    }
    s.free = true;
    s.prior = (row.mat == Mat::Defined) ? "" : row.prior.to_string();
    if (row.mat == Mat::Defined || is_cov) {
      // natural value depends on several free parameters; summarize samples
      std::vector<double> v(static_cast<std::size_t>(nsamp));
      for (int i = 0; i < nsamp; ++i) v[static_cast<std::size_t>(i)] = x_samp(i, r);
      double mean = 0.0;
      for (double t : v) mean += t / nsamp;
      double var = 0.0;
      for (double t : v) var += (t - mean) * (t - mean) / nsamp;
      std::sort(v.begin(), v.end());
      s.est = mean;
      s.sd = std::sqrt(var);
      s.q025 = sample_quantile(v, 0.025);
      s.q975 = sample_quantile(v, 0.975);
    } else {
      const int j = row.free_index - 1;
      const auto nat = marginal_to_natural(marg.marginals[static_cast<std::size_t>(j)], center[j],
                                           std::sqrt(fit.Omega(j, j)), natural_transform_for(pt, j));
      s.est = nat.mean;
      s.sd = nat.sd;
      s.q025 = nat.q025;
      s.q975 = nat.q975;
    }
    if (row.mat != Mat::Defined && row.free_index > 0) {
      const int j = row.free_index - 1;
      s.kld = fit.delta_hat[j] * fit.delta_hat[j] / (2.0 * fit.Omega(j, j));
    } else {
      s.kld = std::numeric_limits<double>::quiet_NaN();
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline BuildOptions options_from_data(const Dataset& ds, bool meanstructure, bool std_lv, int ngroups) {
  BuildOptions opt;
  opt.meanstructure = meanstructure;
  opt.std_lv = std_lv;
  opt.ngroups = ngroups;
  opt.col_means.resize(ds.columns.size());
  opt.col_vars.resize(ds.columns.size());
  for (std::size_t k = 0; k < ds.columns.size(); ++k) {
    double s = 0.0, s2 = 0.0;
    int n = 0;
    for (int i = 0; i < ds.nrows(); ++i) {
      const double v = ds.values(i, static_cast<int>(k));
      if (!std::isfinite(v)) continue;
      s += v;
      ++n;
    }
    const double mu = (n > 0) ? s / n : 0.0;
    for (int i = 0; i < ds.nrows(); ++i) {
      const double v = ds.values(i, static_cast<int>(k));
      if (!std::isfinite(v)) continue;
      s2 += (v - mu) * (v - mu);
    }
    opt.col_means[k] = mu;
    opt.col_vars[k] = (n > 0) ? s2 / n : 1.0;
  }
  return opt;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

// Run the full pipeline from model source + data. `progress` receives one call
// per stage with the wall time in milliseconds.
inline FitResult run_fit_from(const std::string& model_source, const Dataset& ds, FitConfig cfg,
                              const ProgressFn& progress = nullptr) {
  using clock = std::chrono::steady_clock;
  auto timed = [&](const std::string& stage, auto&& fn) {
    const auto t0 = clock::now();
    fn();
    if (progress)
      progress(stage, std::chrono::duration<double, std::milli>(clock::now() - t0).count());
  };

  FitResult R;
  R.model_source = model_source;
  R.data = ds;

  // missing = ml and two-level models require a meanstructure
  const auto ast = parse_model(model_source);
  bool two_level = false;
  for (const auto& st : ast) two_level = two_level || st.level == 2;
  if (cfg.missing == "ml" || two_level) cfg.meanstructure = true;
  R.cfg = cfg;

  const BuildOptions opt = detail::options_from_data(ds, cfg.meanstructure, cfg.std_lv, ds.ngroups);
  R.pt = build_parameter_table(ast, ds.columns, opt);
  R.blocks = (R.pt.nlevels == 2) ? make_cluster_blocks(ds, R.pt) : make_blocks(ds, R.pt, cfg.missing);
  R.n_obs = R.blocks.n_total;
  R.n_dropped = R.blocks.n_dropped;
  for (const auto& w : R.blocks.warnings) R.warnings.push_back(w);

  SemLikelihood lik(R.pt, R.blocks.blocks);
  const PosteriorFn post = make_log_posterior(R.pt, lik);
  PosteriorControl ctl;
  ctl.iter_max = cfg.optimizer_iter_max;
  ctl.eval_max = 2 * cfg.optimizer_iter_max;
  ctl.qmc_points = cfg.qmc_points;
  ctl.seed = cfg.seed;
  ctl.vb = cfg.vb;

  const int m = R.pt.m;
  R.fit.diag.npar = m;
  R.fit.diag.nsamp = cfg.nsamp;

  timed("Finding posterior mode.", [&] {
    BfgsResult mode = find_mode(post, R.pt.start_theta(), ctl);
    R.fit.theta_star = mode.x;
    R.fit.objective_at_mode = mode.f;
    R.fit.iterations = mode.iterations;
    R.fit.diag.iterations = mode.iterations;
    R.fit.diag.converged = mode.converged ? 1 : 0;
    R.fit.diag.grad_inf = mode.grad.lpNorm<Eigen::Infinity>();
    R.fit.diag.grad_l2 = mode.grad.norm();
    R.fit.diag.grad_inf_rel = R.fit.diag.grad_inf / std::max(1.0, std::fabs(mode.f));
  });

  timed("Computing the Hessian.", [&] {
    R.fit.H = hessian_at_mode(post, R.fit.theta_star);
    Eigen::LLT<Eigen::MatrixXd> lltH(R.fit.H);
    if (lltH.info() != Eigen::Success)
      throw std::runtime_error("Hessian at the mode is not positive definite; aborting");
    R.fit.Omega = lltH.solve(Eigen::MatrixXd::Identity(m, m));
    R.fit.Omega = (0.5 * (R.fit.Omega + R.fit.Omega.transpose())).eval();
    R.fit.L = Eigen::LLT<Eigen::MatrixXd>(R.fit.Omega).matrixL();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(R.fit.H);
    R.fit.diag.hess_cond = es.eigenvalues().maxCoeff() / es.eigenvalues().minCoeff();
  });

  R.fit.delta_hat = Eigen::VectorXd::Zero(m);
  if (cfg.vb) {
    double shift = 0.0;
    std::string vbline;
    timed("VB correction.", [&] {
      VbShiftResult vb = vb_shift(post, R.fit.theta_star, R.fit.L, ctl.qmc_points, ctl.seed);
      R.fit.delta_hat = vb.delta;
      R.fit.diag.vb_applied = vb.applied ? 1 : 0;
      if (vb.applied) {
        R.fit.diag.vb_kld_global = R.fit.objective_at_mode - vb.objective_shifted;
        Eigen::VectorXd kld(m);
        for (int j = 0; j < m; ++j)
          kld[j] = vb.delta[j] * vb.delta[j] / (2.0 * R.fit.Omega(j, j));
        R.fit.diag.kld_max = kld.maxCoeff();
        R.fit.diag.kld_mean = kld.mean();
      }
      for (int j = 0; j < m; ++j) shift += std::fabs(vb.delta[j]) / std::sqrt(R.fit.Omega(j, j));
      shift /= m;
    });
    R.vb_mean_shift = shift;
  }

  timed("Fitting " + std::to_string(m) + "/" + std::to_string(m) + " skew-normal marginals.", [&] {
    R.marg = profile_marginals(post, R.fit, tilt_method_from_string(cfg.marginal_correction),
                               cfg.ngrid, cfg.cores);
    R.fit.diag.nmad_max = R.marg.nmad_max;
    R.fit.diag.nmad_mean = R.marg.nmad_mean;
    for (const auto& w : R.marg.warnings) R.warnings.push_back(w);
  });

  timed("Adjusting copula correlations (NORTA).", [&] {
    R.cm = build_copula(R.fit, R.marg, cfg.seed);
    for (const auto& w : R.cm.warnings) R.warnings.push_back(w);
  });

  timed("Posterior sampling and summarising.", [&] {
    R.samp = sample_posterior(R.cm, R.pt, cfg.nsamp, cfg.seed, cfg.cores);
    R.summary = detail::build_summary(R.pt, R.fit, R.marg, R.samp.x);
    R.measures.marg_loglik = marginal_loglik(R.fit);
    const DicResult d = dic(lik, R.samp.x);
    R.measures.dic = d.dic;
    R.measures.p_d = d.p_d;
    // small designs can leave no usable replication blocks (e.g. every
    // cluster incomplete); report NaN with a warning instead of failing
    try {
      const PppResult ppp = ppp_chisq(R.pt, R.blocks.blocks, R.samp.x, cfg.seed);
      R.measures.ppp = ppp.ppp;
      for (const auto& w : ppp.warnings) R.warnings.push_back(w);
    } catch (const std::exception& ex) {
      R.warnings.push_back(std::string("ppp unavailable: ") + ex.what());
    }

    // Bayesian fit indices need a saturated deviance and an independence
    // baseline; only available for complete single-level data
    bool complete = R.pt.nlevels == 1;
    for (const auto& blk : R.blocks.blocks)
      complete = complete && blk.kind == DataBlock::Kind::Group;
    if (complete) {
      try {
        const std::string bsrc = independence_model_source(R.pt);
        auto bast = parse_model(bsrc);
        auto bpt = build_parameter_table(bast, ds.columns,
                                         detail::options_from_data(ds, cfg.meanstructure, false, ds.ngroups));
        auto bblocks = make_blocks(ds, bpt, cfg.missing);
        SemLikelihood blik(bpt, bblocks.blocks);
        auto bfit = laplace_fit(bpt, blik, ctl);
        const PosteriorFn bpost = make_log_posterior(bpt, blik);
        auto bmarg = profile_marginals(bpost, bfit, tilt_method_from_string(cfg.marginal_correction),
                                       cfg.ngrid, cfg.cores);
        auto bcm = build_copula(bfit, bmarg, cfg.seed);
        auto bsamp = sample_posterior(bcm, bpt, cfg.nsamp, cfg.seed, cfg.cores);
        const auto td = chisq_draws(R.pt, lik, R.samp.x);
        const auto bd = chisq_draws(bpt, blik, bsamp.x);
        const auto fi = bayes_fit_indices(td, bd);
        R.measures.brmsea = detail::median_of(fi.brmsea);
        R.measures.bcfi = detail::median_of(fi.bcfi);
        R.measures.btli = detail::median_of(fi.btli);
        R.measures.bnfi = detail::median_of(fi.bnfi);
      } catch (const std::exception& e) {
        R.warnings.push_back(std::string("fit indices unavailable: ") + e.what());
      }
    }
  });

  return R;
}

inline FitResult run_fit(const FitConfig& cfg, const ProgressFn& progress = nullptr) {
  std::ifstream in(cfg.model_path);
  if (!in) throw std::runtime_error("cannot open model file: " + cfg.model_path);
  std::stringstream ss;
  ss << in.rdbuf();
  Dataset ds = load_csv(cfg.data_path, cfg.group_col, cfg.cluster_col);
  return run_fit_from(ss.str(), ds, cfg, progress);
}

// ---------------------------------------------------------------------------
// Artifact serialization
// ---------------------------------------------------------------------------

inline nlohmann::json fit_to_json(const FitResult& R, bool timestamp = true) {
  nlohmann::json j;
  j["format"] = "bsem-fit";
  j["version"] = kBsemVersion;
  if (timestamp) {
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    j["created"] = std::chrono::duration_cast<std::chrono::seconds>(now).count();
  }
  j["options"] = R.cfg.to_json();
  j["model"] = R.model_source;
  nlohmann::json jd;
  jd["columns"] = R.data.columns;
  jd["values"] = detail::matrix_to_json(R.data.values);
  jd["group"] = R.data.group;
  jd["cluster"] = R.data.cluster;
  jd["group_labels"] = R.data.group_labels;
  jd["ngroups"] = R.data.ngroups;
  j["data"] = jd;
  j["n_obs"] = R.n_obs;
  j["n_dropped"] = R.n_dropped;
  j["partable"] = R.pt.to_json();
  j["theta_star"] = detail::vector_to_json(R.fit.theta_star);
  j["delta_hat"] = detail::vector_to_json(R.fit.delta_hat);
  j["H"] = detail::matrix_to_json(R.fit.H);
  j["Omega"] = detail::matrix_to_json(R.fit.Omega);
  j["objective_at_mode"] = R.fit.objective_at_mode;
  j["iterations"] = R.fit.iterations;
  j["diagnostics"] = R.fit.diag.to_json();
  j["vb_mean_shift"] = R.vb_mean_shift;
  nlohmann::json jm = nlohmann::json::array();
  for (const auto& sn : R.marg.marginals)
    jm.push_back({{"xi", sn.xi},
                  {"omega", sn.omega},
                  {"alpha", sn.alpha},
                  {"c", sn.c},
                  {"nmad", sn.nmad},
                  {"gaussian_fallback", sn.gaussian_fallback}});
  j["marginals"] = jm;
  nlohmann::json jp = nlohmann::json::array();
  for (const auto& pr : R.marg.profiles) {
    nlohmann::json p;
    p["j"] = pr.j;
    p["z"] = std::vector<double>(pr.z_grid.data(), pr.z_grid.data() + pr.z_grid.size());
    p["raw"] = std::vector<double>(pr.raw.data(), pr.raw.data() + pr.raw.size());
    p["adjusted"] = std::vector<double>(pr.adjusted.data(), pr.adjusted.data() + pr.adjusted.size());
    jp.push_back(std::move(p));
  }
  j["profiles"] = jp;
  j["R"] = detail::matrix_to_json(R.cm.R);
  j["R_star"] = detail::matrix_to_json(R.cm.R_star);
  nlohmann::json js = nlohmann::json::array();
  for (const auto& s : R.summary) js.push_back(s.to_json());
  j["summary"] = js;
  j["fit_measures"] = nlohmann::json{{"marg_loglik", R.measures.marg_loglik}, {"dic", R.measures.dic},
                                     {"p_d", R.measures.p_d},                 {"ppp", R.measures.ppp},
                                     {"brmsea", R.measures.brmsea},           {"bcfi", R.measures.bcfi},
                                     {"btli", R.measures.btli},               {"bnfi", R.measures.bnfi}};
  j["warnings"] = R.warnings;
  return j;
}

inline void save_fit(const FitResult& R, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write fit file: " + path);
  out << fit_to_json(R).dump(1) << "\n";
}

// Reload a fit artifact. The parameter table is rebuilt from the stored model
// source and data (deterministic); the copula is reassembled from the stored
// marginals and adjusted correlation matrix.
inline FitResult load_fit(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open fit file: " + path);
  nlohmann::json j;
  in >> j;
  if (j.value("format", "") != "bsem-fit") throw std::runtime_error("not a fit file: " + path);

  FitResult R;
  R.cfg = FitConfig::from_json(j.at("options"));
  R.model_source = j.at("model").get<std::string>();
  const auto& jd = j.at("data");
  R.data.columns = jd.at("columns").get<std::vector<std::string>>();
  R.data.values = detail::matrix_from_json(jd.at("values"));
  R.data.group = jd.at("group").get<std::vector<int>>();
  R.data.cluster = jd.at("cluster").get<std::vector<int>>();
  R.data.group_labels = jd.at("group_labels").get<std::vector<std::string>>();
  R.data.ngroups = jd.at("ngroups").get<int>();
  R.n_obs = j.at("n_obs").get<int>();
  R.n_dropped = j.at("n_dropped").get<int>();

  const auto ast = parse_model(R.model_source);
  const BuildOptions opt =
      detail::options_from_data(R.data, R.cfg.meanstructure, R.cfg.std_lv, R.data.ngroups);
  R.pt = build_parameter_table(ast, R.data.columns, opt);
  R.blocks = (R.pt.nlevels == 2) ? make_cluster_blocks(R.data, R.pt)
                                 : make_blocks(R.data, R.pt, R.cfg.missing);

  R.fit.theta_star = detail::vector_from_json(j.at("theta_star"));
  R.fit.delta_hat = detail::vector_from_json(j.at("delta_hat"));
  R.fit.H = detail::matrix_from_json(j.at("H"));
  R.fit.Omega = detail::matrix_from_json(j.at("Omega"));
  R.fit.L = Eigen::LLT<Eigen::MatrixXd>(R.fit.Omega).matrixL();
  R.fit.objective_at_mode = j.at("objective_at_mode").get<double>();
  R.fit.iterations = j.at("iterations").get<int>();
  const auto& dj = j.at("diagnostics");
  Diagnostics& d = R.fit.diag;
  d.npar = dj.at("npar").get<int>();
  d.nsamp = dj.at("nsamp").get<int>();
  d.converged = dj.at("converged").get<int>();
  d.iterations = dj.at("iterations").get<int>();
  d.grad_inf = dj.at("grad_inf").get<double>();
  d.grad_inf_rel = dj.at("grad_inf_rel").get<double>();
  d.grad_l2 = dj.at("grad_l2").get<double>();
  d.hess_cond = dj.at("hess_cond").get<double>();
  d.vb_applied = dj.at("vb_applied").get<int>();
  d.vb_kld_global = dj.at("vb_kld_global").get<double>();
  d.kld_max = dj.at("kld_max").get<double>();
  d.kld_mean = dj.at("kld_mean").get<double>();
  d.nmad_max = dj.at("nmad_max").get<double>();
  d.nmad_mean = dj.at("nmad_mean").get<double>();
  R.vb_mean_shift = j.value("vb_mean_shift", 0.0);

  for (const auto& js : j.at("marginals")) {
    SkewNormalMarginal sn;
    sn.xi = js.at("xi").get<double>();
    sn.omega = js.at("omega").get<double>();
    sn.alpha = js.at("alpha").get<double>();
    sn.c = js.at("c").get<double>();
    sn.nmad = js.at("nmad").get<double>();
    sn.gaussian_fallback = js.at("gaussian_fallback").get<bool>();
    R.marg.marginals.push_back(sn);
  }
  for (const auto& jpr : j.at("profiles")) {
    ProfileRecord pr;
    pr.j = jpr.at("j").get<int>();
    const auto z = jpr.at("z").get<std::vector<double>>();
    const auto raw = jpr.at("raw").get<std::vector<double>>();
    const auto adj = jpr.at("adjusted").get<std::vector<double>>();
    pr.z_grid = Eigen::Map<const Eigen::VectorXd>(z.data(), static_cast<int>(z.size()));
    pr.raw = Eigen::Map<const Eigen::VectorXd>(raw.data(), static_cast<int>(raw.size()));
    pr.adjusted = Eigen::Map<const Eigen::VectorXd>(adj.data(), static_cast<int>(adj.size()));
    R.marg.profiles.push_back(std::move(pr));
  }
  R.marg.nmad_max = d.nmad_max;
  R.marg.nmad_mean = d.nmad_mean;

  R.cm.R = detail::matrix_from_json(j.at("R"));
  R.cm.R_star = detail::matrix_from_json(j.at("R_star"));
  R.cm.L_star = Eigen::LLT<Eigen::MatrixXd>(R.cm.R_star).matrixL();
  R.cm.marginals = R.marg.marginals;
  R.cm.center = R.fit.center();
  R.cm.scale = R.fit.Omega.diagonal().cwiseSqrt();
  R.cm.seed = R.cfg.seed;
  for (const auto& sn : R.cm.marginals)
    R.cm.quantile_splines.emplace_back(sn.xi, sn.omega, std::fabs(sn.alpha) < 0.01 ? 0.0 : sn.alpha);

  for (const auto& js : j.at("summary")) R.summary.push_back(SummaryRow::from_json(js));
  const auto& fm = j.at("fit_measures");
  auto getd = [&](const char* k) {
    return fm.at(k).is_null() ? std::numeric_limits<double>::quiet_NaN() : fm.at(k).get<double>();
  };
  R.measures.marg_loglik = getd("marg_loglik");
  R.measures.dic = getd("dic");
  R.measures.p_d = getd("p_d");
  R.measures.ppp = getd("ppp");
  R.measures.brmsea = getd("brmsea");
  R.measures.bcfi = getd("bcfi");
  R.measures.btli = getd("btli");
  R.measures.bnfi = getd("bnfi");
  R.warnings = j.at("warnings").get<std::vector<std::string>>();
  return R;
}

}  // namespace bsem
