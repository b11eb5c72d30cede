#pragma once
// Parameter-space compilation: AST + data schema -> augmented parameter table
// with matrix roles, priors, transforms, start values, and the equality
// projection; plus the theta -> x map, its Jacobian, and the log-prior.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bsem/dsl.hpp"
#include "bsem/math/normal.hpp"

namespace bsem {

class ModelError : public std::runtime_error {
 public:
  ModelError(const std::string& code, const std::string& msg) : std::runtime_error(code + ": " + msg), code_(code) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

enum class Mat { Lambda, Beta, Nu, Alpha, ThetaVar, ThetaCor, PsiVar, PsiCor, Defined };

inline const char* mat_name(Mat m) {
  switch (m) {
    case Mat::Lambda: return "lambda";
    case Mat::Beta: return "beta";
    case Mat::Nu: return "nu";
    case Mat::Alpha: return "alpha";
    case Mat::ThetaVar: return "theta_var";
    case Mat::ThetaCor: return "theta_cor";
    case Mat::PsiVar: return "psi_var";
    case Mat::PsiCor: return "psi_cor";
    case Mat::Defined: return "defined";
  }
  return "?";
}

struct ParamRow {
  int id = 0;  // 1-based
  std::string lhs, op, rhs;
  int group = 1;  // block index for multigroup
  int level = 1;  // 1 = within, 2 = between
  int free_index = 0;  // 1-based into the reduced space; 0 = fixed
  std::optional<double> fixed_value;
  Mat mat = Mat::Lambda;
  PriorSpec prior;
  bool user_prior = false;
  std::string label;
  double start_natural = 0.0;
  std::string expression;  // Defined rows only
  // coordinates in the block matrices (observed index for Theta/Nu rows;
  // latent index for Psi/Alpha/Beta; Lambda rows are (observed, latent))
  int row_i = -1, col_j = -1;
  // for covariance rows: table indices of the two variance rows
  int var_row_a = -1, var_row_b = -1;
};

struct BuildOptions {
  bool std_lv = false;
  bool meanstructure = false;
  int ngroups = 1;
  // per data-column sample moments used for start values (by column order)
  std::vector<double> col_means, col_vars;
};

class ParameterTable {
 public:
  std::vector<ParamRow> rows;
  int m = 0;               // reduced (free) dimension
  int ngroups = 1;
  int nlevels = 1;
  bool meanstructure = false;
  std::vector<std::string> columns;  // data columns (model order irrelevant)
  // per level: observed / latent variable lists (shared across groups)
  std::vector<std::vector<std::string>> ov;  // [level-1]
  std::vector<std::vector<std::string>> lv;  // [level-1], includes phantoms
  std::vector<std::vector<bool>> lv_phantom;

  int n_rows() const { return static_cast<int>(rows.size()); }

  int ov_index(int level, const std::string& name) const {
    const auto& v = ov[level - 1];
    const auto it = std::find(v.begin(), v.end(), name);
    return it == v.end() ? -1 : static_cast<int>(it - v.begin());
  }
  int lv_index(int level, const std::string& name) const {
    const auto& v = lv[level - 1];
    const auto it = std::find(v.begin(), v.end(), name);
    return it == v.end() ? -1 : static_cast<int>(it - v.begin());
  }

  // ---- theta <-> x ----

  // natural values for every row (Defined rows get NaN placeholders)
  Eigen::VectorXd pars_to_x(const Eigen::VectorXd& theta) const {
    check_dim(theta);
    Eigen::VectorXd x(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const ParamRow& row = rows[r];
      if (row.mat == Mat::Defined) {
        x[r] = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      if (row.free_index == 0) {
        x[r] = row.fixed_value.value_or(row.start_natural);
        continue;
      }
      const double t = theta[row.free_index - 1];
      switch (row.mat) {
        case Mat::ThetaVar:
        case Mat::PsiVar:
          x[r] = std::exp(t);
          break;
        case Mat::ThetaCor:
        case Mat::PsiCor:
          x[r] = std::tanh(t);  // placeholder; scaled below once sigmas known
          break;
        default:
          x[r] = t;
      }
    }
    // second pass: covariance rows x = sigma_a * sigma_b * rho
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const ParamRow& row = rows[r];
      if ((row.mat == Mat::ThetaCor || row.mat == Mat::PsiCor) && row.free_index != 0) {
        const double sa = std::sqrt(x[row.var_row_a]);
        const double sb = std::sqrt(x[row.var_row_b]);
        x[r] = sa * sb * x[r];
      }
    }
    return x;
  }

  Eigen::VectorXd x_to_pars(const Eigen::VectorXd& x) const {
    if (x.size() != static_cast<Eigen::Index>(rows.size()))
      throw std::invalid_argument("x_to_pars: dimension mismatch");
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(m);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const ParamRow& row = rows[r];
      if (row.free_index == 0 || row.mat == Mat::Defined) continue;
      double t;
      switch (row.mat) {
        case Mat::ThetaVar:
        case Mat::PsiVar:
          if (!(x[r] > 0.0)) throw ModelError("Inadmissible", "non-positive variance for row " + std::to_string(row.id));
          t = std::log(x[r]);
          break;
        case Mat::ThetaCor:
        case Mat::PsiCor: {
          const double va = x[row.var_row_a], vb = x[row.var_row_b];
          if (!(va > 0.0 && vb > 0.0))
            throw ModelError("Inadmissible", "non-positive variance under covariance row " + std::to_string(row.id));
          const double rho = x[r] / std::sqrt(va * vb);
          if (!(std::fabs(rho) < 1.0))
            throw ModelError("Inadmissible", "|implied correlation| >= 1 for row " + std::to_string(row.id));
          t = std::atanh(rho);
          break;
        }
        default:
          t = x[r];
      }
      theta[row.free_index - 1] = t;
    }
    return theta;
  }

  // m_full x m Jacobian of pars_to_x (dense; m is small)
  Eigen::MatrixXd jacobian_x_wrt_theta(const Eigen::VectorXd& theta) const {
    check_dim(theta);
    const Eigen::VectorXd x = pars_to_x(theta);
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(rows.size(), m);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const ParamRow& row = rows[r];
      if (row.free_index == 0 || row.mat == Mat::Defined) continue;
      const int j = row.free_index - 1;
      switch (row.mat) {
        case Mat::ThetaVar:
        case Mat::PsiVar:
          J(r, j) += x[r];  // d exp(t) / dt
          break;
        case Mat::ThetaCor:
        case Mat::PsiCor: {
          const double sa = std::sqrt(x[row.var_row_a]);
          const double sb = std::sqrt(x[row.var_row_b]);
          const double rho = std::tanh(theta[j]);
          J(r, j) += sa * sb * (1.0 - rho * rho);
          // product-rule terms through the two standard deviations
          const ParamRow& ra = rows[row.var_row_a];
          const ParamRow& rb = rows[row.var_row_b];
          if (ra.free_index != 0) J(r, ra.free_index - 1) += 0.5 * sa * sb * rho;
          if (rb.free_index != 0) J(r, rb.free_index - 1) += 0.5 * sa * sb * rho;
          break;
        }
        default:
          J(r, j) += 1.0;
      }
    }
    return J;
  }

  // start vector on the unconstrained reduced scale
  Eigen::VectorXd start_theta() const {
    Eigen::VectorXd x(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) x[r] = rows[r].start_natural;
    return x_to_pars(x);
  }

  // ---- priors ----

  double log_prior(const Eigen::VectorXd& theta) const {
    double lp = 0.0;
    for (int j = 0; j < m; ++j) lp += prior_component(j, theta[j]).first;
    return lp;
  }

  Eigen::VectorXd grad_log_prior(const Eigen::VectorXd& theta) const {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(m);
    for (int j = 0; j < m; ++j) g[j] = prior_component(j, theta[j]).second;
    return g;
  }

  // (log density, d/dtheta) of the prior attached to reduced coordinate j
  std::pair<double, double> prior_component(int j, double t) const {
    const ParamRow& row = rows[prior_rep_[j]];
    const PriorSpec& pr = row.prior;
    const bool is_var = (row.mat == Mat::ThetaVar || row.mat == Mat::PsiVar);
    const bool is_cor = (row.mat == Mat::ThetaCor || row.mat == Mat::PsiCor);
    double lp = 0.0, dlp = 0.0;

    auto add_normal = [&](double v, double dv_dt) {
      const double z = (v - pr.p1) / pr.p2;
      lp += -0.5 * (z * z + kLog2Pi) - std::log(pr.p2);
      dlp += -z / pr.p2 * dv_dt;
    };
    auto add_gamma = [&](double v, double dv_dt) {  // shape p1, rate p2
      lp += pr.p1 * std::log(pr.p2) - std::lgamma(pr.p1) + (pr.p1 - 1.0) * std::log(v) - pr.p2 * v;
      dlp += ((pr.p1 - 1.0) / v - pr.p2) * dv_dt;
    };

    if (is_cor) {
      // theta = atanh(rho); priors act on rho
      const double rho = std::tanh(t);
      const double drho = 1.0 - rho * rho;  // also the log-Jacobian argument
      if (pr.family == PriorSpec::Family::Beta) {
        // shifted beta on (-1,1): f(rho) = Beta((rho+1)/2; a,b) / 2
        const double u = 0.5 * (rho + 1.0);
        lp += std::lgamma(pr.p1 + pr.p2) - std::lgamma(pr.p1) - std::lgamma(pr.p2) - std::log(2.0);
        if (pr.p1 != 1.0) {
          lp += (pr.p1 - 1.0) * std::log(u);
          dlp += (pr.p1 - 1.0) / u * 0.5 * drho;
        }
        if (pr.p2 != 1.0) {
          lp += (pr.p2 - 1.0) * std::log1p(-u);
          dlp -= (pr.p2 - 1.0) / (1.0 - u) * 0.5 * drho;
        }
      } else if (pr.family == PriorSpec::Family::Normal) {
        add_normal(rho, drho);
      } else {
        throw ModelError("BadPrior", "gamma prior is not defined on a correlation row");
      }
      lp += std::log(drho);  // |d rho / d theta|
      dlp += -2.0 * rho;     // d/dt log(1 - tanh^2 t) = -2 tanh t
      return {lp, dlp};
    }

    if (is_var) {
      const double v = std::exp(t);  // variance
      switch (pr.target_scale) {
        case PriorSpec::Scale::Sd: {
          const double s = std::exp(0.5 * t);
          const double ds = 0.5 * s;  // d sigma / d theta
          if (pr.family == PriorSpec::Family::Gamma)
            add_gamma(s, ds);
          else if (pr.family == PriorSpec::Family::Normal)
            add_normal(s, ds);
          else
            throw ModelError("BadPrior", "beta prior is not defined on a variance row");
          lp += std::log(ds);  // |d sigma / d theta|
          dlp += 0.5;
          return {lp, dlp};
        }
        case PriorSpec::Scale::Var:
        case PriorSpec::Scale::Coefficient: {
          if (pr.family == PriorSpec::Family::Gamma)
            add_gamma(v, v);
          else if (pr.family == PriorSpec::Family::Normal)
            add_normal(v, v);
          else
            throw ModelError("BadPrior", "beta prior is not defined on a variance row");
          lp += t;  // log |d var / d theta| = log(exp(t))
          dlp += 1.0;
          return {lp, dlp};
        }
        default:
          throw ModelError("BadPrior", "correlation-scale prior on a variance row");
      }
    }

    // identity-transform coefficient rows
    if (pr.family == PriorSpec::Family::Normal)
      add_normal(t, 1.0);
    else if (pr.family == PriorSpec::Family::Gamma)
      add_gamma(t, 1.0);
    else
      throw ModelError("BadPrior", "beta prior is not defined on a coefficient row");
    return {lp, dlp};
  }

  // representative row (table index) for each reduced coordinate
  const std::vector<int>& prior_representatives() const { return prior_rep_; }

  nlohmann::json to_json() const {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::json j;
      j["id"] = r.id;
      j["lhs"] = r.lhs;
      j["op"] = r.op;
      j["rhs"] = r.rhs;
      j["group"] = r.group;
      j["level"] = r.level;
      j["free"] = r.free_index;
      j["mat"] = mat_name(r.mat);
      if (r.fixed_value) j["fixed"] = *r.fixed_value;
      if (!r.label.empty()) j["label"] = r.label;
      if (r.mat != Mat::Defined && r.free_index != 0) j["prior"] = r.prior.to_string();
      j["start"] = r.start_natural;
      if (!r.expression.empty()) j["expression"] = r.expression;
      out.push_back(j);
    }
    return out;
  }

  std::string param_name(const ParamRow& r) const {
    std::string s = r.lhs + r.op + r.rhs;
    if (ngroups > 1) s += ".g" + std::to_string(r.group);
    if (nlevels > 1) s += ".l" + std::to_string(r.level);
    return s;
  }

  // names of reduced coordinates (first row carrying each free index)
  std::vector<std::string> theta_names() const {
    std::vector<std::string> names(m);
    for (int j = 0; j < m; ++j) names[j] = param_name(rows[prior_rep_[j]]);
    return names;
  }

  void finalize() {
    prior_rep_.assign(m, -1);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const int f = rows[r].free_index;
      if (f > 0 && prior_rep_[f - 1] < 0) prior_rep_[f - 1] = static_cast<int>(r);
    }
    for (int j = 0; j < m; ++j)
      if (prior_rep_[j] < 0) throw ModelError("Internal", "free index without a row");
  }

 private:
  void check_dim(const Eigen::VectorXd& theta) const {
    if (theta.size() != m) throw std::invalid_argument("theta dimension mismatch");
  }
  std::vector<int> prior_rep_;
};

// ---------------- table construction ----------------

namespace detail {

struct LevelModel {
  std::vector<std::string> ov, lv;
  std::vector<bool> phantom;
  std::vector<const ModelStatement*> stmts;
};

inline bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace detail

inline ParameterTable build_parameter_table(const ModelAst& ast, const std::vector<std::string>& columns,
                                            const BuildOptions& opt = {}) {
  using detail::contains;
  ParameterTable pt;
  pt.columns = columns;
  pt.ngroups = opt.ngroups;
  pt.meanstructure = opt.meanstructure;

  int nlevels = 1;
  for (const auto& s : ast) nlevels = std::max(nlevels, s.level);
  pt.nlevels = nlevels;

  std::vector<detail::LevelModel> lm(nlevels);
  for (const auto& s : ast) {
    if (s.op == ":=") continue;
    lm[s.level - 1].stmts.push_back(&s);
  }

  // variable classification per level
  for (int L = 0; L < nlevels; ++L) {
    auto& M = lm[L];
    std::set<std::string> latents, regressed;
    for (const auto* s : M.stmts)
      if (s->op == "=~")
        for (const auto& l : s->lhs) latents.insert(l);
    for (const auto* s : M.stmts) {
      if (s->op == "~") {
        for (const auto& l : s->lhs)
          if (!latents.count(l)) regressed.insert(l);
        for (const auto& t : s->rhs)
          if (!latents.count(t.variable)) regressed.insert(t.variable);
      }
    }
    auto note_ov = [&](const std::string& v) {
      if (latents.count(v)) return;
      if (!contains(columns, v)) throw ModelError("UnknownVariable", v + " is neither a data column nor a latent");
      if (!contains(M.ov, v)) M.ov.push_back(v);
    };
    for (const auto* s : M.stmts) {
      if (s->op == "=~") {
        for (const auto& t : s->rhs) {
          if (latents.count(t.variable) && regressed.count(t.variable))
            throw ModelError("NotSupported", "variable " + t.variable + " is both indicator and regression operand");
          note_ov(t.variable);
        }
      } else if (s->op == "~") {
        for (const auto& l : s->lhs) note_ov(l);
        for (const auto& t : s->rhs) note_ov(t.variable);
      } else if (s->op == "~~" || s->op == "~1") {
        for (const auto& l : s->lhs) note_ov(l);
        if (s->op == "~~")
          for (const auto& t : s->rhs) note_ov(t.variable);
      }
    }
    for (const auto& v : M.ov) {
      if (latents.count(v)) throw ModelError("NotSupported", "latent " + v + " shadows a data column");
      if (regressed.count(v)) {
        // indicator + regression operand conflict
        for (const auto* s : M.stmts)
          if (s->op == "=~")
            for (const auto& t : s->rhs)
              if (t.variable == v)
                throw ModelError("NotSupported", "variable " + v + " is both indicator and regression operand");
      }
    }
    // latent list: declared factors in order, then phantoms for promoted ov
    for (const auto* s : M.stmts)
      if (s->op == "=~")
        for (const auto& l : s->lhs)
          if (!contains(M.lv, l)) {
            M.lv.push_back(l);
            M.phantom.push_back(false);
          }
    for (const auto& v : M.ov)
      if (regressed.count(v)) {
        M.lv.push_back(v);  // phantom latent carries the observed name
        M.phantom.push_back(true);
      }
    pt.ov.push_back(M.ov);
    pt.lv.push_back(M.lv);
    pt.lv_phantom.push_back(M.phantom);
  }

  auto col_moment = [&](const std::string& name, bool mean) -> double {
    const auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) return mean ? 0.0 : 1.0;
    const std::size_t k = static_cast<std::size_t>(it - columns.begin());
    if (mean) return k < opt.col_means.size() ? opt.col_means[k] : 0.0;
    return k < opt.col_vars.size() ? opt.col_vars[k] : 1.0;
  };

  // ---- assemble rows for group 1, then replicate ----
  struct ProtoRow {
    ParamRow row;
  };
  std::vector<ParamRow> proto;

  auto is_phantom = [&](int L, const std::string& name) {
    const auto& M = lm[L];
    const auto it = std::find(M.lv.begin(), M.lv.end(), name);
    return it != M.lv.end() && M.phantom[it - M.lv.begin()];
  };

  auto add_row = [&](ParamRow r) {
    proto.push_back(std::move(r));
  };

  for (int L = 0; L < nlevels; ++L) {
    const auto& M = lm[L];
    std::set<std::pair<std::string, std::string>> user_cov, user_var;
    std::set<std::string> user_intercept;
    std::set<std::string> marker_done;

    // user statements in source order
    for (const auto* s : M.stmts) {
      if (s->op == "=~") {
        for (const auto& lhsv : s->lhs) {
          bool first = true;
          for (const auto& t : s->rhs) {
            ParamRow r;
            r.lhs = lhsv;
            r.op = "=~";
            r.rhs = t.variable;
            r.level = L + 1;
            r.mat = Mat::Lambda;
            r.row_i = static_cast<int>(std::find(M.ov.begin(), M.ov.end(), t.variable) - M.ov.begin());
            r.col_j = static_cast<int>(std::find(M.lv.begin(), M.lv.end(), lhsv) - M.lv.begin());
            if (t.label) r.label = *t.label;
            if (t.prior) { r.prior = *t.prior; r.user_prior = true; }
            if (t.fixed_value) {
              r.fixed_value = *t.fixed_value;
              r.start_natural = *t.fixed_value;
            } else if (first && !opt.std_lv && !marker_done.count(lhsv) && !t.prior && !t.label) {
              // marker indicator fixed to 1 for scale identification
              r.fixed_value = 1.0;
              r.start_natural = 1.0;
              marker_done.insert(lhsv);
            } else {
              r.start_natural = t.start.value_or(1.0);
            }
            first = false;
            add_row(std::move(r));
          }
        }
      } else if (s->op == "~") {
        for (const auto& lhsv : s->lhs) {
          for (const auto& t : s->rhs) {
            ParamRow r;
            r.lhs = lhsv;
            r.op = "~";
            r.rhs = t.variable;
            r.level = L + 1;
            r.mat = Mat::Beta;
            r.row_i = static_cast<int>(std::find(M.lv.begin(), M.lv.end(), lhsv) - M.lv.begin());
            r.col_j = static_cast<int>(std::find(M.lv.begin(), M.lv.end(), t.variable) - M.lv.begin());
            if (r.row_i >= static_cast<int>(M.lv.size()) || r.col_j >= static_cast<int>(M.lv.size()))
              throw ModelError("Internal", "regression operand not promoted");
            if (t.label) r.label = *t.label;
            if (t.prior) { r.prior = *t.prior; r.user_prior = true; }
            if (t.fixed_value) {
              r.fixed_value = *t.fixed_value;
              r.start_natural = *t.fixed_value;
            } else {
              r.start_natural = t.start.value_or(0.0);
            }
            add_row(std::move(r));
          }
        }
      } else if (s->op == "~~") {
        for (const auto& lhsv : s->lhs) {
          for (const auto& t : s->rhs) {
            const std::string& rhsv = t.variable;
            const bool lhs_lat = contains(M.lv, lhsv) && !is_phantom(L, lhsv);
            const bool rhs_lat = contains(M.lv, rhsv) && !is_phantom(L, rhsv);
            const bool lhs_pha = is_phantom(L, lhsv);
            const bool rhs_pha = is_phantom(L, rhsv);
            ParamRow r;
            r.lhs = lhsv;
            r.op = "~~";
            r.rhs = rhsv;
            r.level = L + 1;
            const bool variance = (lhsv == rhsv);
            const bool in_psi = lhs_lat || rhs_lat || lhs_pha || rhs_pha;
            if (in_psi && !variance && ((lhs_lat || lhs_pha) != (rhs_lat || rhs_pha)))
              throw ModelError("NotSupported", "covariance between " + lhsv + " and " + rhsv +
                                                   " mixes residual and latent blocks");
            if (in_psi) {
              r.mat = variance ? Mat::PsiVar : Mat::PsiCor;
              r.row_i = static_cast<int>(std::find(M.lv.begin(), M.lv.end(), lhsv) - M.lv.begin());
              r.col_j = static_cast<int>(std::find(M.lv.begin(), M.lv.end(), rhsv) - M.lv.begin());
            } else {
              r.mat = variance ? Mat::ThetaVar : Mat::ThetaCor;
              r.row_i = static_cast<int>(std::find(M.ov.begin(), M.ov.end(), lhsv) - M.ov.begin());
              r.col_j = static_cast<int>(std::find(M.ov.begin(), M.ov.end(), rhsv) - M.ov.begin());
            }
            if (t.label) r.label = *t.label;
            if (t.prior) { r.prior = *t.prior; r.user_prior = true; }
            if (t.fixed_value) {
              r.fixed_value = *t.fixed_value;
              r.start_natural = *t.fixed_value;
              if (variance && *t.fixed_value < 0.0)
                throw ModelError("BadFixedValue", "variance fixed to a negative value: " + lhsv);
            } else if (variance) {
              double def = contains(M.ov, lhsv) ? 0.5 * col_moment(lhsv, false) : 0.05;
              if (is_phantom(L, lhsv)) def = 0.5 * col_moment(lhsv, false);
              r.start_natural = t.start.value_or(def);
            } else {
              r.start_natural = t.start.value_or(0.0);
            }
            if (variance)
              user_var.insert({lhsv, lhsv});
            else {
              user_cov.insert({lhsv, rhsv});
              user_cov.insert({rhsv, lhsv});
            }
            add_row(std::move(r));
          }
        }
      } else if (s->op == "~1") {
        for (const auto& lhsv : s->lhs) {
          const Term& t = s->rhs[0];
          ParamRow r;
          r.lhs = lhsv;
          r.op = "~1";
          r.rhs = "";
          r.level = L + 1;
          if (contains(M.lv, lhsv)) {
            r.mat = Mat::Alpha;
            r.row_i = static_cast<int>(std::find(M.lv.begin(), M.lv.end(), lhsv) - M.lv.begin());
          } else {
            r.mat = Mat::Nu;
            r.row_i = static_cast<int>(std::find(M.ov.begin(), M.ov.end(), lhsv) - M.ov.begin());
          }
          if (t.label) r.label = *t.label;
          if (t.prior) { r.prior = *t.prior; r.user_prior = true; }
          if (t.fixed_value) {
            r.fixed_value = *t.fixed_value;
            r.start_natural = *t.fixed_value;
          } else {
            r.start_natural = t.start.value_or(col_moment(lhsv, true));
          }
          user_intercept.insert(lhsv);
          add_row(std::move(r));
        }
      }
    }

    // auto rows: residual variances for observed (non-promoted) variables
    for (const auto& v : M.ov) {
      if (user_var.count({v, v})) continue;
      ParamRow r;
      r.lhs = v;
      r.op = "~~";
      r.rhs = v;
      r.level = L + 1;
      if (is_phantom(L, v)) {
        r.mat = Mat::PsiVar;
        r.row_i = r.col_j = static_cast<int>(std::find(M.lv.begin(), M.lv.end(), v) - M.lv.begin());
      } else {
        r.mat = Mat::ThetaVar;
        r.row_i = r.col_j = static_cast<int>(std::find(M.ov.begin(), M.ov.end(), v) - M.ov.begin());
      }
      r.start_natural = 0.5 * col_moment(v, false);
      add_row(std::move(r));
    }
    // latent variances for declared factors
    for (std::size_t k = 0; k < M.lv.size(); ++k) {
      if (M.phantom[k]) continue;
      const std::string& f = M.lv[k];
      if (user_var.count({f, f})) continue;
      ParamRow r;
      r.lhs = f;
      r.op = "~~";
      r.rhs = f;
      r.level = L + 1;
      r.mat = Mat::PsiVar;
      r.row_i = r.col_j = static_cast<int>(k);
      if (opt.std_lv) {
        r.fixed_value = 1.0;
        r.start_natural = 1.0;
      } else {
        r.start_natural = 0.05;
      }
      add_row(std::move(r));
    }
    // auto covariances among exogenous latents (declared factors that never
    // appear as a regression lhs)
    {
      std::set<std::string> endo;
      for (const auto* s : M.stmts)
        if (s->op == "~")
          for (const auto& l : s->lhs) endo.insert(l);
      std::vector<int> exo;
      for (std::size_t k = 0; k < M.lv.size(); ++k)
        if (!M.phantom[k] && !endo.count(M.lv[k])) exo.push_back(static_cast<int>(k));
      for (std::size_t a = 0; a < exo.size(); ++a)
        for (std::size_t b = a + 1; b < exo.size(); ++b) {
          const std::string& fa = M.lv[exo[a]];
          const std::string& fb = M.lv[exo[b]];
          if (user_cov.count({fa, fb})) continue;
          ParamRow r;
          r.lhs = fa;
          r.op = "~~";
          r.rhs = fb;
          r.level = L + 1;
          r.mat = Mat::PsiCor;
          r.row_i = exo[a];
          r.col_j = exo[b];
          r.start_natural = 0.0;
          add_row(std::move(r));
        }
    }
    // intercepts under meanstructure (two-level: between level only)
    const bool level_has_means = opt.meanstructure && (nlevels == 1 || L + 1 == 2);
    if (level_has_means) {
      for (const auto& v : M.ov) {
        if (user_intercept.count(v)) continue;
        ParamRow r;
        r.lhs = v;
        r.op = "~1";
        r.rhs = "";
        r.level = L + 1;
        if (is_phantom(L, v)) {
          r.mat = Mat::Alpha;
          r.row_i = static_cast<int>(std::find(M.lv.begin(), M.lv.end(), v) - M.lv.begin());
        } else {
          r.mat = Mat::Nu;
          r.row_i = static_cast<int>(std::find(M.ov.begin(), M.ov.end(), v) - M.ov.begin());
        }
        r.start_natural = col_moment(v, true);
        add_row(std::move(r));
      }
      // in a two-level model, within-varying observed variables get their
      // between-level intercepts from the level-2 block; level-1 means are 0
      for (std::size_t k = 0; k < M.lv.size(); ++k) {
        if (M.phantom[k]) continue;
        if (user_intercept.count(M.lv[k])) continue;
        ParamRow r;
        r.lhs = M.lv[k];
        r.op = "~1";
        r.rhs = "";
        r.level = L + 1;
        r.mat = Mat::Alpha;
        r.row_i = static_cast<int>(k);
        r.fixed_value = 0.0;
        r.start_natural = 0.0;
        add_row(std::move(r));
      }
    }
  }

  // replicate across groups, resolve variance-row references, assign ids
  std::map<std::string, int> label_index;  // labels shared across groups/levels
  int next_free = 0;
  std::map<std::string, std::optional<double>> label_fixed;

  for (int g = 1; g <= opt.ngroups; ++g) {
    const std::size_t base = pt.rows.size();
    for (const auto& pr : proto) {
      ParamRow r = pr;
      r.group = g;
      pt.rows.push_back(std::move(r));
    }
    // variance-row references within this group
    for (std::size_t r = base; r < pt.rows.size(); ++r) {
      ParamRow& row = pt.rows[r];
      if (row.mat != Mat::ThetaCor && row.mat != Mat::PsiCor) continue;
      auto find_var = [&](int coord) -> int {
        const Mat want = (row.mat == Mat::ThetaCor) ? Mat::ThetaVar : Mat::PsiVar;
        for (std::size_t k = base; k < pt.rows.size(); ++k)
          if (pt.rows[k].mat == want && pt.rows[k].row_i == coord && pt.rows[k].level == row.level)
            return static_cast<int>(k);
        return -1;
      };
      row.var_row_a = find_var(row.row_i);
      row.var_row_b = find_var(row.col_j);
      if (row.var_row_a < 0 || row.var_row_b < 0)
        throw ModelError("Internal", "missing variance row under covariance " + row.lhs + "~~" + row.rhs);
    }
  }

  // free indices (labels shared), default priors
  for (auto& row : pt.rows) {
    if (row.mat == Mat::Defined) continue;
    if (row.fixed_value) {
      if (!row.label.empty()) {
        auto it = label_fixed.find(row.label);
        if (it != label_fixed.end() && it->second && *it->second != *row.fixed_value)
          throw ModelError("ContradictoryFixedValues", "label " + row.label);
        label_fixed[row.label] = row.fixed_value;
      }
      row.free_index = 0;
      continue;
    }
    if (!row.label.empty()) {
      auto it = label_index.find(row.label);
      if (it != label_index.end()) {
        row.free_index = it->second;
        continue;
      }
      label_index[row.label] = ++next_free;
      row.free_index = next_free;
    } else {
      row.free_index = ++next_free;
    }
    // default prior when none supplied
    if (!row.user_prior) {
      switch (row.mat) {
        case Mat::ThetaVar:
        case Mat::PsiVar:
          row.prior = PriorSpec{PriorSpec::Family::Gamma, 1.0, 0.5, PriorSpec::Scale::Sd};
          break;
        case Mat::ThetaCor:
        case Mat::PsiCor:
          row.prior = PriorSpec{PriorSpec::Family::Beta, 1.0, 1.0, PriorSpec::Scale::Cor};
          break;
        default:
          row.prior = PriorSpec{PriorSpec::Family::Normal, 0.0, 10.0, PriorSpec::Scale::Coefficient};
      }
    }
  }
  pt.m = next_free;

  // defined rows last
  for (const auto& s : ast) {
    if (s.op != ":=") continue;
    ParamRow r;
    r.lhs = s.lhs[0];
    r.op = ":=";
    r.rhs = s.expression;
    r.expression = s.expression;
    r.mat = Mat::Defined;
    pt.rows.push_back(std::move(r));
  }

  for (std::size_t i = 0; i < pt.rows.size(); ++i) pt.rows[i].id = static_cast<int>(i) + 1;

  // coarse identification check: free parameters vs available sample moments
  {
    long moments = 0;
    for (int L = 0; L < nlevels; ++L) {
      const long p = static_cast<long>(pt.ov[L].size());
      moments += p * (p + 1) / 2;
      if (opt.meanstructure && (nlevels == 1 || L + 1 == 2)) moments += p;
    }
    moments *= opt.ngroups;
    if (pt.m > moments)
      throw ModelError("Unidentified", "more free parameters (" + std::to_string(pt.m) + ") than sample moments (" +
                                           std::to_string(moments) + ")");
  }

  pt.finalize();
  return pt;
}

// Model matrices for one (group, level), assembled from natural row values.
struct ModelMatrices {
  Eigen::VectorXd nu, alpha;
  Eigen::MatrixXd lambda, beta, theta, psi;
};

inline ModelMatrices model_matrices(const ParameterTable& pt, const Eigen::VectorXd& x, int group, int level) {
  const int p = static_cast<int>(pt.ov[level - 1].size());
  const int q = static_cast<int>(pt.lv[level - 1].size());
  ModelMatrices mm;
  mm.nu = Eigen::VectorXd::Zero(p);
  mm.alpha = Eigen::VectorXd::Zero(q);
  mm.lambda = Eigen::MatrixXd::Zero(p, q);
  mm.beta = Eigen::MatrixXd::Zero(q, q);
  mm.theta = Eigen::MatrixXd::Zero(p, p);
  mm.psi = Eigen::MatrixXd::Zero(q, q);
  // phantom latents load on their observed variable with a fixed unit loading
  for (int k = 0; k < q; ++k)
    if (pt.lv_phantom[level - 1][k]) {
      const int i = pt.ov_index(level, pt.lv[level - 1][k]);
      if (i >= 0) mm.lambda(i, k) = 1.0;
    }
  for (std::size_t r = 0; r < pt.rows.size(); ++r) {
    const ParamRow& row = pt.rows[r];
    if (row.group != group || row.level != level || row.mat == Mat::Defined) continue;
    const double v = x[r];
    switch (row.mat) {
      case Mat::Lambda: mm.lambda(row.row_i, row.col_j) = v; break;
      case Mat::Beta: mm.beta(row.row_i, row.col_j) = v; break;
      case Mat::Nu: mm.nu[row.row_i] = v; break;
      case Mat::Alpha: mm.alpha[row.row_i] = v; break;
      case Mat::ThetaVar: mm.theta(row.row_i, row.row_i) = v; break;
      case Mat::ThetaCor:
        mm.theta(row.row_i, row.col_j) = v;
        mm.theta(row.col_j, row.row_i) = v;
        break;
      case Mat::PsiVar: mm.psi(row.row_i, row.row_i) = v; break;
      case Mat::PsiCor:
        mm.psi(row.row_i, row.col_j) = v;
        mm.psi(row.col_j, row.row_i) = v;
        break;
      case Mat::Defined: break;
    }
  }
  return mm;
}

}  // namespace bsem
