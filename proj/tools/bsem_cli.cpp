// bsem: command-line driver for the approximate-Bayesian SEM engine.
// Subcommands: fit, summary, diagnostics, compare, sample, predict.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bsem/fit.hpp"
#include "bsem/math/skewnormal.hpp"
#include "bsem/posthoc.hpp"

using namespace bsem;

namespace {

std::string fmt(double v, int w = 9, int prec = 3) {
  if (!std::isfinite(v)) return std::string(w - 2, ' ') + "NA";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%*.*f", w, prec, v);
  return buf;
}

std::string basename_noext(const std::string& path) {
  std::string s = path;
  const auto slash = s.find_last_of("/\\");
  if (slash != std::string::npos) s = s.substr(slash + 1);
  const auto dot = s.find_last_of('.');
  if (dot != std::string::npos) s = s.substr(0, dot);
  return s;
}

// variables with a residual term get the lavaan-style "." prefix
std::set<std::string> endogenous_vars(const std::vector<SummaryRow>& rows) {
  std::set<std::string> endo;
  for (const auto& r : rows) {
    if (r.op == "=~") endo.insert(r.rhs);  // indicators
    if (r.op == "~") endo.insert(r.lhs);   // regression outcomes
  }
  return endo;
}

void print_block_header(std::ostream& os) {
  os << "                   Estimate       SD     2.5%    97.5%      KLD           Prior\n";
}

void print_param_line(std::ostream& os, const std::string& name, const SummaryRow& r, int indent) {
  os << std::string(indent, ' ') << name;
  const int pad = 18 - indent - static_cast<int>(name.size());
  os << std::string(std::max(pad, 1), ' ');
  os << fmt(r.est, 9, 3);
  if (r.free) {
    os << fmt(r.sd, 9, 3) << fmt(r.q025, 9, 3) << fmt(r.q975, 9, 3) << fmt(r.kld, 9, 3) << "  "
       << (r.prior.empty() ? std::string() : r.prior);
  }
  os << "\n";
}

void print_summary_text(std::ostream& os, const FitResult& R) {
  os << "bsem " << kBsemVersion << " ended normally after " << R.fit.iterations << " iterations\n\n";
  os << "  Estimator                                      BAYES\n";
  os << "  Optimization method                             BFGS\n";
  os << "  Number of model parameters              " << fmt(R.pt.m, 12, 0) << "\n\n";
  os << "  Number of observations                  " << fmt(R.n_obs, 12, 0) << "\n\n";
  os << "Model Test (User Model):\n\n";
  os << "   Marginal log-likelihood               " << fmt(R.measures.marg_loglik, 12, 3) << "\n";
  os << "   PPP (Chi-square)                      " << fmt(R.measures.ppp, 12, 3) << "\n\n";
  os << "Information Criteria:\n\n";
  os << "   Deviance (DIC)                        " << fmt(R.measures.dic, 12, 3) << "\n";
  os << "   Effective parameters (pD)             " << fmt(R.measures.p_d, 12, 3) << "\n\n";
  os << "Parameter Estimates:\n\n";
  os << "   Marginalisation method                     SKEWNORM\n";
  os << "   VB correction                          "
     << (R.cfg.vb ? "        TRUE" : "       FALSE") << "\n";

  const auto endo = endogenous_vars(R.summary);
  auto dotted = [&](const std::string& v) {
    return endo.count(v) ? "." + v : v;
  };

  for (int g = 1; g <= R.pt.ngroups; ++g) {
    if (R.pt.ngroups > 1) {
      std::string label = (g - 1 < static_cast<int>(R.data.group_labels.size()))
                              ? R.data.group_labels[g - 1]
                              : std::to_string(g);
      os << "\nGroup " << g << " [" << label << "]:\n";
    }
    for (int level = 1; level <= R.pt.nlevels; ++level) {
      if (R.pt.nlevels > 1) os << "\nLevel " << level << (level == 1 ? " [within]" : " [between]") << ":\n";

      // Latent Variables
      std::string current;
      bool started = false;
      for (const auto& r : R.summary) {
        if (r.op != "=~" || r.group != g || r.level != level) continue;
        if (!started) {
          os << "\nLatent Variables:\n";
          print_block_header(os);
          started = true;
        }
        if (r.lhs != current) {
          os << "  " << r.lhs << " =~\n";
          current = r.lhs;
        }
        print_param_line(os, r.rhs, r, 4);
      }
      // Regressions
      current.clear();
      started = false;
      for (const auto& r : R.summary) {
        if (r.op != "~" || r.group != g || r.level != level) continue;
        if (!started) {
          os << "\nRegressions:\n";
          print_block_header(os);
          started = true;
        }
        if (r.lhs != current) {
          os << "  " << r.lhs << " ~\n";
          current = r.lhs;
        }
        print_param_line(os, r.rhs, r, 4);
      }
      // Covariances
      current.clear();
      started = false;
      for (const auto& r : R.summary) {
        if (r.op != "~~" || r.lhs == r.rhs || r.group != g || r.level != level) continue;
        if (!started) {
          os << "\nCovariances:\n";
          print_block_header(os);
          started = true;
        }
        if (r.lhs != current) {
          os << " " << dotted(r.lhs) << " ~~\n";
          current = r.lhs;
        }
        print_param_line(os, dotted(r.rhs), r, 3);
      }
      // Intercepts
      started = false;
      for (const auto& r : R.summary) {
        if (r.op != "~1" || r.group != g || r.level != level) continue;
        if (!started) {
          os << "\nIntercepts:\n";
          print_block_header(os);
          started = true;
        }
        print_param_line(os, dotted(r.lhs), r, 3);
      }
      // Variances
      started = false;
      for (const auto& r : R.summary) {
        if (r.op != "~~" || r.lhs != r.rhs || r.group != g || r.level != level) continue;
        if (!started) {
          os << "\nVariances:\n";
          print_block_header(os);
          started = true;
        }
        print_param_line(os, dotted(r.lhs), r, 3);
      }
    }
  }
  // Defined parameters
  bool started = false;
  for (const auto& r : R.summary) {
    if (r.op != ":=") continue;
    if (!started) {
      os << "\nDefined Parameters:\n";
      print_block_header(os);
      started = true;
    }
    print_param_line(os, r.lhs, r, 4);
  }
  os << "\n";
}

void print_diagnostics_text(std::ostream& os, const Diagnostics& d) {
  const std::vector<std::pair<std::string, double>> fields = {
      {"npar", static_cast<double>(d.npar)},
      {"nsamp", static_cast<double>(d.nsamp)},
      {"converged", static_cast<double>(d.converged)},
      {"iterations", static_cast<double>(d.iterations)},
      {"grad_inf", d.grad_inf},
      {"grad_inf_rel", d.grad_inf_rel},
      {"grad_l2", d.grad_l2},
      {"hess_cond", d.hess_cond},
      {"vb_applied", static_cast<double>(d.vb_applied)},
      {"vb_kld_global", d.vb_kld_global},
      {"kld_max", d.kld_max},
      {"kld_mean", d.kld_mean},
      {"nmad_max", d.nmad_max},
      {"nmad_mean", d.nmad_mean}};
  // R named-vector style, five entries per row
  for (std::size_t i = 0; i < fields.size(); i += 5) {
    std::string names, values;
    for (std::size_t k = i; k < std::min(i + 5, fields.size()); ++k) {
      char nbuf[32], vbuf[32];
      std::snprintf(nbuf, sizeof(nbuf), "%14s", fields[k].first.c_str());
      const double v = fields[k].second;
      if (v == std::floor(v) && std::fabs(v) < 1e9)
        std::snprintf(vbuf, sizeof(vbuf), "%14.0f", v);
      else if (std::fabs(v) < 1e-2 && v != 0.0)
        std::snprintf(vbuf, sizeof(vbuf), "%14.2e", v);
      else
        std::snprintf(vbuf, sizeof(vbuf), "%14.4f", v);
      names += nbuf;
      values += vbuf;
    }
    os << names << " \n" << values << " \n";
  }
}

int run_fit_cmd(const FitConfig& cfg, bool dump_ast, bool dump_partable,
                const std::string& dump_profiles, bool json_out) {
  auto progress = [&](const std::string& stage, double ms) {
    std::string line = stage;
    char buf[64];
    std::snprintf(buf, sizeof(buf), " [%.0fms]", ms);
    std::cerr << "✔ " << line << buf << "\n";
  };

  if (dump_ast || dump_partable) {
    std::ifstream in(cfg.model_path);
    if (!in) throw std::runtime_error("cannot open model file: " + cfg.model_path);
    std::stringstream ss;
    ss << in.rdbuf();
    const auto ast = parse_model(ss.str());
    if (dump_ast) {
      std::cout << ast_to_json(ast).dump(1) << "\n";
      if (cfg.data_path.empty()) return 0;
    }
    if (dump_partable) {
      Dataset ds = load_csv(cfg.data_path, cfg.group_col, cfg.cluster_col);
      auto pt = build_parameter_table(
          ast, ds.columns, detail::options_from_data(ds, cfg.meanstructure, cfg.std_lv, ds.ngroups));
      std::cout << pt.to_json().dump(1) << "\n";
      return 0;
    }
    if (dump_ast) return 0;
  }

  FitResult R = run_fit(cfg, progress);
  if (cfg.vb) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "mean |delta| = %.3f sigma", R.vb_mean_shift);
    std::cerr << "  VB " << (R.fit.diag.vb_applied ? "applied; " : "not applied; ") << buf << "\n";
  }
  for (const auto& w : R.warnings) std::cerr << "warning: " << w << "\n";

  if (!dump_profiles.empty()) {
    std::ofstream pf(dump_profiles);
    if (!pf) throw std::runtime_error("cannot write profiles file: " + dump_profiles);
    pf << "param,z,raw,adjusted,sn_fit\n";
    const auto names = R.pt.theta_names();
    for (const auto& pr : R.marg.profiles) {
      const auto& sn = R.marg.marginals[static_cast<std::size_t>(pr.j)];
      for (int k = 0; k < pr.z_grid.size(); ++k) {
        const double snv = sn.c + sn_logpdf(pr.z_grid[k], sn.xi, sn.omega, sn.alpha);
        pf << names[static_cast<std::size_t>(pr.j)] << "," << pr.z_grid[k] << "," << pr.raw[k] << ","
           << pr.adjusted[k] << "," << snv << "\n";
      }
    }
  }

  if (!cfg.out_path.empty()) save_fit(R, cfg.out_path);
  if (json_out)
    std::cout << fit_to_json(R, false).dump(1) << "\n";
  else
    print_summary_text(std::cout, R);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bsem: approximate Bayesian structural equation modeling"};
  app.require_subcommand(1);

  FitConfig cfg;
  bool no_vb = false, dump_ast = false, dump_partable = false, json_out = false;
  std::string dump_profiles;
  if (const char* env = std::getenv("BSEM_CORES")) cfg.cores = std::atoi(env);

  auto* fit = app.add_subcommand("fit", "fit a model and write the fit artifact");
  fit->add_option("--model", cfg.model_path, "model syntax file")->required();
  fit->add_option("--data", cfg.data_path, "CSV data file");
  fit->add_option("--out", cfg.out_path, "output fit file (JSON)");
  fit->add_option("--group", cfg.group_col, "grouping column");
  fit->add_option("--cluster", cfg.cluster_col, "cluster column (two-level models)");
  fit->add_option("--missing", cfg.missing, "listwise | ml")->check(CLI::IsMember({"listwise", "ml"}));
  fit->add_flag("--std_lv", cfg.std_lv, "fix latent variances to 1 instead of first loadings");
  fit->add_flag("--meanstructure", cfg.meanstructure, "include mean structure");
  fit->add_option("--seed", cfg.seed, "random seed");
  fit->add_option("--nsamp", cfg.nsamp, "posterior sample count");
  fit->add_option("--marginal-correction", cfg.marginal_correction,
                  "shortcut | shortcut_fd | hessian | none");
  fit->add_option("--ngrid", cfg.ngrid, "profile grid size");
  fit->add_flag("--no-vb", no_vb, "disable the VB mean shift");
  fit->add_option("--optimizer-iter-max", cfg.optimizer_iter_max, "BFGS iteration budget");
  fit->add_option("--qmc-points", cfg.qmc_points, "QMC points for the VB objective (0 = auto)");
  fit->add_option("--cores", cfg.cores, "worker threads");
  fit->add_flag("--dump-ast", dump_ast, "print the model AST as JSON and exit");
  fit->add_flag("--dump-partable", dump_partable, "print the parameter table as JSON and exit");
  fit->add_option("--dump-profiles", dump_profiles, "write profile scans (CSV: z, raw, adjusted, sn_fit)");
  fit->add_flag("--json", json_out, "print the fit artifact JSON instead of the text summary");

  std::string fit_file, out_file, format = "text";
  auto* summary = app.add_subcommand("summary", "posterior summaries from a fit file");
  summary->add_option("fit", fit_file, "fit file")->required();
  summary->add_option("--format", format, "text | json")->check(CLI::IsMember({"text", "json"}));

  auto* diagnostics = app.add_subcommand("diagnostics", "convergence and approximation diagnostics");
  diagnostics->add_option("fit", fit_file, "fit file")->required();
  diagnostics->add_option("--format", format, "text | json")->check(CLI::IsMember({"text", "json"}));

  std::vector<std::string> compare_files, fit_measures;
  auto* cmp = app.add_subcommand("compare", "compare fitted models");
  cmp->add_option("fits", compare_files, "fit files")->required()->expected(-2);
  cmp->add_option("--fit-measures", fit_measures, "extra columns: BRMSEA, BCFI, BTLI, BNFI")
      ->delimiter(',');
  cmp->add_option("--format", format, "text | json")->check(CLI::IsMember({"text", "json"}));

  int nsamp = 0;
  std::uint64_t seed_override = 0;
  bool prior_flag = false;
  auto* sample = app.add_subcommand("sample", "posterior (or prior predictive) samples");
  sample->add_option("fit", fit_file, "fit file")->required();
  sample->add_option("--nsamp", nsamp, "number of draws (default: fit setting)");
  sample->add_option("--seed", seed_override, "override the sampling seed");
  sample->add_flag("--prior", prior_flag, "prior predictive data draws instead of posterior samples");
  sample->add_option("--out", out_file, "output CSV (default stdout)");

  std::string ptype = "lv";
  int plevel = 1;
  auto* predict = app.add_subcommand("predict", "factor scores, predictions, imputations");
  predict->add_option("fit", fit_file, "fit file")->required();
  predict->add_option("--type", ptype, "lv | ov | ypred | ymis")
      ->check(CLI::IsMember({"lv", "ov", "ypred", "ymis"}));
  predict->add_option("--level", plevel, "1 (cases) or 2 (clusters)")->check(CLI::Range(1, 2));
  predict->add_option("--nsamp", nsamp, "number of posterior draws");
  predict->add_option("--seed", seed_override, "override the sampling seed");
  predict->add_option("--out", out_file, "output CSV (default stdout)");

  CLI11_PARSE(app, argc, argv);
  cfg.vb = !no_vb;

  try {
    if (fit->parsed()) return run_fit_cmd(cfg, dump_ast, dump_partable, dump_profiles, json_out);

    if (summary->parsed()) {
      FitResult R = load_fit(fit_file);
      if (format == "json") {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& r : R.summary) j.push_back(r.to_json());
        std::cout << j.dump(1) << "\n";
      } else {
        print_summary_text(std::cout, R);
      }
      return 0;
    }

    if (diagnostics->parsed()) {
      FitResult R = load_fit(fit_file);
      if (format == "json")
        std::cout << R.fit.diag.to_json().dump(1) << "\n";
      else
        print_diagnostics_text(std::cout, R.fit.diag);
      return 0;
    }

    if (cmp->parsed()) {
      std::vector<ModelSummary> models;
      std::vector<FitMeasureSet> sets;
      for (const auto& f : compare_files) {
        FitResult R = load_fit(f);
        ModelSummary ms;
        ms.name = basename_noext(f);
        ms.npar = R.pt.m;
        ms.marg_loglik = R.measures.marg_loglik;
        ms.dic = R.measures.dic;
        ms.p_d = R.measures.p_d;
        for (const auto& fmname : fit_measures) {
          double v = std::numeric_limits<double>::quiet_NaN();
          if (fmname == "BRMSEA") v = R.measures.brmsea;
          if (fmname == "BCFI") v = R.measures.bcfi;
          if (fmname == "BTLI") v = R.measures.btli;
          if (fmname == "BNFI") v = R.measures.bnfi;
          ms.fit_measures[fmname] = v;
        }
        models.push_back(std::move(ms));
      }
      const auto rows = compare(std::move(models));
      if (format == "json") {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& r : rows) {
          nlohmann::json rj{{"model", r.model.name},   {"npar", r.model.npar},
                            {"marg_loglik", r.model.marg_loglik}, {"logbf", r.logbf},
                            {"dic", r.model.dic},       {"p_d", r.model.p_d}};
          for (const auto& [k, v] : r.model.fit_measures) rj[k] = v;
          j.push_back(std::move(rj));
        }
        std::cout << j.dump(1) << "\n";
      } else {
        std::cout << "     Model npar Marg.Loglik      logBF        DIC       pD";
        for (const auto& fmname : fit_measures) std::cout << " " << fmname;
        std::cout << "\n";
        for (const auto& r : rows) {
          char buf[256];
          std::snprintf(buf, sizeof(buf), "%10s %4d %11.3f %10.3f %10.3f %8.3f",
                        r.model.name.c_str(), r.model.npar, r.model.marg_loglik, r.logbf,
                        r.model.dic, r.model.p_d);
          std::cout << buf;
          for (const auto& fmname : fit_measures)
            std::cout << " " << fmt(r.model.fit_measures.at(fmname), 6, 4);
          std::cout << "\n";
        }
      }
      return 0;
    }

    if (sample->parsed()) {
      FitResult R = load_fit(fit_file);
      const int B = nsamp > 0 ? nsamp : R.cfg.nsamp;
      const std::uint64_t sd = seed_override != 0 ? seed_override : R.cfg.seed;
      std::ofstream of;
      std::ostream* os = &std::cout;
      if (!out_file.empty()) {
        of.open(out_file);
        if (!of) throw std::runtime_error("cannot write: " + out_file);
        os = &of;
      }
      if (prior_flag) {
        const auto sims = sample_prior_predictive(R.pt, R.data.nrows(), B, sd);
        *os << "draw";
        for (const auto& c : R.pt.ov[0]) *os << "," << c;
        *os << "\n";
        for (std::size_t b = 0; b < sims.size(); ++b)
          for (int i = 0; i < sims[b].rows(); ++i) {
            *os << (b + 1);
            for (int k = 0; k < sims[b].cols(); ++k) *os << "," << sims[b](i, k);
            *os << "\n";
          }
      } else {
        const auto samp = sample_posterior(R.cm, R.pt, B, sd, 1);
        const auto names = R.pt.theta_names();
        for (std::size_t k = 0; k < names.size(); ++k) *os << (k ? "," : "") << names[k];
        *os << "\n";
        for (int b = 0; b < samp.x.rows(); ++b) {
          for (int k = 0; k < samp.x.cols(); ++k) *os << (k ? "," : "") << samp.x(b, k);
          *os << "\n";
        }
      }
      return 0;
    }

    if (predict->parsed()) {
      FitResult R = load_fit(fit_file);
      const int B = nsamp > 0 ? nsamp : R.cfg.nsamp;
      const std::uint64_t sd = seed_override != 0 ? seed_override : R.cfg.seed;
      const auto samp = sample_posterior(R.cm, R.pt, B, sd, 1);
      FactorScoreDraws fs;
      if (plevel == 2)
        fs = predict_scores_level2(R.pt, R.data, samp.x, sd + 1);
      else
        fs = predict_scores(R.pt, R.data, samp.x, predict_type_from_string(ptype), sd + 1);
      for (const auto& w : fs.warnings) std::cerr << "warning: " << w << "\n";
      std::ofstream of;
      std::ostream* os = &std::cout;
      if (!out_file.empty()) {
        of.open(out_file);
        if (!of) throw std::runtime_error("cannot write: " + out_file);
        os = &of;
      }
      // per-cell posterior mean and sd across draws
      *os << "row";
      for (const auto& c : fs.colnames) *os << "," << c << "_mean," << c << "_sd";
      *os << "\n";
      if (!fs.draws.empty()) {
        const int nr = static_cast<int>(fs.draws[0].rows());
        const int nc = static_cast<int>(fs.draws[0].cols());
        const double nd = static_cast<double>(fs.draws.size());
        for (int i = 0; i < nr; ++i) {
          *os << (i + 1);
          for (int k = 0; k < nc; ++k) {
            double mean = 0.0, var = 0.0;
            for (const auto& D : fs.draws) mean += D(i, k);
            mean /= nd;
            for (const auto& D : fs.draws) var += (D(i, k) - mean) * (D(i, k) - mean);
            var /= std::max(nd - 1.0, 1.0);
            *os << "," << mean << "," << std::sqrt(var);
          }
          *os << "\n";
        }
      }
      return 0;
    }
  } catch (const ModelError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
