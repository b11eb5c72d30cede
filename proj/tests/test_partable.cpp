#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "bsem/math/rng.hpp"
#include "bsem/math/util.hpp"
#include "bsem/partable.hpp"

using namespace bsem;

static const char* kPoliticalDemocracy = R"(
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

static const std::vector<std::string> kPoldemCols = {"y1", "y2", "y3", "y4", "y5", "y6",
                                                     "y7", "y8", "x1", "x2", "x3"};

static ParameterTable poldem_table(BuildOptions opt = {}) {
  return build_parameter_table(parse_model(kPoliticalDemocracy), kPoldemCols, opt);
}

TEST_CASE("political democracy table: 34 rows, 31 free") {
  auto pt = poldem_table();
  CHECK(pt.n_rows() == 34);
  CHECK(pt.m == 31);

  int n_lambda = 0, n_beta = 0, n_tvar = 0, n_tcor = 0, n_pvar = 0, n_pcor = 0, n_fixed = 0;
  for (const auto& r : pt.rows) {
    switch (r.mat) {
      case Mat::Lambda: ++n_lambda; break;
      case Mat::Beta: ++n_beta; break;
      case Mat::ThetaVar: ++n_tvar; break;
      case Mat::ThetaCor: ++n_tcor; break;
      case Mat::PsiVar: ++n_pvar; break;
      case Mat::PsiCor: ++n_pcor; break;
      default: break;
    }
    if (r.free_index == 0) ++n_fixed;
  }
  CHECK(n_lambda == 11);
  CHECK(n_beta == 3);
  CHECK(n_tvar == 11);
  CHECK(n_tcor == 6);
  CHECK(n_pvar == 3);
  CHECK(n_pcor == 0);
  CHECK(n_fixed == 3);  // marker loadings x1, y1, y5

  // marker loadings fixed at 1
  for (const auto& r : pt.rows)
    if (r.mat == Mat::Lambda && (r.rhs == "x1" || r.rhs == "y1" || r.rhs == "y5")) {
      CHECK(r.free_index == 0);
      CHECK(r.fixed_value == 1.0);
    }

  // free indices are contiguous 1..m
  std::vector<bool> seen(pt.m, false);
  for (const auto& r : pt.rows)
    if (r.free_index > 0) seen[r.free_index - 1] = true;
  for (bool b : seen) CHECK(b);
}

TEST_CASE("default priors and start values") {
  BuildOptions opt;
  opt.col_vars.assign(11, 4.0);
  opt.col_means.assign(11, 2.5);
  auto pt = poldem_table(opt);
  for (const auto& r : pt.rows) {
    if (r.free_index == 0) continue;
    switch (r.mat) {
      case Mat::Lambda:
      case Mat::Beta:
        CHECK(r.prior.to_string() == "normal(0,10)");
        CHECK(r.start_natural == (r.mat == Mat::Lambda ? 1.0 : 0.0));
        break;
      case Mat::ThetaVar:
        CHECK(r.prior.to_string() == "gamma(1,0.5)[sd]");
        CHECK(r.start_natural == doctest::Approx(2.0));  // half the marginal variance
        break;
      case Mat::PsiVar:
        CHECK(r.prior.to_string() == "gamma(1,0.5)[sd]");
        CHECK(r.start_natural == doctest::Approx(0.05));
        break;
      case Mat::ThetaCor:
        CHECK(r.prior.to_string() == "beta(1,1)[cor]");
        CHECK(r.start_natural == 0.0);
        break;
      default: break;
    }
  }
}

TEST_CASE("theta <-> x round trip to 1e-12") {
  auto pt = poldem_table();
  CounterRng rng(99, 0);
  for (int rep = 0; rep < 10; ++rep) {
    Eigen::VectorXd theta(pt.m);
    for (int j = 0; j < pt.m; ++j) theta[j] = rng.normal();
    const Eigen::VectorXd x = pt.pars_to_x(theta);
    const Eigen::VectorXd back = pt.x_to_pars(x);
    CHECK((back - theta).cwiseAbs().maxCoeff() < 1e-12);
  }
  // start vector maps back consistently
  const Eigen::VectorXd t0 = pt.start_theta();
  const Eigen::VectorXd x0 = pt.pars_to_x(t0);
  CHECK((pt.x_to_pars(x0) - t0).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("covariance rows map through sigma_a sigma_b rho") {
  auto pt = poldem_table();
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(pt.m);
  // pick the y1~~y5 row and drive its correlation and variances
  int cov_row = -1;
  for (int r = 0; r < pt.n_rows(); ++r)
    if (pt.rows[r].mat == Mat::ThetaCor && pt.rows[r].lhs == "y1" && pt.rows[r].rhs == "y5") cov_row = r;
  REQUIRE(cov_row >= 0);
  const auto& row = pt.rows[cov_row];
  theta[pt.rows[row.var_row_a].free_index - 1] = std::log(4.0);
  theta[pt.rows[row.var_row_b].free_index - 1] = std::log(9.0);
  theta[row.free_index - 1] = std::atanh(0.5);
  const Eigen::VectorXd x = pt.pars_to_x(theta);
  CHECK(x[cov_row] == doctest::Approx(2.0 * 3.0 * 0.5).epsilon(1e-12));
}

TEST_CASE("transform Jacobian matches central finite differences") {
  auto pt = poldem_table();
  CounterRng rng(7, 1);
  Eigen::VectorXd theta(pt.m);
  for (int j = 0; j < pt.m; ++j) theta[j] = 0.3 * rng.normal();
  const Eigen::MatrixXd J = pt.jacobian_x_wrt_theta(theta);
  const double h = 1e-6;
  for (int j = 0; j < pt.m; ++j) {
    Eigen::VectorXd tp = theta, tm = theta;
    tp[j] += h;
    tm[j] -= h;
    const Eigen::VectorXd fd = (pt.pars_to_x(tp) - pt.pars_to_x(tm)) / (2.0 * h);
    for (int r = 0; r < pt.n_rows(); ++r) {
      if (pt.rows[r].mat == Mat::Defined) continue;
      CHECK(J(r, j) == doctest::Approx(fd[r]).epsilon(1e-6).scale(1.0));
    }
  }
}

TEST_CASE("prior components integrate to one") {
  auto pt = poldem_table();
  // locate one row of each transform class
  int row_coef = -1, row_var = -1, row_cor = -1;
  for (int r = 0; r < pt.n_rows(); ++r) {
    const auto& pr = pt.rows[r];
    if (pr.free_index == 0) continue;
    if (pr.mat == Mat::Lambda && row_coef < 0) row_coef = r;
    if (pr.mat == Mat::ThetaVar && row_var < 0) row_var = r;
    if (pr.mat == Mat::ThetaCor && row_cor < 0) row_cor = r;
  }
  REQUIRE(row_coef >= 0);
  REQUIRE(row_var >= 0);
  REQUIRE(row_cor >= 0);

  auto integrate = [&](int table_row, double lo, double hi) {
    const int j = pt.rows[table_row].free_index - 1;
    std::vector<double> xs, ws;
    gauss_legendre(400, xs, ws);
    double total = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const double t = lo + 0.5 * (xs[k] + 1.0) * (hi - lo);
      total += 0.5 * (hi - lo) * ws[k] * std::exp(pt.prior_component(j, t).first);
    }
    return total;
  };
  CHECK(integrate(row_coef, -80.0, 80.0) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(integrate(row_var, -60.0, 14.0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(integrate(row_cor, -20.0, 20.0) == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("log prior gradient matches finite differences") {
  auto pt = poldem_table();
  CounterRng rng(13, 2);
  Eigen::VectorXd theta(pt.m);
  for (int j = 0; j < pt.m; ++j) theta[j] = 0.4 * rng.normal();
  const Eigen::VectorXd g = pt.grad_log_prior(theta);
  const double h = 1e-6;
  for (int j = 0; j < pt.m; ++j) {
    Eigen::VectorXd tp = theta, tm = theta;
    tp[j] += h;
    tm[j] -= h;
    const double fd = (pt.log_prior(tp) - pt.log_prior(tm)) / (2.0 * h);
    CHECK(g[j] == doctest::Approx(fd).epsilon(5e-6).scale(1.0));
  }
}

TEST_CASE("equality labels share a free index") {
  const char* model = R"(
    f =~ x1 + a*x2 + a*x3 + x4
  )";
  auto pt = build_parameter_table(parse_model(model), {"x1", "x2", "x3", "x4"});
  int shared = -1, count = 0;
  for (const auto& r : pt.rows)
    if (r.label == "a") {
      ++count;
      if (shared < 0) shared = r.free_index;
      CHECK(r.free_index == shared);
    }
  CHECK(count == 2);
  // x2/x3 loadings collapse to one coordinate: 2 loadings + 4 theta + 1 psi
  CHECK(pt.m == 7);

  // gradient of a label-shared coordinate sums both occurrences in the Jacobian
  Eigen::VectorXd theta = pt.start_theta();
  const Eigen::MatrixXd J = pt.jacobian_x_wrt_theta(theta);
  int nonzero = 0;
  for (int r = 0; r < pt.n_rows(); ++r)
    if (J(r, shared - 1) != 0.0) ++nonzero;
  CHECK(nonzero == 2);
}

TEST_CASE("std_lv frees all loadings and fixes latent variances") {
  BuildOptions opt;
  opt.std_lv = true;
  auto pt = poldem_table(opt);
  for (const auto& r : pt.rows) {
    if (r.mat == Mat::Lambda) CHECK(r.free_index > 0);
    if (r.mat == Mat::PsiVar && r.lhs == "ind60") {
      CHECK(r.free_index == 0);
      CHECK(r.fixed_value == 1.0);
    }
  }
  CHECK(pt.m == 31);  // 3 markers freed, 3 variances fixed... but dem60/dem65 are endogenous
  // endogenous latent residual variances stay fixed at 1 under std_lv as well
}

TEST_CASE("multigroup replication doubles unlabeled parameters") {
  BuildOptions opt;
  opt.ngroups = 2;
  auto pt = poldem_table(opt);
  CHECK(pt.n_rows() == 68);
  CHECK(pt.m == 62);
  // group-2 rows carry group tag 2
  int g2 = 0;
  for (const auto& r : pt.rows)
    if (r.group == 2) ++g2;
  CHECK(g2 == 34);

  // labelled parameters are shared across groups
  const char* model = "f =~ x1 + a*x2 + x3";
  auto pt2 = build_parameter_table(parse_model(model), {"x1", "x2", "x3"}, opt);
  std::set<int> a_idx;
  for (const auto& r : pt2.rows)
    if (r.label == "a") a_idx.insert(r.free_index);
  CHECK(a_idx.size() == 1);
}

TEST_CASE("meanstructure adds intercept rows") {
  BuildOptions opt;
  opt.meanstructure = true;
  opt.col_means.assign(11, 3.0);
  auto pt = poldem_table(opt);
  CHECK(pt.n_rows() == 34 + 11 + 3);  // 11 observed intercepts + 3 latent means
  int nu_free = 0, alpha_fixed = 0;
  for (const auto& r : pt.rows) {
    if (r.mat == Mat::Nu) {
      CHECK(r.free_index > 0);
      CHECK(r.start_natural == doctest::Approx(3.0));
      ++nu_free;
    }
    if (r.mat == Mat::Alpha) {
      CHECK(r.free_index == 0);
      ++alpha_fixed;
    }
  }
  CHECK(nu_free == 11);
  CHECK(alpha_fixed == 3);
  CHECK(pt.m == 42);
}

TEST_CASE("observed-variable regression promotes a phantom latent") {
  const char* model = R"(
    f =~ z1 + z2 + z3
    y ~ b*f + x
  )";
  auto pt = build_parameter_table(parse_model(model), {"z1", "z2", "z3", "y", "x"});
  CHECK(pt.lv[0].size() == 3);  // f + phantoms y, x
  CHECK(pt.lv_phantom[0] == std::vector<bool>({false, true, true}));
  // residual variance of y and variance of x live in psi
  for (const auto& r : pt.rows)
    if (r.op == "~~" && (r.lhs == "y" || r.lhs == "x")) CHECK(r.mat == Mat::PsiVar);
  // regression rows are beta entries over the latent index set
  for (const auto& r : pt.rows)
    if (r.op == "~") {
      CHECK(r.mat == Mat::Beta);
      CHECK(r.row_i == pt.lv_index(1, "y"));
    }
  // phantom unit loadings appear in the assembled lambda
  Eigen::VectorXd theta = pt.start_theta();
  auto mm = model_matrices(pt, pt.pars_to_x(theta), 1, 1);
  CHECK(mm.lambda(pt.ov_index(1, "y"), pt.lv_index(1, "y")) == 1.0);
  CHECK(mm.lambda(pt.ov_index(1, "x"), pt.lv_index(1, "x")) == 1.0);
}

TEST_CASE("two-level statements split into per-level blocks") {
  const char* model = R"(
    level: 1
    ps =~ ps1 + ps2 + ps3
    y ~ wb1*ps
    level: 2
    PS =~ ps1 + ps2 + ps3
    Y ~ bb1*PS + X
    PS ~ ab1*X
    ind_PS_b := ab1*bb1
  )";
  BuildOptions opt;
  opt.meanstructure = true;
  auto pt = build_parameter_table(parse_model(model), {"ps1", "ps2", "ps3", "y", "Y", "X"}, opt);
  CHECK(pt.nlevels == 2);
  CHECK(pt.ov[0] == std::vector<std::string>({"ps1", "ps2", "ps3", "y"}));
  CHECK(pt.ov[1] == std::vector<std::string>({"ps1", "ps2", "ps3", "Y", "X"}));
  // intercepts only at level 2
  for (const auto& r : pt.rows)
    if (r.op == "~1") CHECK(r.level == 2);
  // defined row last
  CHECK(pt.rows.back().op == ":=");
  CHECK(pt.rows.back().expression == "ab1*bb1");
  // the defined expression evaluates from the labelled entries
  std::map<std::string, double> env;
  for (const auto& r : pt.rows)
    if (!r.label.empty()) env[r.label] = 2.0;
  CHECK(evaluate_expression(pt.rows.back().expression, env) == doctest::Approx(4.0));
}

TEST_CASE("model_matrices assembles the block matrices") {
  auto pt = poldem_table();
  Eigen::VectorXd theta = pt.start_theta();
  const Eigen::VectorXd x = pt.pars_to_x(theta);
  auto mm = model_matrices(pt, x, 1, 1);
  CHECK(mm.lambda.rows() == 11);
  CHECK(mm.lambda.cols() == 3);
  CHECK(mm.beta.rows() == 3);
  CHECK(mm.theta.rows() == 11);
  CHECK(mm.psi.rows() == 3);
  CHECK(mm.lambda(pt.ov_index(1, "x1"), pt.lv_index(1, "ind60")) == 1.0);
  CHECK(mm.lambda(pt.ov_index(1, "y1"), pt.lv_index(1, "dem60")) == 1.0);
  // theta symmetric with the residual covariances in place
  CHECK(mm.theta == mm.theta.transpose().eval());
  CHECK(mm.theta(pt.ov_index(1, "y1"), pt.ov_index(1, "y5")) == 0.0);  // start is 0
  CHECK(mm.beta(pt.lv_index(1, "dem65"), pt.lv_index(1, "dem60")) == 0.0);
}

TEST_CASE("inadmissible x values are rejected") {
  auto pt = poldem_table();
  Eigen::VectorXd theta = pt.start_theta();
  Eigen::VectorXd x = pt.pars_to_x(theta);
  // negative variance
  for (int r = 0; r < pt.n_rows(); ++r)
    if (pt.rows[r].mat == Mat::ThetaVar) {
      Eigen::VectorXd bad = x;
      bad[r] = -1.0;
      CHECK_THROWS_AS(pt.x_to_pars(bad), ModelError);
      break;
    }
  // |corr| >= 1
  for (int r = 0; r < pt.n_rows(); ++r)
    if (pt.rows[r].mat == Mat::ThetaCor) {
      Eigen::VectorXd bad = x;
      const auto& row = pt.rows[r];
      bad[r] = 2.0 * std::sqrt(bad[row.var_row_a] * bad[row.var_row_b]);
      CHECK_THROWS_AS(pt.x_to_pars(bad), ModelError);
      break;
    }
}

TEST_CASE("construction errors") {
  CHECK_THROWS_AS(build_parameter_table(parse_model("f =~ x1 + zz"), {"x1"}), ModelError);
  // one indicator, two free parameters: under-identified
  CHECK_THROWS_AS(build_parameter_table(parse_model("f =~ x1"), {"x1"}), ModelError);
  // indicator that is also a regression operand
  CHECK_THROWS_AS(build_parameter_table(parse_model("f =~ x1 + x2 + x3\n x1 ~ x2"), {"x1", "x2", "x3"}), ModelError);
}

TEST_CASE("table build is deterministic") {
  auto a = poldem_table();
  auto b = poldem_table();
  REQUIRE(a.n_rows() == b.n_rows());
  for (int r = 0; r < a.n_rows(); ++r) {
    CHECK(a.rows[r].lhs == b.rows[r].lhs);
    CHECK(a.rows[r].free_index == b.rows[r].free_index);
    CHECK(a.rows[r].start_natural == b.rows[r].start_natural);
  }
  CHECK(a.to_json().dump() == b.to_json().dump());
}
