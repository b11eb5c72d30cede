#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <fstream>

#include "bsem/data.hpp"
#include "bsem/likelihood.hpp"
#include "bsem/math/rng.hpp"

using namespace bsem;

// ---- helpers ----------------------------------------------------------

static double mvn_logpdf(const Eigen::VectorXd& y, const Eigen::VectorXd& mu, const Eigen::MatrixXd& S) {
  const int p = static_cast<int>(y.size());
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  REQUIRE(llt.info() == Eigen::Success);
  double logdet = 0.0;
  for (int a = 0; a < p; ++a) logdet += 2.0 * std::log(llt.matrixL()(a, a));
  const Eigen::VectorXd d = y - mu;
  return -0.5 * (p * kLog2Pi + logdet + d.dot(llt.solve(d)));
}

// simulate a complete n x p data matrix with a loose factor structure
static Eigen::MatrixXd simulate(int n, int p, uint64_t seed) {
  CounterRng rng(seed, 0);
  Eigen::MatrixXd Y(n, p);
  for (int i = 0; i < n; ++i) {
    const double f = rng.normal();
    for (int j = 0; j < p; ++j) Y(i, j) = 0.8 * f + rng.normal();
  }
  return Y;
}

static Dataset to_dataset(const Eigen::MatrixXd& Y, const std::vector<std::string>& cols) {
  Dataset ds;
  ds.columns = cols;
  ds.values = Y;
  return ds;
}

// random admissible point near the start vector; retries until finite
static Eigen::VectorXd random_point(const ParameterTable& pt, const SemLikelihood& lik, CounterRng& rng,
                                    double scale = 0.25) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    Eigen::VectorXd theta = pt.start_theta();
    for (int j = 0; j < pt.m; ++j) theta[j] += scale * rng.normal();
    const Eigen::VectorXd x = pt.pars_to_x(theta);
    if (std::isfinite(lik.loglik(x))) return x;
  }
  FAIL("could not find an admissible random point");
  return {};
}

static void check_grad_fd(const ParameterTable& pt, const SemLikelihood& lik, const Eigen::VectorXd& x,
                          double tol = 1e-5) {
  const Eigen::VectorXd g = lik.grad(x);
  for (int r = 0; r < pt.n_rows(); ++r) {
    if (pt.rows[r].free_index == 0 || pt.rows[r].mat == Mat::Defined) continue;
    const double h = 1e-6 * std::max(1.0, std::fabs(x[r]));
    Eigen::VectorXd xp = x, xm = x;
    xp[r] += h;
    xm[r] -= h;
    const double fp = lik.loglik(xp), fm = lik.loglik(xm);
    REQUIRE(std::isfinite(fp));
    REQUIRE(std::isfinite(fm));
    const double fd = (fp - fm) / (2.0 * h);
    CHECK(std::fabs(g[r] - fd) / std::max(1.0, std::fabs(fd)) < tol);
  }
}

// ---- implied moments ---------------------------------------------------

TEST_CASE("implied moments: identity measurement") {
  const int p = 3;
  ModelMatrices mm;
  mm.nu = Eigen::VectorXd::Zero(p);
  mm.alpha = Eigen::VectorXd::Zero(p);
  mm.lambda = Eigen::MatrixXd::Identity(p, p);
  mm.beta = Eigen::MatrixXd::Zero(p, p);
  mm.psi = Eigen::MatrixXd::Identity(p, p) * 2.0;
  mm.theta = Eigen::MatrixXd::Identity(p, p) * 0.3;
  auto im = implied_moments(mm);
  CHECK(im.mu.isZero());
  CHECK((im.sigma - (mm.psi + mm.theta)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("implied moments: one factor by hand") {
  ModelMatrices mm;
  mm.nu = Eigen::VectorXd::Zero(2);
  mm.alpha = Eigen::VectorXd::Zero(1);
  mm.lambda = Eigen::MatrixXd(2, 1);
  mm.lambda << 1.0, 0.9;
  mm.beta = Eigen::MatrixXd::Zero(1, 1);
  mm.psi = Eigen::MatrixXd::Constant(1, 1, 2.0);
  mm.theta = Eigen::Vector2d(0.5, 0.5).asDiagonal();
  auto im = implied_moments(mm);
  Eigen::MatrixXd expect(2, 2);
  expect << 2.5, 1.8, 1.8, 2.12;
  CHECK((im.sigma - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("implied moments: singular (I-B) throws, invertible non-stationary B evaluates") {
  ModelMatrices mm;
  mm.nu = Eigen::VectorXd::Zero(2);
  mm.alpha = Eigen::VectorXd::Zero(2);
  mm.lambda = Eigen::MatrixXd::Identity(2, 2);
  mm.psi = Eigen::MatrixXd::Identity(2, 2);
  mm.theta = Eigen::MatrixXd::Identity(2, 2);
  mm.beta = Eigen::MatrixXd::Identity(2, 2);  // I - B singular
  CHECK_THROWS_AS(implied_moments(mm), ModelError);
  mm.beta << 0.0, 3.0, 2.0, 0.0;  // spectral radius > 1, I - B invertible
  CHECK_NOTHROW(implied_moments(mm));
}

// ---- block likelihood ---------------------------------------------------

TEST_CASE("saturated model: loglik equals closed form and gradient vanishes") {
  const int n = 40, p = 2;
  Eigen::MatrixXd Y = simulate(n, p, 11);
  auto pt = build_parameter_table(parse_model("y1 ~~ y2"), {"y1", "y2"}, BuildOptions{.meanstructure = true});
  CHECK(pt.m == 5);  // 2 variances + 1 covariance + 2 intercepts
  auto bs = make_blocks(to_dataset(Y, {"y1", "y2"}), pt);
  SemLikelihood lik(pt, bs.blocks);

  const DataBlock& b = bs.blocks[0];
  // x at the saturated solution: Sigma = S, mu = ybar
  Eigen::VectorXd x(pt.n_rows());
  for (int r = 0; r < pt.n_rows(); ++r) {
    const auto& row = pt.rows[r];
    if (row.mat == Mat::ThetaVar)
      x[r] = b.S(row.row_i, row.row_i);
    else if (row.mat == Mat::ThetaCor)
      x[r] = b.S(row.row_i, row.col_j);
    else
      x[r] = b.ybar[row.row_i];
  }
  const double expect = -0.5 * n * (p * kLog2Pi + std::log(b.S.determinant()) + p);
  CHECK(lik.loglik(x) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(lik.grad(x).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("non-PD implied covariance returns -inf sentinel") {
  auto pt = build_parameter_table(parse_model("y1 ~~ y2"), {"y1", "y2"});
  Eigen::MatrixXd Y = simulate(20, 2, 3);
  auto bs = make_blocks(to_dataset(Y, {"y1", "y2"}), pt);
  SemLikelihood lik(pt, bs.blocks);
  Eigen::VectorXd x = pt.pars_to_x(pt.start_theta());
  for (int r = 0; r < pt.n_rows(); ++r)
    if (pt.rows[r].mat == Mat::ThetaCor) x[r] = 10.0;  // correlation > 1 in magnitude
  CHECK(lik.loglik(x) == -std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(lik.grad(x), ModelError);
}

TEST_CASE("missing patterns equal the per-case dense oracle to 1e-10") {
  const int n = 24, p = 3;
  Eigen::MatrixXd Y = simulate(n, p, 21);
  // punch MAR-ish holes: two extra patterns
  for (int i = 0; i < n; i += 4) Y(i, 2) = std::numeric_limits<double>::quiet_NaN();
  for (int i = 1; i < n; i += 6) Y(i, 0) = std::numeric_limits<double>::quiet_NaN();
  auto pt = build_parameter_table(parse_model("f =~ z1 + z2 + z3"), {"z1", "z2", "z3"},
                                  BuildOptions{.meanstructure = true});
  auto ds = to_dataset(Y, {"z1", "z2", "z3"});
  auto bs = make_blocks(ds, pt, "ml");
  CHECK(bs.blocks.size() == 3);
  SemLikelihood lik(pt, bs.blocks);

  CounterRng rng(5, 0);
  for (int rep = 0; rep < 5; ++rep) {
    const Eigen::VectorXd x = random_point(pt, lik, rng);
    auto im = implied_moments(model_matrices(pt, x, 1, 1));
    double oracle = 0.0;
    for (int i = 0; i < n; ++i) {
      std::vector<int> obs;
      for (int j = 0; j < p; ++j)
        if (!std::isnan(Y(i, j))) obs.push_back(j);
      Eigen::VectorXd yv(obs.size()), mu(obs.size());
      Eigen::MatrixXd S(obs.size(), obs.size());
      for (std::size_t a = 0; a < obs.size(); ++a) {
        yv[a] = Y(i, obs[a]);
        mu[a] = im.mu[obs[a]];
        for (std::size_t c = 0; c < obs.size(); ++c) S(a, c) = im.sigma(obs[a], obs[c]);
      }
      oracle += mvn_logpdf(yv, mu, S);
    }
    CHECK(lik.loglik(x) == doctest::Approx(oracle).epsilon(1e-10));
  }
}

TEST_CASE("single complete pattern equals the complete-data group value") {
  const int n = 30, p = 3;
  Eigen::MatrixXd Y = simulate(n, p, 31);
  auto pt = build_parameter_table(parse_model("f =~ z1 + z2 + z3"), {"z1", "z2", "z3"},
                                  BuildOptions{.meanstructure = true});
  auto ds = to_dataset(Y, {"z1", "z2", "z3"});
  auto listwise = make_blocks(ds, pt, "listwise");
  auto ml = make_blocks(ds, pt, "ml");
  SemLikelihood la(pt, listwise.blocks), lb(pt, ml.blocks);
  const Eigen::VectorXd x = pt.pars_to_x(pt.start_theta());
  CHECK(la.loglik(x) == lb.loglik(x));
}

TEST_CASE("two-level likelihood equals the dense Kronecker-sum oracle to 1e-8") {
  const char* model = R"(
    level: 1
    fw =~ a1 + a2 + a3
    level: 2
    fb =~ a1 + a2 + a3
  )";
  const std::vector<std::string> cols = {"a1", "a2", "a3"};
  // 2 clusters of sizes 3 and 4
  CounterRng rng(77, 0);
  const int p = 3;
  std::vector<int> sizes = {3, 4};
  int total = 7;
  Eigen::MatrixXd Y(total, p + 1);
  int row = 0;
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    const double bj = rng.normal();
    for (int i = 0; i < sizes[j]; ++i, ++row) {
      const double f = rng.normal();
      for (int k = 0; k < p; ++k) Y(row, k) = 1.0 + 0.7 * bj + 0.8 * f + 0.6 * rng.normal();
      Y(row, p) = static_cast<double>(j + 1);
    }
  }
  Dataset ds;
  ds.columns = cols;
  ds.values = Y.leftCols(p);
  ds.cluster.resize(total);
  for (int i = 0; i < total; ++i) ds.cluster[i] = static_cast<int>(Y(i, p));

  auto pt = build_parameter_table(parse_model(model), cols, BuildOptions{.meanstructure = true});
  auto bs = make_cluster_blocks(ds, pt);
  REQUIRE(bs.blocks.size() == 2);
  SemLikelihood lik(pt, bs.blocks);

  for (int rep = 0; rep < 5; ++rep) {
    const Eigen::VectorXd x = random_point(pt, lik, rng);
    auto im1 = implied_moments(model_matrices(pt, x, 1, 1));
    auto im2 = implied_moments(model_matrices(pt, x, 1, 2));
    double oracle = 0.0;
    row = 0;
    for (std::size_t j = 0; j < sizes.size(); ++j) {
      const int nj = sizes[j];
      Eigen::VectorXd y(nj * p), mu(nj * p);
      Eigen::MatrixXd C(nj * p, nj * p);
      for (int i = 0; i < nj; ++i)
        for (int a = 0; a < p; ++a) {
          y[i * p + a] = Y(row + i, a);
          mu[i * p + a] = im1.mu[a] + im2.mu[a];
          for (int k = 0; k < nj; ++k)
            for (int c = 0; c < p; ++c)
              C(i * p + a, k * p + c) = im2.sigma(a, c) + (i == k ? im1.sigma(a, c) : 0.0);
        }
      oracle += mvn_logpdf(y, mu, C);
      row += nj;
    }
    CHECK(lik.loglik(x) == doctest::Approx(oracle).epsilon(1e-8));
  }

  // invariance to cluster ordering
  std::vector<DataBlock> rev(bs.blocks.rbegin(), bs.blocks.rend());
  SemLikelihood lik_rev(pt, rev);
  const Eigen::VectorXd x = random_point(pt, lik, rng);
  CHECK(lik.loglik(x) == doctest::Approx(lik_rev.loglik(x)).epsilon(1e-14));
}

TEST_CASE("two-level with between-only variable and missing cells matches dense oracle") {
  const char* model = R"(
    level: 1
    fw =~ a1 + a2
    level: 2
    fb =~ a1 + 1*a2
    z ~ fb
  )";
  const std::vector<std::string> cols = {"a1", "a2", "z"};
  CounterRng rng(123, 0);
  std::vector<int> sizes = {3, 4, 3};
  const int p = 2;
  int total = 10;
  Eigen::MatrixXd W(total, p);
  std::vector<int> clus(total);
  std::vector<double> zval(sizes.size());
  int row = 0;
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    const double bj = rng.normal();
    zval[j] = 0.5 * bj + rng.normal();
    for (int i = 0; i < sizes[j]; ++i, ++row) {
      const double f = rng.normal();
      for (int k = 0; k < p; ++k) W(row, k) = 0.5 + 0.7 * bj + 0.8 * f + 0.6 * rng.normal();
      clus[row] = static_cast<int>(j + 1);
    }
  }
  // missing cells in the middle cluster only (keeps one complete + one dense path)
  W(4, 1) = std::numeric_limits<double>::quiet_NaN();
  W(5, 0) = std::numeric_limits<double>::quiet_NaN();

  Dataset ds;
  ds.columns = cols;
  ds.values.resize(total, 3);
  ds.values.leftCols(2) = W;
  for (int i = 0; i < total; ++i) ds.values(i, 2) = zval[clus[i] - 1];
  ds.cluster = clus;

  auto pt = build_parameter_table(parse_model(model), cols, BuildOptions{.meanstructure = true});
  auto bs = make_cluster_blocks(ds, pt);
  REQUIRE(bs.blocks.size() == 3);
  int n_missing_blocks = 0;
  for (const auto& b : bs.blocks) n_missing_blocks += b.has_missing ? 1 : 0;
  CHECK(n_missing_blocks == 1);
  SemLikelihood lik(pt, bs.blocks);

  for (int rep = 0; rep < 5; ++rep) {
    const Eigen::VectorXd x = random_point(pt, lik, rng);
    auto im1 = implied_moments(model_matrices(pt, x, 1, 1));
    auto im2 = implied_moments(model_matrices(pt, x, 1, 2));
    // dense oracle over observed cells; z is a single between-level cell
    double oracle = 0.0;
    row = 0;
    for (std::size_t j = 0; j < sizes.size(); ++j) {
      const int nj = sizes[j];
      struct Cell { int i, a; double y; };  // a: 0,1 within; 2 = z
      std::vector<Cell> cells;
      for (int i = 0; i < nj; ++i)
        for (int a = 0; a < p; ++a)
          if (!std::isnan(W(row + i, a))) cells.push_back({i, a, W(row + i, a)});
      cells.push_back({-1, 2, zval[j]});
      const int nc = static_cast<int>(cells.size());
      Eigen::VectorXd y(nc), mu(nc);
      Eigen::MatrixXd C(nc, nc);
      for (int a = 0; a < nc; ++a) {
        mu[a] = (cells[a].a < 2 ? im1.mu[cells[a].a] : 0.0) + im2.mu[cells[a].a];
        y[a] = cells[a].y;
        for (int c = 0; c < nc; ++c) {
          double v = im2.sigma(cells[a].a, cells[c].a);
          if (cells[a].i >= 0 && cells[a].i == cells[c].i) v += im1.sigma(cells[a].a, cells[c].a);
          C(a, c) = v;
        }
      }
      oracle += mvn_logpdf(y, mu, C);
      row += nj;
    }
    CHECK(lik.loglik(x) == doctest::Approx(oracle).epsilon(1e-8));
  }
}

// ---- gradients ----------------------------------------------------------

TEST_CASE("analytic gradient matches finite differences: complete single group") {
  Eigen::MatrixXd Y = simulate(50, 4, 41);
  auto pt = build_parameter_table(parse_model("f =~ z1 + z2 + z3 + z4"), {"z1", "z2", "z3", "z4"},
                                  BuildOptions{.meanstructure = true});
  auto bs = make_blocks(to_dataset(Y, {"z1", "z2", "z3", "z4"}), pt);
  SemLikelihood lik(pt, bs.blocks);
  CounterRng rng(1, 0);
  for (int rep = 0; rep < 20; ++rep) check_grad_fd(pt, lik, random_point(pt, lik, rng));
}

TEST_CASE("analytic gradient matches finite differences: political democracy structure") {
  const char* model = R"(
    ind60 =~ x1 + x2 + x3
    dem60 =~ y1 + y2 + y3 + y4
    dem60 ~ ind60
    y1 ~~ y3
  )";
  const std::vector<std::string> cols = {"x1", "x2", "x3", "y1", "y2", "y3", "y4"};
  Eigen::MatrixXd Y = simulate(60, 7, 43);
  auto pt = build_parameter_table(parse_model(model), cols);
  auto bs = make_blocks(to_dataset(Y, cols), pt);
  SemLikelihood lik(pt, bs.blocks);
  CounterRng rng(2, 0);
  for (int rep = 0; rep < 20; ++rep) check_grad_fd(pt, lik, random_point(pt, lik, rng));
}

TEST_CASE("analytic gradient matches finite differences: missing patterns") {
  Eigen::MatrixXd Y = simulate(40, 3, 47);
  for (int i = 0; i < 40; i += 5) Y(i, 1) = std::numeric_limits<double>::quiet_NaN();
  auto pt = build_parameter_table(parse_model("f =~ z1 + z2 + z3"), {"z1", "z2", "z3"},
                                  BuildOptions{.meanstructure = true});
  auto bs = make_blocks(to_dataset(Y, {"z1", "z2", "z3"}), pt, "ml");
  SemLikelihood lik(pt, bs.blocks);
  CounterRng rng(3, 0);
  for (int rep = 0; rep < 20; ++rep) check_grad_fd(pt, lik, random_point(pt, lik, rng));
}

TEST_CASE("analytic gradient matches finite differences: multigroup") {
  const int n = 30;
  Eigen::MatrixXd Y(2 * n, 3);
  Y.topRows(n) = simulate(n, 3, 53);
  Y.bottomRows(n) = simulate(n, 3, 59);
  Dataset ds = to_dataset(Y, {"z1", "z2", "z3"});
  ds.group.assign(2 * n, 1);
  for (int i = n; i < 2 * n; ++i) ds.group[i] = 2;
  ds.ngroups = 2;
  auto pt = build_parameter_table(parse_model("f =~ z1 + z2 + a*z3"), {"z1", "z2", "z3"},
                                  BuildOptions{.ngroups = 2});
  auto bs = make_blocks(ds, pt);
  REQUIRE(bs.blocks.size() == 2);
  SemLikelihood lik(pt, bs.blocks);
  CounterRng rng(4, 0);
  for (int rep = 0; rep < 20; ++rep) check_grad_fd(pt, lik, random_point(pt, lik, rng));
}

TEST_CASE("analytic gradient matches finite differences: two-level clusters") {
  const char* model = R"(
    level: 1
    fw =~ a1 + a2 + a3
    level: 2
    fb =~ a1 + a2 + a3
  )";
  const std::vector<std::string> cols = {"a1", "a2", "a3"};
  CounterRng gen(61, 0);
  const int J = 8, nj = 5, p = 3;
  Eigen::MatrixXd Y(J * nj, p);
  Dataset ds;
  ds.cluster.resize(J * nj);
  int row = 0;
  for (int j = 0; j < J; ++j) {
    const double bj = gen.normal();
    for (int i = 0; i < nj; ++i, ++row) {
      const double f = gen.normal();
      for (int k = 0; k < p; ++k) Y(row, k) = 1.0 + 0.7 * bj + 0.8 * f + 0.6 * gen.normal();
      ds.cluster[row] = j + 1;
    }
  }
  ds.columns = cols;
  ds.values = Y;
  auto pt = build_parameter_table(parse_model(model), cols, BuildOptions{.meanstructure = true});
  auto bs = make_cluster_blocks(ds, pt);
  SemLikelihood lik(pt, bs.blocks);
  CounterRng rng(6, 0);
  for (int rep = 0; rep < 10; ++rep) check_grad_fd(pt, lik, random_point(pt, lik, rng, 0.15));

  // and with missing cells (dense per-cluster path)
  Y(2, 1) = std::numeric_limits<double>::quiet_NaN();
  Y(11, 0) = std::numeric_limits<double>::quiet_NaN();
  ds.values = Y;
  auto bs2 = make_cluster_blocks(ds, pt);
  SemLikelihood lik2(pt, bs2.blocks);
  for (int rep = 0; rep < 10; ++rep) check_grad_fd(pt, lik2, random_point(pt, lik2, rng, 0.15));
}

// ---- CSV ingestion ------------------------------------------------------

TEST_CASE("CSV loader: header, NA and empty cells, group/cluster columns") {
  const char* path = "test_likelihood_tmp.csv";
  {
    std::ofstream out(path);
    out << "y1,y2,grp,cl\n";
    out << "1.5,2.0,A,1\n";
    out << "NA,3.0,A,1\n";
    out << "2.5,,B,2\n";
    out << "0.5,1.0,B,2\n";
  }
  Dataset ds = load_csv(path, "grp", "cl");
  std::remove(path);
  CHECK(ds.columns == std::vector<std::string>({"y1", "y2"}));
  CHECK(ds.nrows() == 4);
  CHECK(std::isnan(ds.values(1, 0)));
  CHECK(std::isnan(ds.values(2, 1)));
  CHECK(ds.values(0, 0) == 1.5);
  CHECK(ds.ngroups == 2);
  CHECK(ds.group == std::vector<int>({1, 1, 2, 2}));
  CHECK(ds.cluster == std::vector<int>({1, 1, 2, 2}));
  CHECK(ds.group_labels == std::vector<std::string>({"A", "B"}));
}

TEST_CASE("listwise deletion drops incomplete rows with a warning") {
  Eigen::MatrixXd Y = simulate(10, 2, 71);
  Y(3, 0) = std::numeric_limits<double>::quiet_NaN();
  auto pt = build_parameter_table(parse_model("f =~ z1 + z2\nf ~~ 1*f\nz1 ~~ a*z1\nz2 ~~ a*z2"), {"z1", "z2"});
  auto bs = make_blocks(to_dataset(Y, {"z1", "z2"}), pt, "listwise");
  CHECK(bs.blocks[0].n == 9);
  CHECK(bs.n_dropped == 1);
  CHECK(!bs.warnings.empty());
}
