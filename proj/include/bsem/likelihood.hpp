#pragma once
// Block-structured marginal Gaussian log-likelihood and its analytic gradient
// with respect to the natural parameter vector (one entry per table row).

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/LU>
#include <cmath>
#include <limits>
#include <vector>

#include "bsem/data.hpp"
#include "bsem/math/normal.hpp"
#include "bsem/partable.hpp"

namespace bsem {

struct ImpliedMoments {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
};

inline ImpliedMoments implied_moments(const ModelMatrices& mats) {
  const int q = static_cast<int>(mats.beta.rows());
  if (q == 0) {  // path models without latent variables
    ImpliedMoments im;
    im.mu = mats.nu;
    im.sigma = mats.theta;
    return im;
  }
  const Eigen::MatrixXd imb = Eigen::MatrixXd::Identity(q, q) - mats.beta;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(imb);
  lu.setThreshold(1e-12);
  if (lu.rank() < q) throw ModelError("SingularStructure", "(I - B) is numerically singular");
  const Eigen::MatrixXd A = lu.inverse();
  ImpliedMoments im;
  im.mu = mats.nu + mats.lambda * (A * mats.alpha);
  const Eigen::MatrixXd LA = mats.lambda * A;
  im.sigma = LA * mats.psi * LA.transpose() + mats.theta;
  im.sigma = 0.5 * (im.sigma + im.sigma.transpose()).eval();
  return im;
}

class SemLikelihood {
 public:
  SemLikelihood(const ParameterTable& pt, std::vector<DataBlock> blocks)
      : pt_(&pt), blocks_(std::move(blocks)) {
    if (pt.nlevels == 2) {
      // union variable order: level-1 variables, then between-only variables
      const auto& ov1 = pt.ov[0];
      const auto& ov2 = pt.ov[1];
      p1_ = static_cast<int>(ov1.size());
      map2_.resize(ov2.size());
      int extra = 0;
      for (std::size_t j = 0; j < ov2.size(); ++j) {
        const auto it = std::find(ov1.begin(), ov1.end(), ov2[j]);
        map2_[j] = (it != ov1.end()) ? static_cast<int>(it - ov1.begin()) : p1_ + extra++;
      }
      pu_ = p1_ + extra;
    } else {
      p1_ = static_cast<int>(pt.ov[0].size());
      pu_ = p1_;
    }
  }

  static constexpr double kNegInf = -std::numeric_limits<double>::infinity();

  const std::vector<DataBlock>& blocks() const { return blocks_; }

  // log-likelihood; -inf sentinel when any block covariance is not PD
  double loglik(const Eigen::VectorXd& x) const {
    double total = 0.0;
    if (!eval(x, total, nullptr)) return kNegInf;
    return total;
  }

  // analytic gradient with respect to the natural row values (length = n_rows)
  Eigen::VectorXd grad(const Eigen::VectorXd& x) const {
    double total = 0.0;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(pt_->n_rows());
    if (!eval(x, total, &g)) throw ModelError("NonPositiveDefinite", "gradient requested at an inadmissible point");
    return g;
  }

  bool loglik_grad(const Eigen::VectorXd& x, double& f, Eigen::VectorXd& g) const {
    g = Eigen::VectorXd::Zero(pt_->n_rows());
    return eval(x, f, &g);
  }

 private:
  const ParameterTable* pt_;
  std::vector<DataBlock> blocks_;
  int p1_ = 0, pu_ = 0;
  std::vector<int> map2_;  // level-2 ov index -> union index

  struct GroupAccum {
    Eigen::MatrixXd W1, W2;    // dl/dSigma_W (level-1 index), dl/dSigma_B (level-2 index)
    Eigen::VectorXd w;         // dl/dmu over the union index
  };

  bool eval(const Eigen::VectorXd& x, double& total, Eigen::VectorXd* gout) const {
    const ParameterTable& pt = *pt_;
    total = 0.0;
    const int G = pt.ngroups;

    for (int g = 1; g <= G; ++g) {
      // implied moments per level
      ModelMatrices m1 = model_matrices(pt, x, g, 1);
      ImpliedMoments im1 = implied_moments(m1);
      ImpliedMoments im2;
      ModelMatrices m2;
      Eigen::VectorXd mu_u = Eigen::VectorXd::Zero(pu_);
      Eigen::MatrixXd sb_u;  // between covariance on the union index
      mu_u.head(p1_) = im1.mu;
      if (pt.nlevels == 2) {
        m2 = model_matrices(pt, x, g, 2);
        im2 = implied_moments(m2);
        sb_u = Eigen::MatrixXd::Zero(pu_, pu_);
        for (std::size_t a = 0; a < map2_.size(); ++a) {
          mu_u[map2_[a]] += im2.mu[a];
          for (std::size_t b = 0; b < map2_.size(); ++b) sb_u(map2_[a], map2_[b]) = im2.sigma(a, b);
        }
      }

      GroupAccum acc;
      if (gout) {
        acc.W1 = Eigen::MatrixXd::Zero(p1_, p1_);
        acc.w = Eigen::VectorXd::Zero(pu_);
        if (pt.nlevels == 2) acc.W2 = Eigen::MatrixXd::Zero(im2.sigma.rows(), im2.sigma.cols());
      }

      for (const DataBlock& b : blocks_) {
        if (b.group != g) continue;
        if (b.kind == DataBlock::Kind::Cluster) {
          if (!cluster_block(b, im1, sb_u, mu_u, total, gout ? &acc : nullptr)) return false;
        } else {
          if (!moment_block(b, im1, total, gout ? &acc : nullptr)) return false;
        }
      }

      if (gout) {
        chain(g, 1, x, acc.W1, acc.w.head(p1_), *gout);
        if (pt.nlevels == 2) {
          Eigen::VectorXd w2(map2_.size());
          for (std::size_t a = 0; a < map2_.size(); ++a) w2[a] = acc.w[map2_[a]];
          chain(g, 2, x, acc.W2, w2, *gout);
        }
      }
    }
    return true;
  }

  // group / missing-pattern block: n-weighted Gaussian kernel on the
  // observed sub-moments
  bool moment_block(const DataBlock& b, const ImpliedMoments& im, double& total, GroupAccum* acc) const {
    const int po = static_cast<int>(b.observed.size());
    Eigen::MatrixXd Sg(po, po);
    Eigen::VectorXd mu(po);
    for (int a = 0; a < po; ++a) {
      mu[a] = im.mu[b.observed[a]];
      for (int c = 0; c < po; ++c) Sg(a, c) = im.sigma(b.observed[a], b.observed[c]);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(Sg);
    if (llt.info() != Eigen::Success) return false;
    // without a meanstructure the means are saturated: the kernel is in S only
    const Eigen::VectorXd d = pt_->meanstructure ? (b.ybar - mu).eval() : Eigen::VectorXd::Zero(po).eval();
    const Eigen::MatrixXd Sinv = llt.solve(Eigen::MatrixXd::Identity(po, po));
    double logdet = 0.0;
    for (int a = 0; a < po; ++a) logdet += 2.0 * std::log(llt.matrixL()(a, a));
    const double n = b.n;
    total += -0.5 * n * (po * kLog2Pi + logdet + (Sinv * b.S).trace() + d.dot(Sinv * d));
    if (acc) {
      const Eigen::MatrixXd W = 0.5 * n * (Sinv * (b.S + d * d.transpose()) * Sinv - Sinv);
      const Eigen::VectorXd w = n * (Sinv * d);
      for (int a = 0; a < po; ++a) {
        acc->w[b.observed[a]] += w[a];
        for (int c = 0; c < po; ++c) acc->W1(b.observed[a], b.observed[c]) += W(a, c);
      }
    }
    return true;
  }

  // two-level cluster block; sb_u / mu_u are on the union index
  bool cluster_block(const DataBlock& b, const ImpliedMoments& im1, const Eigen::MatrixXd& sb_u,
                     const Eigen::VectorXd& mu_u, double& total, GroupAccum* acc) const {
    if (b.has_missing) return cluster_block_dense(b, im1, sb_u, mu_u, total, acc);
    const int n = b.n;
    const int pw = p1_;
    const int pb = static_cast<int>(b.between_obs.size());
    const int pc = pw + pb;

    // within part: (n-1) replicated contrasts with covariance Sigma_W
    Eigen::LLT<Eigen::MatrixXd> lltw(im1.sigma);
    if (lltw.info() != Eigen::Success) return false;
    const Eigen::MatrixXd Winv = lltw.solve(Eigen::MatrixXd::Identity(pw, pw));
    double logdetW = 0.0;
    for (int a = 0; a < pw; ++a) logdetW += 2.0 * std::log(lltw.matrixL()(a, a));
    total += -0.5 * ((n - 1) * (pw * kLog2Pi + logdetW) + (Winv * b.SW).trace());

    // cluster-mean part: [ybar_w; y_b] with covariance
    // [[Sigma_B.ww + Sigma_W/n, Sigma_B.wb], [Sigma_B.bw, Sigma_B.bb]]
    Eigen::MatrixXd C(pc, pc);
    Eigen::VectorXd d(pc);
    std::vector<int> cu(pc);  // union index of each cluster-mean coordinate
    for (int a = 0; a < pw; ++a) cu[a] = a;
    for (int a = 0; a < pb; ++a) cu[pw + a] = map2_[b.between_obs[a]];
    for (int a = 0; a < pc; ++a) {
      d[a] = (a < pw ? b.ybar_w[a] : b.y_b[a - pw]) - mu_u[cu[a]];
      for (int c = 0; c < pc; ++c) C(a, c) = sb_u(cu[a], cu[c]);
    }
    C.topLeftCorner(pw, pw) += im1.sigma / static_cast<double>(n);
    Eigen::LLT<Eigen::MatrixXd> lltc(C);
    if (lltc.info() != Eigen::Success) return false;
    const Eigen::MatrixXd Cinv = lltc.solve(Eigen::MatrixXd::Identity(pc, pc));
    double logdetC = 0.0;
    for (int a = 0; a < pc; ++a) logdetC += 2.0 * std::log(lltc.matrixL()(a, a));
    // pw*log(n) is the Jacobian of the orthonormal (Helmert) reduction from
    // the n raw within rows to the cluster mean
    total += -0.5 * (pc * kLog2Pi + logdetC + d.dot(Cinv * d) + pw * std::log(static_cast<double>(n)));

    if (acc) {
      acc->W1 += -0.5 * ((n - 1) * Winv - Winv * b.SW * Winv);
      const Eigen::VectorXd cd = Cinv * d;
      const Eigen::MatrixXd Wc = 0.5 * (cd * cd.transpose() - Cinv);
      acc->W1 += Wc.topLeftCorner(pw, pw) / static_cast<double>(n);
      for (int a = 0; a < pc; ++a) acc->w[cu[a]] += cd[a];
      // scatter Wc into the level-2 index space
      scatter_between(b, cu, Wc, acc->W2);
    }
    return true;
  }

  // dense per-cluster MVN over the observed cells (clusters with missing data)
  bool cluster_block_dense(const DataBlock& b, const ImpliedMoments& im1, const Eigen::MatrixXd& sb_u,
                           const Eigen::VectorXd& mu_u, double& total, GroupAccum* acc) const {
    struct Cell {
      int row;  // -1 for between-only cells
      int var;  // level-1 index, or union index for between-only cells
      double y;
    };
    std::vector<Cell> cells;
    for (int i = 0; i < b.raw.rows(); ++i)
      for (int a = 0; a < p1_; ++a)
        if (!std::isnan(b.raw(i, a))) cells.push_back({i, a, b.raw(i, a)});
    for (int a = 0; a < b.raw_b.size(); ++a)
      if (!std::isnan(b.raw_b[a])) cells.push_back({-1, map2_[b.between_obs[a]], b.raw_b[a]});
    const int nc = static_cast<int>(cells.size());
    if (nc == 0) return true;

    auto un = [&](const Cell& c) { return c.row >= 0 ? c.var : c.var; };  // already union index
    Eigen::MatrixXd C(nc, nc);
    Eigen::VectorXd r(nc);
    const bool twolevel = sb_u.size() > 0;
    for (int a = 0; a < nc; ++a) {
      r[a] = cells[a].y - mu_u[un(cells[a])];
      for (int c = 0; c < nc; ++c) {
        double v = twolevel ? sb_u(un(cells[a]), un(cells[c])) : 0.0;
        if (cells[a].row >= 0 && cells[a].row == cells[c].row) v += im1.sigma(cells[a].var, cells[c].var);
        C(a, c) = v;
      }
    }
    Eigen::LLT<Eigen::MatrixXd> llt(C);
    if (llt.info() != Eigen::Success) return false;
    const Eigen::MatrixXd Cinv = llt.solve(Eigen::MatrixXd::Identity(nc, nc));
    double logdet = 0.0;
    for (int a = 0; a < nc; ++a) logdet += 2.0 * std::log(llt.matrixL()(a, a));
    total += -0.5 * (nc * kLog2Pi + logdet + r.dot(Cinv * r));

    if (acc) {
      const Eigen::VectorXd cr = Cinv * r;
      const Eigen::MatrixXd Wf = 0.5 * (cr * cr.transpose() - Cinv);
      for (int a = 0; a < nc; ++a) acc->w[un(cells[a])] += cr[a];
      // inverse of map2_ to scatter between-level gradient
      std::vector<int> inv_map(pu_, -1);
      for (std::size_t j = 0; j < map2_.size(); ++j) inv_map[map2_[j]] = static_cast<int>(j);
      for (int a = 0; a < nc; ++a)
        for (int c = 0; c < nc; ++c) {
          if (cells[a].row >= 0 && cells[a].row == cells[c].row)
            acc->W1(cells[a].var, cells[c].var) += Wf(a, c);
          const int ja = inv_map[un(cells[a])];
          const int jc = inv_map[un(cells[c])];
          if (ja >= 0 && jc >= 0) acc->W2(ja, jc) += Wf(a, c);
        }
    }
    return true;
  }

  void scatter_between(const DataBlock& b, const std::vector<int>& cu, const Eigen::MatrixXd& Wc,
                       Eigen::MatrixXd& W2) const {
    std::vector<int> inv_map(pu_, -1);
    for (std::size_t j = 0; j < map2_.size(); ++j) inv_map[map2_[j]] = static_cast<int>(j);
    for (std::size_t a = 0; a < cu.size(); ++a)
      for (std::size_t c = 0; c < cu.size(); ++c) {
        const int ja = inv_map[cu[a]];
        const int jc = inv_map[cu[c]];
        if (ja >= 0 && jc >= 0) W2(ja, jc) += Wc(a, c);
      }
  }

  // chain dl/dSigma (full-matrix convention W) and dl/dmu (w) through the
  // model matrices of (group, level) into the per-row natural gradient
  void chain(int g, int L, const Eigen::VectorXd& x, const Eigen::MatrixXd& W, const Eigen::VectorXd& w,
             Eigen::VectorXd& gx) const {
    const ParameterTable& pt = *pt_;
    ModelMatrices mats = model_matrices(pt, x, g, L);
    const int q = static_cast<int>(mats.beta.rows());
    const Eigen::MatrixXd A =
        (q == 0) ? Eigen::MatrixXd(0, 0)
                 : (Eigen::MatrixXd::Identity(q, q) - mats.beta).fullPivLu().inverse().eval();
    const Eigen::VectorXd Aal = A * mats.alpha;
    const Eigen::MatrixXd LA = mats.lambda * A;       // p x q
    const Eigen::MatrixXd M = A * mats.psi * A.transpose();
    const Eigen::MatrixXd WLam = W * mats.lambda;     // p x q

    const Eigen::MatrixXd dLam = 2.0 * WLam * M + w * Aal.transpose();
    const Eigen::MatrixXd dPsi = LA.transpose() * W * LA;
    const Eigen::MatrixXd dB =
        2.0 * A.transpose() * mats.lambda.transpose() * WLam * M + (LA.transpose() * w) * Aal.transpose();
    const Eigen::VectorXd dAlpha = LA.transpose() * w;

    for (std::size_t r = 0; r < pt.rows.size(); ++r) {
      const ParamRow& row = pt.rows[r];
      if (row.group != g || row.level != L) continue;
      switch (row.mat) {
        case Mat::Lambda: gx[r] += dLam(row.row_i, row.col_j); break;
        case Mat::Beta: gx[r] += dB(row.row_i, row.col_j); break;
        case Mat::Nu: gx[r] += w[row.row_i]; break;
        case Mat::Alpha: gx[r] += dAlpha[row.row_i]; break;
        case Mat::ThetaVar: gx[r] += W(row.row_i, row.row_i); break;
        case Mat::ThetaCor: gx[r] += 2.0 * W(row.row_i, row.col_j); break;
        case Mat::PsiVar: gx[r] += dPsi(row.row_i, row.row_i); break;
        case Mat::PsiCor: gx[r] += 2.0 * dPsi(row.row_i, row.col_j); break;
        case Mat::Defined: break;
      }
    }
  }
};

}  // namespace bsem
