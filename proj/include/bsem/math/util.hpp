#pragma once
// Numeric utilities shared across modules: monotone cubic Hermite splines,
// Gauss-Legendre / Gauss-Hermite rules, nearest-PD repair.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace bsem {

// Fritsch-Carlson monotone cubic interpolation on strictly increasing knots.
class MonotoneSpline {
 public:
  MonotoneSpline() = default;

  MonotoneSpline(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
    const int n = static_cast<int>(x_.size());
    if (n < 2 || y_.size() != x_.size()) throw std::invalid_argument("MonotoneSpline: bad knots");
    m_.resize(n);
    std::vector<double> d(n - 1);
    for (int i = 0; i + 1 < n; ++i) d[i] = (y_[i + 1] - y_[i]) / (x_[i + 1] - x_[i]);
    m_[0] = d[0];
    m_[n - 1] = d[n - 2];
    for (int i = 1; i + 1 < n; ++i) m_[i] = (d[i - 1] * d[i] <= 0.0) ? 0.0 : 0.5 * (d[i - 1] + d[i]);
    for (int i = 0; i + 1 < n; ++i) {
      if (d[i] == 0.0) {
        m_[i] = m_[i + 1] = 0.0;
        continue;
      }
      const double a = m_[i] / d[i], b = m_[i + 1] / d[i];
      const double s = a * a + b * b;
      if (s > 9.0) {
        const double t = 3.0 / std::sqrt(s);
        m_[i] = t * a * d[i];
        m_[i + 1] = t * b * d[i];
      }
    }
  }

  double operator()(double t) const {
    const int n = static_cast<int>(x_.size());
    if (t <= x_.front()) return y_.front() + m_.front() * (t - x_.front());
    if (t >= x_.back()) return y_.back() + m_.back() * (t - x_.back());
    int lo = 0, hi = n - 1;
    while (hi - lo > 1) {
      const int mid = (lo + hi) / 2;
      (x_[mid] <= t ? lo : hi) = mid;
    }
    const double h = x_[lo + 1] - x_[lo];
    const double s = (t - x_[lo]) / h;
    const double s2 = s * s, s3 = s2 * s;
    return (2 * s3 - 3 * s2 + 1) * y_[lo] + (s3 - 2 * s2 + s) * h * m_[lo] + (-2 * s3 + 3 * s2) * y_[lo + 1] +
           (s3 - s2) * h * m_[lo + 1];
  }

 private:
  std::vector<double> x_, y_, m_;
};

// Gauss-Legendre nodes/weights on [-1,1] by Newton iteration on P_n.
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    double z = std::cos(3.141592653589793 * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = 1.0, p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = ((2.0 * j + 1.0) * z * p2 - j * p3) / (j + 1.0);
      }
      pp = n * (z * p1 - p2) / (z * z - 1.0);
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::fabs(z - z1) < 1e-15) break;
    }
    x[i] = -z;
    x[n - 1 - i] = z;
    w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
    w[n - 1 - i] = w[i];
  }
}

// 9-node Gauss-Hermite rule for integrals against exp(-t^2) dt.
inline const std::vector<double>& gh9_nodes() {
  static const std::vector<double> t = {-3.190993201781528, -2.266580584531843, -1.468553289216668,
                                        -0.723551018752838, 0.0,                0.723551018752838,
                                        1.468553289216668,  2.266580584531843,  3.190993201781528};
  return t;
}
inline const std::vector<double>& gh9_weights() {
  static const std::vector<double> w = {3.960697726326438e-05, 4.943624275536947e-03, 8.847452739437657e-02,
                                        4.326515590025558e-01, 7.202352156060510e-01, 4.326515590025558e-01,
                                        8.847452739437657e-02, 4.943624275536947e-03, 3.960697726326438e-05};
  return w;
}

// Nearest-PD repair by eigenvalue clipping (floor eigenvalues at eps).
inline Eigen::MatrixXd nearest_pd(const Eigen::MatrixXd& A, double eps = 1e-8) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (A + A.transpose()));
  Eigen::VectorXd ev = es.eigenvalues();
  bool fixed = false;
  for (int i = 0; i < ev.size(); ++i)
    if (ev[i] < eps) {
      ev[i] = eps;
      fixed = true;
    }
  if (!fixed) return A;
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace bsem
