#include "racer/linalg.hpp"

#include <cmath>
#include <stdexcept>

namespace racer::linalg {

void chol_update(Eigen::MatrixXd& L, Eigen::VectorXd& x) {
  const int n = static_cast<int>(L.rows());
  for (int k = 0; k < n; ++k) {
    const double lkk = L(k, k);
    const double xk = x(k);
    const double r = std::hypot(lkk, xk);
    const double c = r / lkk;
    const double s = xk / lkk;
    L(k, k) = r;
    for (int i = k + 1; i < n; ++i) {
      L(i, k) = (L(i, k) + s * x(i)) / c;
      x(i) = c * x(i) - s * L(i, k);
    }
  }
}

bool chol_downdate(Eigen::MatrixXd& L, Eigen::VectorXd& x) {
  const int n = static_cast<int>(L.rows());
  for (int k = 0; k < n; ++k) {
    const double lkk = L(k, k);
    const double xk = x(k);
    const double r2 = (lkk - xk) * (lkk + xk);
    if (r2 <= 0.0) return false;
    const double r = std::sqrt(r2);
    const double c = r / lkk;
    const double s = xk / lkk;
    L(k, k) = r;
    for (int i = k + 1; i < n; ++i) {
      L(i, k) = (L(i, k) - s * x(i)) / c;
      x(i) = c * x(i) - s * L(i, k);
    }
  }
  return true;
}

void chol_delete(Eigen::MatrixXd& L, int idx) {
  const int n = static_cast<int>(L.rows());
  if (idx < 0 || idx >= n) throw std::invalid_argument("chol_delete: index out of range");
  const int m = n - idx - 1;  // trailing block size
  Eigen::VectorXd col = L.block(idx + 1, idx, m, 1);
  Eigen::MatrixXd trail = L.block(idx + 1, idx + 1, m, m);
  chol_update(trail, col);

  Eigen::MatrixXd out(n - 1, n - 1);
  out.setZero();
  out.topLeftCorner(idx, idx) = L.topLeftCorner(idx, idx);
  out.block(idx, 0, m, idx) = L.block(idx + 1, 0, m, idx);
  out.block(idx, idx, m, m) = trail;
  L = std::move(out);
}

bool chol_append(Eigen::MatrixXd& L, const Eigen::VectorXd& a, double d) {
  const int n = static_cast<int>(L.rows());
  Eigen::VectorXd l = L.triangularView<Eigen::Lower>().solve(a);
  const double rem = d - l.squaredNorm();
  if (rem <= 0.0) return false;
  Eigen::MatrixXd out(n + 1, n + 1);
  out.setZero();
  out.topLeftCorner(n, n) = L;
  out.block(n, 0, 1, n) = l.transpose();
  out(n, n) = std::sqrt(rem);
  L = std::move(out);
  return true;
}

double chol_with_jitter(const Eigen::MatrixXd& A, Eigen::MatrixXd& L,
                        double jitter0, double jitter_max) {
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() == Eigen::Success) {
    L = llt.matrixL();
    return 0.0;
  }
  for (double jitter = jitter0; jitter <= jitter_max * (1.0 + 1e-12); jitter *= 10.0) {
    Eigen::MatrixXd Aj = A;
    Aj.diagonal().array() += jitter;
    llt.compute(Aj);
    if (llt.info() == Eigen::Success) {
      L = llt.matrixL();
      return jitter;
    }
  }
  return -1.0;
}

double eig_max_2x2(const Eigen::Matrix2d& S) {
  const double a = S(0, 0);
  const double c = S(1, 1);
  const double b = 0.5 * (S(0, 1) + S(1, 0));
  const double mean = 0.5 * (a + c);
  const double disc = std::sqrt(0.25 * (a - c) * (a - c) + b * b);
  return mean + disc;
}

void clamp_psd(Eigen::MatrixXd& S) {
  S = 0.5 * (S + S.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  // Reconstructing through the eigenbasis costs a few ulps of accuracy, so
  // leave matrices that are already on the cone untouched.
  if (es.eigenvalues().minCoeff() >= 0.0) return;
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
  S = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  S = 0.5 * (S + S.transpose()).eval();
}

}  // namespace racer::linalg
