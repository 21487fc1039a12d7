#pragma once

#include <Eigen/Dense>

namespace racer::linalg {

/// In-place rank-1 update of a lower Cholesky factor: L L^T + x x^T.
/// x is destroyed.
void chol_update(Eigen::MatrixXd& L, Eigen::VectorXd& x);

/// In-place rank-1 downdate of a lower Cholesky factor: L L^T - x x^T.
/// Returns false (factor left in an unusable state) if the downdated
/// matrix is not positive definite. x is destroyed.
bool chol_downdate(Eigen::MatrixXd& L, Eigen::VectorXd& x);

/// Removes row/column idx from the matrix factored by L. The trailing
/// block is repaired with one rank-1 update. L shrinks by one.
void chol_delete(Eigen::MatrixXd& L, int idx);

/// Appends one row/column to the matrix factored by L.  a holds the new
/// off-diagonal column (length n), d the new diagonal entry.  Returns
/// false if the bordered matrix is not positive definite.
bool chol_append(Eigen::MatrixXd& L, const Eigen::VectorXd& a, double d);

/// Cholesky with escalating jitter: tries A + jitter*I with jitter
/// starting at jitter0 and growing tenfold up to jitter_max.  Returns the
/// jitter actually used, or a negative value on failure.
double chol_with_jitter(const Eigen::MatrixXd& A, Eigen::MatrixXd& L,
                        double jitter0, double jitter_max);

/// Largest eigenvalue of a symmetric 2x2 matrix, closed form.
double eig_max_2x2(const Eigen::Matrix2d& S);

/// Symmetrizes and clamps negative eigenvalues of a symmetric matrix to
/// zero (projection onto the PSD cone).
void clamp_psd(Eigen::MatrixXd& S);

}  // namespace racer::linalg
