#pragma once

#include <Eigen/Dense>
#include <vector>

#include "racer/gp.hpp"

namespace racer::gp {

struct InducingSet {
  Eigen::MatrixXd Z;             // count x nz inducing inputs
  std::vector<int> horizon_idx;  // source position of each row along the horizon

  int size() const { return static_cast<int>(Z.rows()); }
};

/// Smallest per-output-dimension distance in length-scale-normalized input
/// space; the conditioning metric for inducing-point separation.
double scaled_separation(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                         const Hyper& hyper);

/// Picks `count` rows of traj (N x nz) at indices spaced geometrically by
/// `decay` from index 0, deduplicated against min_sep (falling back to
/// uniform spacing, then to fewer points, when candidates run out).
InducingSet select_inducing(const Eigen::MatrixXd& traj, int count, double decay,
                            const Hyper& hyper, double min_sep);

/// FITC approximation of a fitted GP on an inducing set, with caches that
/// make prediction cost independent of the training set size. Copyable;
/// copies act as immutable snapshots.
class SparseModel {
 public:
  /// Assembles Lambda = diag(K_ff - Q_ff) + sigma_n2*I and the stabilized
  /// information matrix K_uu + K_uf Lambda^-1 K_fu per output dimension.
  /// The parent must outlive every snapshot. Throws std::runtime_error if
  /// K_uu stays indefinite at max jitter.
  static SparseModel build(const Model& parent, InducingSet ind);

  Prediction predict(const Eigen::VectorXd& z) const;

  /// Replaces inducing row remove_index with add_point (appended last).
  /// chol(K_uu) moves by one rank-1 delete and one append; Lambda by exact
  /// scalar corrections; the small information factor is reassembled.
  /// Returns false when a positivity guard forced a from-scratch rebuild
  /// (equivalent result, logged via rebuild_count).
  bool update(int remove_index, const Eigen::VectorXd& add_point, int horizon_idx);

  /// Moves the inducing set toward the target: rows already represented
  /// within match_tol (scaled space) are kept, the rest swapped in against
  /// the least-matching current rows. Returns the number of swaps applied.
  int refresh(const InducingSet& target, double match_tol);

  const InducingSet& inducing() const { return ind_; }
  const Model& parent() const { return *parent_; }
  int rebuild_count() const { return rebuilds_; }

  // Cached factors, exposed for equivalence checks.
  const Eigen::MatrixXd& chol_kuu(int dim) const { return dims_[dim].Luu; }
  const Eigen::MatrixXd& chol_info(int dim) const { return dims_[dim].Linfo; }
  const Eigen::VectorXd& lambda(int dim) const { return dims_[dim].lambda; }
  const Eigen::VectorXd& mean_weights(int dim) const { return dims_[dim].w; }

 private:
  struct DimCache {
    Eigen::MatrixXd Luu;     // chol(K_uu + jitter*I)
    Eigen::MatrixXd Linfo;   // chol(K_uu + jitter*I + K_uf Lambda^-1 K_fu)
    Eigen::MatrixXd Kuf;     // count x M cross-covariances
    Eigen::VectorXd lambda;  // M
    Eigen::VectorXd w;       // info^-1 K_uf Lambda^-1 y  (mean weights)
    double jitter = 0;
  };

  void rebuild_from(InducingSet ind);
  bool assemble_info();  // Linfo and w from Luu/Kuf/lambda; false on failure

  const Model* parent_ = nullptr;
  InducingSet ind_;
  std::vector<DimCache> dims_;
  int rebuilds_ = 0;
};

}  // namespace racer::gp
