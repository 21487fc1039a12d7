#include "racer/gp_sparse.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "racer/linalg.hpp"

namespace racer::gp {

double scaled_separation(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                         const Hyper& hyper) {
  double best = std::numeric_limits<double>::infinity();
  for (const HyperDim& h : hyper) {
    const double d =
        std::sqrt(((a - b).array().square() / h.length2.array()).sum());
    best = std::min(best, d);
  }
  return best;
}

namespace {

std::vector<int> geometric_indices(int n, int count, double decay) {
  std::vector<int> idx(count);
  if (count == 1) {
    idx[0] = 0;
    return idx;
  }
  const double span = n - 1;
  for (int k = 0; k < count; ++k) {
    double t;
    if (std::abs(decay - 1.0) < 1e-12) {
      t = span * k / (count - 1);
    } else {
      t = span * (std::pow(decay, k) - 1.0) / (std::pow(decay, count - 1) - 1.0);
    }
    idx[k] = static_cast<int>(std::lround(t));
  }
  // Rounding can collide; enforce strict increase within range.
  for (int k = 1; k < count; ++k)
    idx[k] = std::min(std::max(idx[k], idx[k - 1] + 1), n - 1);
  return idx;
}

// Greedy pick of candidate rows in order, skipping rows closer than min_sep
// to anything already accepted; walks forward through unused indices when a
// candidate is rejected.
InducingSet accept_separated(const Eigen::MatrixXd& traj, const std::vector<int>& order,
                             int count, const Hyper& hyper, double min_sep) {
  const int n = static_cast<int>(traj.rows());
  std::vector<bool> considered(n, false);
  InducingSet out;
  std::vector<Eigen::VectorXd> rows;
  auto try_accept = [&](int i) {
    if (considered[i]) return false;
    considered[i] = true;
    for (const auto& r : rows)
      if (scaled_separation(traj.row(i), r, hyper) < min_sep) return false;
    rows.push_back(traj.row(i));
    out.horizon_idx.push_back(i);
    return true;
  };
  for (int k = 0; k < count && static_cast<int>(rows.size()) < count; ++k) {
    const int want = order[std::min<size_t>(k, order.size() - 1)];
    if (try_accept(want)) continue;
    for (int probe = want + 1; probe < n; ++probe)
      if (try_accept(probe)) break;
  }
  out.Z.resize(rows.size(), traj.cols());
  for (size_t i = 0; i < rows.size(); ++i) out.Z.row(i) = rows[i];
  return out;
}

}  // namespace

InducingSet select_inducing(const Eigen::MatrixXd& traj, int count, double decay,
                            const Hyper& hyper, double min_sep) {
  const int n = static_cast<int>(traj.rows());
  if (n < 1 || count < 1) throw std::invalid_argument("select_inducing: empty input");
  count = std::min(count, n);

  InducingSet out =
      accept_separated(traj, geometric_indices(n, count, decay), count, hyper, min_sep);
  if (out.size() < count)
    out = accept_separated(traj, geometric_indices(n, count, 1.0), count, hyper, min_sep);
  return out;  // may hold fewer than count rows when the trajectory degenerates
}

SparseModel SparseModel::build(const Model& parent, InducingSet ind) {
  if (parent.data().size() < 1) throw std::invalid_argument("sparse gp: empty dataset");
  if (ind.size() < 1) throw std::invalid_argument("sparse gp: empty inducing set");
  if (!ind.Z.allFinite()) throw std::invalid_argument("sparse gp: non-finite inducing inputs");
  SparseModel s;
  s.parent_ = &parent;
  s.rebuild_from(std::move(ind));
  return s;
}

void SparseModel::rebuild_from(InducingSet ind) {
  const Model& gp = *parent_;
  const Dataset& ds = gp.data();
  const int m = ds.size();
  const int mt = ind.size();
  const int nd = ds.output_dim();

  dims_.assign(nd, DimCache{});
  for (int d = 0; d < nd; ++d) {
    const HyperDim& h = gp.hyper()[d];
    DimCache& c = dims_[d];

    Eigen::MatrixXd Kuu(mt, mt);
    for (int i = 0; i < mt; ++i) {
      Kuu(i, i) = h.sigma_f2;
      for (int j = 0; j < i; ++j) {
        Kuu(i, j) = kernel_se(ind.Z.row(i), ind.Z.row(j), h);
        Kuu(j, i) = Kuu(i, j);
      }
    }
    c.jitter = linalg::chol_with_jitter(Kuu, c.Luu, 1e-10 * h.sigma_f2, 1e-4 * h.sigma_f2);
    if (c.jitter < 0)
      throw std::runtime_error("sparse gp: inducing covariance not positive definite");

    c.Kuf.resize(mt, m);
    for (int i = 0; i < mt; ++i)
      for (int j = 0; j < m; ++j)
        c.Kuf(i, j) = kernel_se(ind.Z.row(i), ds.Z.row(j), h);

    // Lambda = diag(K_ff - Q_ff) + sigma_n2 I, with Q_ff via the K_uu factor.
    const Eigen::MatrixXd V = c.Luu.triangularView<Eigen::Lower>().solve(c.Kuf);
    c.lambda.resize(m);
    for (int j = 0; j < m; ++j) {
      const double q = V.col(j).squaredNorm();
      c.lambda(j) = std::max(h.sigma_f2 - q + h.sigma_n2, 1e-12 * h.sigma_f2);
    }
  }
  ind_ = std::move(ind);
  if (!assemble_info())
    throw std::runtime_error("sparse gp: information matrix not positive definite");
}

bool SparseModel::assemble_info() {
  const Model& gp = *parent_;
  for (int d = 0; d < gp.data().output_dim(); ++d) {
    const HyperDim& h = gp.hyper()[d];
    DimCache& c = dims_[d];
    const Eigen::MatrixXd Kuu_j = c.Luu * c.Luu.transpose();
    const Eigen::MatrixXd info =
        Kuu_j + c.Kuf * c.lambda.cwiseInverse().asDiagonal() * c.Kuf.transpose();
    if (linalg::chol_with_jitter(info, c.Linfo, 1e-12 * h.sigma_f2, 1e-6 * h.sigma_f2) < 0)
      return false;
    c.w = c.Kuf * gp.data().Y.col(d).cwiseQuotient(c.lambda);
    c.Linfo.triangularView<Eigen::Lower>().solveInPlace(c.w);
    c.Linfo.transpose().triangularView<Eigen::Upper>().solveInPlace(c.w);
  }
  return true;
}

Prediction SparseModel::predict(const Eigen::VectorXd& z) const {
  const Model& gp = *parent_;
  const int mt = ind_.size();
  const int nz = static_cast<int>(ind_.Z.cols());
  const int nd = static_cast<int>(dims_.size());

  Prediction out;
  out.mean.resize(nd);
  out.var.resize(nd);
  out.dmean_dz.resize(nd, nz);
  Eigen::VectorXd ku(mt);
  for (int d = 0; d < nd; ++d) {
    const HyperDim& h = gp.hyper()[d];
    const DimCache& c = dims_[d];
    for (int i = 0; i < mt; ++i) ku(i) = kernel_se(z, ind_.Z.row(i), h);

    out.mean(d) = ku.dot(c.w);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(nz);
    for (int i = 0; i < mt; ++i)
      grad += c.w(i) * ku(i) * (ind_.Z.row(i).transpose() - z).cwiseQuotient(h.length2);
    out.dmean_dz.row(d) = grad.transpose();

    const double qzz = c.Luu.triangularView<Eigen::Lower>().solve(ku).squaredNorm();
    const double szz = c.Linfo.triangularView<Eigen::Lower>().solve(ku).squaredNorm();
    out.var(d) = std::max(h.sigma_f2 - qzz + szz, 1e-18 * h.sigma_f2);
  }
  return out;
}

bool SparseModel::update(int remove_index, const Eigen::VectorXd& add_point,
                         int horizon_idx) {
  const Model& gp = *parent_;
  const Dataset& ds = gp.data();
  const int m = ds.size();
  const int mt = ind_.size();
  if (remove_index < 0 || remove_index >= mt)
    throw std::invalid_argument("sparse gp: remove index out of range");

  InducingSet target = ind_;
  auto erase_row = [](Eigen::MatrixXd& M, int row) {
    const int n = static_cast<int>(M.rows());
    M.block(row, 0, n - 1 - row, M.cols()) = M.block(row + 1, 0, n - 1 - row, M.cols());
    M.conservativeResize(n - 1, Eigen::NoChange);
  };
  erase_row(target.Z, remove_index);
  target.Z.conservativeResize(mt, Eigen::NoChange);
  target.Z.row(mt - 1) = add_point.transpose();
  target.horizon_idx.erase(target.horizon_idx.begin() + remove_index);
  target.horizon_idx.push_back(horizon_idx);

  // Trial caches; committed only if every guard passes.
  std::vector<DimCache> next = dims_;
  for (int d = 0; d < static_cast<int>(dims_.size()); ++d) {
    const HyperDim& h = gp.hyper()[d];
    DimCache& c = next[d];

    // Removal: Lambda_m += (e_i^T K_uu^-1 k_m)^2 / (K_uu^-1)_ii.
    Eigen::VectorXd r = Eigen::VectorXd::Unit(mt, remove_index);
    c.Luu.triangularView<Eigen::Lower>().solveInPlace(r);
    c.Luu.transpose().triangularView<Eigen::Upper>().solveInPlace(r);
    const double pii = r(remove_index);
    if (pii <= 0) {
      rebuild_from(std::move(target));
      ++rebuilds_;
      return false;
    }
    const Eigen::VectorXd t = c.Kuf.transpose() * r;
    c.lambda += t.cwiseAbs2() / pii;

    linalg::chol_delete(c.Luu, remove_index);
    erase_row(c.Kuf, remove_index);

    // Insertion: Schur complement s and Lambda_m -= (k_+m - u^T k_m)^2 / s.
    const int n1 = mt - 1;
    Eigen::VectorXd a(n1), kplus(m);
    for (int i = 0; i < n1; ++i) a(i) = kernel_se(add_point, target.Z.row(i), h);
    for (int j = 0; j < m; ++j) kplus(j) = kernel_se(add_point, ds.Z.row(j), h);
    Eigen::VectorXd u = a;
    c.Luu.triangularView<Eigen::Lower>().solveInPlace(u);
    c.Luu.transpose().triangularView<Eigen::Upper>().solveInPlace(u);
    const double diag = h.sigma_f2 + c.jitter;
    const double schur = diag - a.dot(u);
    if (schur <= 0 || !linalg::chol_append(c.Luu, a, diag)) {
      rebuild_from(std::move(target));
      ++rebuilds_;
      return false;
    }
    const Eigen::VectorXd corr = kplus - c.Kuf.topRows(n1).transpose() * u;
    c.lambda -= corr.cwiseAbs2() / schur;
    if ((c.lambda.array() < 0.5 * h.sigma_n2).any()) {
      rebuild_from(std::move(target));
      ++rebuilds_;
      return false;
    }

    c.Kuf.conservativeResize(mt, Eigen::NoChange);
    c.Kuf.row(mt - 1) = kplus.transpose();
  }

  dims_ = std::move(next);
  ind_ = target;
  if (!assemble_info()) {
    rebuild_from(std::move(target));
    ++rebuilds_;
    return false;
  }
  return true;
}

int SparseModel::refresh(const InducingSet& target, double match_tol) {
  const Hyper& hyper = parent_->hyper();
  const int cur_n = ind_.size();
  if (target.size() != cur_n) {
    rebuild_from(target);
    ++rebuilds_;
    return 0;
  }

  // Greedy matching: a target row represented within match_tol keeps its
  // nearest current row; the rest are swapped in against unmatched rows.
  std::vector<bool> current_used(cur_n, false);
  std::vector<int> to_insert;
  for (int tgt = 0; tgt < target.size(); ++tgt) {
    int best = -1;
    double best_d = match_tol;
    for (int cur = 0; cur < cur_n; ++cur) {
      if (current_used[cur]) continue;
      const double d = scaled_separation(target.Z.row(tgt), ind_.Z.row(cur), hyper);
      if (d <= best_d) {
        best_d = d;
        best = cur;
      }
    }
    if (best >= 0) current_used[best] = true;
    else to_insert.push_back(tgt);
  }

  int swaps = 0;
  for (const int tgt : to_insert) {
    int victim = -1;
    for (int cur = 0; cur < ind_.size(); ++cur)
      if (!current_used[cur]) {
        victim = cur;
        break;
      }
    if (victim < 0) break;
    update(victim, target.Z.row(tgt), target.horizon_idx[tgt]);
    ++swaps;
    // The surviving rows shifted down past the victim; appended row is in use.
    current_used.erase(current_used.begin() + victim);
    current_used.push_back(true);
  }
  return swaps;
}

}  // namespace racer::gp
