#include "racer/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "racer/linalg.hpp"
#include "racer/vehicle.hpp"

namespace racer::solver {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Every constraint as a row c'x <= d: general rows first, then the finite
// upper bounds, then the finite lower bounds (negated).  This keeps the
// active-set bookkeeping uniform; the row order is deterministic, so row ids
// are stable warm-start currency for a fixed problem shape.
struct RowSet {
  Eigen::MatrixXd C;
  Eigen::VectorXd d;
  std::vector<int> kind;  // 0 general, 1 upper bound, 2 lower bound
  std::vector<int> ref;   // row id into Ain, or the variable id for bounds
};

RowSet build_rows(const QP& qp) {
  const int n = static_cast<int>(qp.H.rows());
  const int mg = static_cast<int>(qp.Ain.rows());
  int m = mg;
  for (int j = 0; j < n; ++j) {
    if (std::isfinite(qp.ub(j))) ++m;
    if (std::isfinite(qp.lb(j))) ++m;
  }
  RowSet rs;
  rs.C.setZero(m, n);
  rs.d.resize(m);
  rs.kind.reserve(m);
  rs.ref.reserve(m);
  int r = 0;
  for (int i = 0; i < mg; ++i, ++r) {
    rs.C.row(r) = qp.Ain.row(i);
    rs.d(r) = qp.bin(i);
    rs.kind.push_back(0);
    rs.ref.push_back(i);
  }
  for (int j = 0; j < n; ++j) {
    if (!std::isfinite(qp.ub(j))) continue;
    rs.C(r, j) = 1.0;
    rs.d(r) = qp.ub(j);
    rs.kind.push_back(1);
    rs.ref.push_back(j);
    ++r;
  }
  for (int j = 0; j < n; ++j) {
    if (!std::isfinite(qp.lb(j))) continue;
    rs.C(r, j) = -1.0;
    rs.d(r) = -qp.lb(j);
    rs.kind.push_back(2);
    rs.ref.push_back(j);
    ++r;
  }
  return rs;
}

struct CoreOut {
  Eigen::VectorXd x;
  Eigen::VectorXd lambda;  // one per unified row, zero off the working set
  std::vector<int> active;
  int iterations = 0;
  bool hit_cap = false;
};

// Primal active-set iteration over inequality rows only (Nocedal & Wright,
// Alg. 16.3).  x0 must satisfy every row up to round-off.  Equality
// subproblems are solved through one Cholesky factor of H plus an
// incrementally grown/shrunk factor of the working-set Schur complement
// A_W H^{-1} A_W', so a working-set change costs O(n^2) instead of a fresh
// KKT factorization.
CoreOut active_set_core(const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                        const RowSet& rows, const Eigen::VectorXd& x0,
                        const std::vector<int>& warm, int max_iter) {
  const int n = static_cast<int>(H.rows());
  const int m = static_cast<int>(rows.C.rows());

  Eigen::MatrixXd L;
  const double dmax = std::max(H.diagonal().maxCoeff(), 1e-12);
  if (linalg::chol_with_jitter(H, L, 1e-14 * dmax, 1e-2 * dmax) < 0.0)
    throw std::runtime_error("solve_qp: hessian is not positive definite");

  auto fwd = [&L](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    return L.triangularView<Eigen::Lower>().solve(v);
  };
  auto bwd = [&L](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    return L.triangularView<Eigen::Lower>().transpose().solve(v);
  };

  Eigen::VectorXd x = x0;
  std::vector<int> W;
  std::vector<char> in_w(m, 0);
  Eigen::MatrixXd Y(n, 0);   // L^{-1} C_W'
  Eigen::MatrixXd Ls(0, 0);  // Cholesky factor of Y'Y

  auto solve_schur = [&](const Eigen::VectorXd& rhs) -> Eigen::VectorXd {
    const Eigen::VectorXd t = Ls.triangularView<Eigen::Lower>().solve(rhs);
    return Ls.triangularView<Eigen::Lower>().transpose().solve(t);
  };
  auto try_add = [&](int row) -> bool {
    const Eigen::VectorXd y = fwd(rows.C.row(row).transpose());
    const Eigen::VectorXd scol = Y.transpose() * y;
    const double diag = y.squaredNorm();
    if (diag <= 0.0) return false;
    if (!linalg::chol_append(Ls, scol, diag)) return false;
    const int k = static_cast<int>(Ls.rows()) - 1;
    if (Ls(k, k) * Ls(k, k) <= 1e-12 * diag) {
      // numerically dependent on the current working set
      linalg::chol_delete(Ls, k);
      return false;
    }
    Y.conservativeResize(Eigen::NoChange, Y.cols() + 1);
    Y.col(Y.cols() - 1) = y;
    W.push_back(row);
    in_w[row] = 1;
    return true;
  };
  auto drop = [&](int k) {
    linalg::chol_delete(Ls, k);
    const int kc = static_cast<int>(Y.cols());
    for (int c = k; c + 1 < kc; ++c) Y.col(c) = Y.col(c + 1);
    Y.conservativeResize(Eigen::NoChange, kc - 1);
    in_w[W[k]] = 0;
    W.erase(W.begin() + k);
  };

  // Seed from the warm hint; only rows active at x are eligible.
  for (int rowid : warm) {
    if (rowid < 0 || rowid >= m || in_w[rowid]) continue;
    if (static_cast<int>(W.size()) >= n) break;
    const double resid = rows.C.row(rowid).dot(x) - rows.d(rowid);
    if (std::abs(resid) <= 1e-9 * (1.0 + std::abs(rows.d(rowid)))) try_add(rowid);
  }

  Eigen::VectorXd lamW;
  bool optimal = false;
  int stall = 0;
  int it = 0;
  for (; it < max_iter; ++it) {
    const Eigen::VectorXd r = H * x + g;
    Eigen::VectorXd w = r;
    lamW.resize(static_cast<Eigen::Index>(W.size()));
    if (!W.empty()) {
      lamW = -solve_schur(Y.transpose() * fwd(r));
      for (int k = 0; k < static_cast<int>(W.size()); ++k)
        w.noalias() += rows.C.row(W[k]).transpose() * lamW(k);
    }
    const Eigen::VectorXd dvec = -bwd(fwd(w));

    if (dvec.lpNorm<Eigen::Infinity>() <=
        1e-11 * (1.0 + x.lpNorm<Eigen::Infinity>())) {
      // Stationary on the working set: optimal unless a multiplier says a row
      // should leave.
      int worst = -1;
      double worst_val = -1e-10;
      for (Eigen::Index k = 0; k < lamW.size(); ++k) {
        if (lamW(k) < worst_val) {
          worst_val = lamW(k);
          worst = static_cast<int>(k);
        }
      }
      if (worst < 0) {
        optimal = true;
        break;
      }
      drop(worst);
      continue;
    }

    // Ratio test over the rows off the working set.
    double alpha = 1.0;
    int blocker = -1;
    for (int i = 0; i < m; ++i) {
      if (in_w[i]) continue;
      const double ad = rows.C.row(i).dot(dvec);
      if (ad <= 1e-13) continue;
      const double slack = rows.d(i) - rows.C.row(i).dot(x);
      const double ai = std::max(slack, 0.0) / ad;
      if (ai < alpha) {
        alpha = ai;
        blocker = i;
      }
    }
    x += alpha * dvec;
    if (blocker >= 0) {
      if (try_add(blocker)) {
        stall = 0;
      } else if (++stall > 30) {
        break;  // degenerate blocking row; give up with the cap flag
      }
    }
  }

  CoreOut out;
  out.iterations = it;
  out.hit_cap = !optimal;
  out.x = std::move(x);
  out.lambda = Eigen::VectorXd::Zero(m);
  if (!W.empty()) {
    const Eigen::VectorXd lam =
        -solve_schur(Y.transpose() * fwd(H * out.x + g));
    for (int k = 0; k < static_cast<int>(W.size()); ++k)
      out.lambda(W[k]) = std::max(lam(k), 0.0);
  }
  out.active = std::move(W);
  return out;
}

void fill_residuals(const QP& qp, QPResult& r) {
  const int n = static_cast<int>(qp.H.rows());
  const int mg = static_cast<int>(qp.Ain.rows());
  Eigen::VectorXd st = qp.H * r.x + qp.g;
  if (mg > 0) st.noalias() += qp.Ain.transpose() * r.lambda;
  st += r.mu_hi - r.mu_lo;
  r.stationarity = st.lpNorm<Eigen::Infinity>();
  double feas = 0.0;
  double comp = 0.0;
  for (int i = 0; i < mg; ++i) {
    const double resid = qp.Ain.row(i).dot(r.x) - qp.bin(i);
    feas = std::max(feas, resid);
    comp = std::max(comp, std::abs(r.lambda(i) * resid));
  }
  for (int j = 0; j < n; ++j) {
    if (std::isfinite(qp.lb(j))) {
      feas = std::max(feas, qp.lb(j) - r.x(j));
      comp = std::max(comp, std::abs(r.mu_lo(j) * (qp.lb(j) - r.x(j))));
    }
    if (std::isfinite(qp.ub(j))) {
      feas = std::max(feas, r.x(j) - qp.ub(j));
      comp = std::max(comp, std::abs(r.mu_hi(j) * (r.x(j) - qp.ub(j))));
    }
  }
  r.feasibility = feas;
  r.complementarity = comp;
}

}  // namespace

QPResult solve_qp(const QP& qp, const Eigen::VectorXd& x0,
                  const std::vector<int>* warm_rows, int max_iter) {
  const int n = static_cast<int>(qp.H.rows());
  if (qp.H.cols() != n || qp.g.size() != n || qp.lb.size() != n ||
      qp.ub.size() != n)
    throw std::invalid_argument("solve_qp: inconsistent dimensions");
  const int mg = static_cast<int>(qp.Ain.rows());
  if (mg > 0 && (qp.Ain.cols() != n || qp.bin.size() != mg))
    throw std::invalid_argument("solve_qp: inconsistent constraint rows");
  if (x0.size() != n)
    throw std::invalid_argument("solve_qp: start point has wrong size");
  for (int j = 0; j < n; ++j)
    if (!(qp.lb(j) <= qp.ub(j)))
      throw std::invalid_argument("solve_qp: empty bound box");

  Eigen::VectorXd x = x0.cwiseMax(qp.lb).cwiseMin(qp.ub);
  double viol = 0.0;
  for (int i = 0; i < mg; ++i)
    viol = std::max(viol, qp.Ain.row(i).dot(x) - qp.bin(i));

  if (viol > 1e-9) {
    // The start point cannot be repaired through the bounds alone: solve the
    // elastic relaxation with one extra variable t >= 0 absorbing every
    // general row, penalized linearly (big-M) and quadratically.
    QP ext;
    ext.H = Eigen::MatrixXd::Zero(n + 1, n + 1);
    ext.H.topLeftCorner(n, n) = qp.H;
    ext.H(n, n) = 2.0;
    ext.g = Eigen::VectorXd::Zero(n + 1);
    ext.g.head(n) = qp.g;
    ext.g(n) = 1e6 * (1.0 + qp.g.lpNorm<Eigen::Infinity>());
    ext.Ain = Eigen::MatrixXd::Zero(mg, n + 1);
    ext.Ain.leftCols(n) = qp.Ain;
    ext.Ain.col(n).setConstant(-1.0);
    ext.bin = qp.bin;
    ext.lb = Eigen::VectorXd::Constant(n + 1, -kInf);
    ext.lb.head(n) = qp.lb;
    ext.lb(n) = 0.0;
    ext.ub = Eigen::VectorXd::Constant(n + 1, kInf);
    ext.ub.head(n) = qp.ub;
    Eigen::VectorXd x0e(n + 1);
    x0e.head(n) = x;
    x0e(n) = viol + 1.0;
    QPResult sub = solve_qp(ext, x0e, nullptr, max_iter);
    QPResult out;
    out.x = sub.x.head(n);
    out.lambda = std::move(sub.lambda);
    out.mu_lo = sub.mu_lo.head(n);
    out.mu_hi = sub.mu_hi.head(n);
    out.status = QPStatus::kRelaxed;
    out.iterations = sub.iterations;
    fill_residuals(qp, out);  // honest residuals against the original problem
    return out;
  }

  const RowSet rows = build_rows(qp);
  const int m = static_cast<int>(rows.C.rows());
  const int budget = max_iter > 0 ? max_iter : std::max(200, 3 * (n + m));
  static const std::vector<int> kNoWarm;
  CoreOut core =
      active_set_core(qp.H, qp.g, rows, x, warm_rows ? *warm_rows : kNoWarm, budget);

  QPResult out;
  out.x = std::move(core.x);
  out.lambda = Eigen::VectorXd::Zero(mg);
  out.mu_lo = Eigen::VectorXd::Zero(n);
  out.mu_hi = Eigen::VectorXd::Zero(n);
  for (int r = 0; r < m; ++r) {
    const double l = core.lambda(r);
    if (l == 0.0) continue;
    switch (rows.kind[r]) {
      case 0: out.lambda(rows.ref[r]) = l; break;
      case 1: out.mu_hi(rows.ref[r]) = l; break;
      default: out.mu_lo(rows.ref[r]) = l; break;
    }
  }
  out.status = core.hit_cap ? QPStatus::kIterationCap : QPStatus::kOptimal;
  out.iterations = core.iterations;
  out.active_rows = std::move(core.active);
  fill_residuals(qp, out);
  return out;
}

std::pair<mpcc::Solution, SolveReport> SQPSolver::solve(
    const mpcc::OCP& ocp, const Eigen::VectorXd& init, int max_iter) {
  using clock = std::chrono::steady_clock;
  const auto t_start = clock::now();

  const auto& cfg = ocp.cfg;
  const int N = cfg.horizon;
  const int nv = ocp.nvar();
  const int nu = 2 * N;
  if (static_cast<int>(init.size()) != nv)
    throw std::invalid_argument("solve: init has wrong size");
  if (ocp.model == nullptr)
    throw std::invalid_argument("solve: ocp has no transition model");
  if (static_cast<int>(ocp.stages.size()) != N)
    throw std::invalid_argument("solve: ocp stage count mismatch");
  if (max_iter < 1) max_iter = 1;

  const Eigen::VectorXd lb = ocp.lower_bounds();
  const Eigen::VectorXd ub = ocp.upper_bounds();
  Eigen::VectorXd z = init.cwiseMax(lb).cwiseMin(ub);

  std::ofstream trace;
  if (!opt_.trace_path.empty()) {
    trace.open(opt_.trace_path);
    trace << "iter,cost,violation,step,alpha,mu,qp_iterations\n";
  }

  auto viol_of = [](const mpcc::Eval& e) {
    const double lat =
        e.lateral.size() ? std::max(0.0, e.lateral.maxCoeff()) : 0.0;
    return std::max(lat, e.bound_violation);
  };
  auto merit_viol = [](const mpcc::Eval& e) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < e.lateral.size(); ++i)
      s += std::max(0.0, e.lateral(i));
    return s;
  };

  SolveReport rep;
  double mu = opt_.mu_init;
  double rho = 1.0;

  mpcc::Eval ev = mpcc::evaluate_solution(ocp, z);
  Eigen::VectorXd best_z = z;
  double best_cost = ev.cost;
  double best_viol = viol_of(ev);
  // Violations below the KKT tolerance are as good as feasible; among those,
  // cost decides.  Otherwise strictly less violation wins.
  auto consider_best = [&](const Eigen::VectorXd& cand, double cost,
                           double viol) {
    const double va = std::max(viol, opt_.kkt_tol);
    const double vb = std::max(best_viol, opt_.kkt_tol);
    if (va < vb - 1e-15 || (va <= vb + 1e-15 && cost < best_cost)) {
      best_z = cand;
      best_cost = cost;
      best_viol = viol;
    }
  };

  bool converged = false;
  // Multiplier estimates for the corridor rows, carried across iterations to
  // weight their curvature contribution below.
  Eigen::VectorXd lam_corr = Eigen::VectorXd::Zero(N);
  for (int it = 0; it < max_iter; ++it) {
    rep.iterations = it + 1;
    const mpcc::Rollout ro = mpcc::rollout_with_jacobians(ocp, z);

    // Sensitivity of each state w.r.t. the stacked input block.
    std::vector<Eigen::MatrixXd> Su(
        static_cast<size_t>(N) + 1, Eigen::MatrixXd::Zero(vehicle::NX, nu));
    for (int i = 0; i < N; ++i) {
      Su[i + 1].noalias() = ro.A[i] * Su[i];
      Su[i + 1].middleCols(2 * i, 2) += ro.B[i];
    }

    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(nv, nv);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(nv);

    // Rate penalties, progress reward (both exactly quadratic/linear in z).
    for (int i = 0; i < N; ++i) {
      const Eigen::Vector2d du =
          ocp.u_at(z, i) - (i ? ocp.u_at(z, i - 1) : ocp.u_prev);
      const double dv = ocp.v_at(z, i) - (i ? ocp.v_at(z, i - 1) : ocp.v_prev);
      const int a = ocp.iu(i);
      const int av = ocp.iv(i);
      grad.segment<2>(a) += 2.0 * cfg.R_u * du;
      H.block<2, 2>(a, a) += 2.0 * cfg.R_u;
      grad(av) += 2.0 * cfg.R_v * dv - cfg.gamma;
      H(av, av) += 2.0 * cfg.R_v;
      if (i > 0) {
        const int b = ocp.iu(i - 1);
        const int bv = ocp.iv(i - 1);
        grad.segment<2>(b) -= 2.0 * cfg.R_u * du;
        H.block<2, 2>(b, b) += 2.0 * cfg.R_u;
        H.block<2, 2>(a, b) -= 2.0 * cfg.R_u;
        H.block<2, 2>(b, a) -= 2.0 * cfg.R_u;
        grad(bv) -= 2.0 * cfg.R_v * dv;
        H(bv, bv) += 2.0 * cfg.R_v;
        H(av, bv) -= 2.0 * cfg.R_v;
        H(bv, av) -= 2.0 * cfg.R_v;
      }
    }
    for (int i = 1; i <= N; ++i) {
      const int a = ocp.is(i);
      H(a, a) += 2.0 * cfg.q_s;
      grad(a) += 2.0 * cfg.q_s * z(a) + cfg.c_s;
    }

    // Frozen contouring/lag error model: exact gradient through the pose
    // chain, Gauss-Newton curvature.
    Eigen::VectorXd jc = Eigen::VectorXd::Zero(nv);
    Eigen::VectorXd jl = Eigen::VectorXd::Zero(nv);
    for (int i = 1; i <= N; ++i) {
      const mpcc::Stage& st = ocp.stage(i);
      const vehicle::State& xs = ro.states[i];
      const Eigen::Vector3d dpose(xs(vehicle::SX) - st.lin_pose(0),
                                  xs(vehicle::SY) - st.lin_pose(1),
                                  ro.thetas[i] - st.lin_pose(2));
      const double ec = st.ec0 + st.grad_ec.dot(dpose);
      const double el = st.el0 + st.grad_el.dot(dpose);
      jc.setZero();
      jl.setZero();
      jc.head(nu) = (st.grad_ec(0) * Su[i].row(vehicle::SX) +
                     st.grad_ec(1) * Su[i].row(vehicle::SY))
                        .transpose();
      jl.head(nu) = (st.grad_el(0) * Su[i].row(vehicle::SX) +
                     st.grad_el(1) * Su[i].row(vehicle::SY))
                        .transpose();
      for (int j = 0; j < i; ++j) {
        jc(ocp.iv(j)) = st.grad_ec(2);
        jl(ocp.iv(j)) = st.grad_el(2);
      }
      H.noalias() += (2.0 * cfg.q_c) * jc * jc.transpose();
      H.noalias() += (2.0 * cfg.q_l) * jl * jl.transpose();
      grad += (2.0 * cfg.q_c * ec) * jc + (2.0 * cfg.q_l * el) * jl;
    }

    // Linearized lateral rows: a_i' dz <= -g_i(z).
    Eigen::MatrixXd Arows = Eigen::MatrixXd::Zero(N, nv);
    Eigen::VectorXd brhs(N);
    for (int i = 1; i <= N; ++i) {
      const mpcc::Stage& st = ocp.stage(i);
      const Eigen::Vector2d p(ro.states[i](vehicle::SX),
                              ro.states[i](vehicle::SY));
      Eigen::Vector2d nhat = p - st.center;
      nhat /= std::max(nhat.norm(), 1e-9);
      Arows.row(i - 1).head(nu) =
          nhat(0) * Su[i].row(vehicle::SX) + nhat(1) * Su[i].row(vehicle::SY);
      Arows(i - 1, ocp.is(i)) = -1.0;
      brhs(i - 1) = -ev.lateral(i - 1);
      // The Gauss-Newton blocks alone underestimate the curvature along the
      // tangent of an active corridor ball, which makes unit steps overshoot
      // and the line search crawl.  The Lagrangian term of the row restores
      // it, and it is positive semidefinite since the multipliers are
      // nonnegative.
      if (lam_corr(i - 1) > 0.0) {
        const double dist = std::max((p - st.center).norm(), 1e-9);
        const Eigen::Matrix2d tang =
            Eigen::Matrix2d::Identity() - nhat * nhat.transpose();
        Eigen::MatrixXd pos_jac(2, nu);
        pos_jac.row(0) = Su[i].row(vehicle::SX);
        pos_jac.row(1) = Su[i].row(vehicle::SY);
        H.topLeftCorner(nu, nu).noalias() +=
            (lam_corr(i - 1) / dist) * pos_jac.transpose() * tang * pos_jac;
      }
    }

    QP qp;
    qp.H = H;
    qp.H.diagonal().array() += mu;
    qp.g = grad;
    qp.Ain = std::move(Arows);
    qp.bin = std::move(brhs);
    qp.lb = lb - z;
    qp.ub = ub - z;

    // Raising the slack entries makes the subproblem feasible in closed form,
    // so the elastic path never triggers from here.
    Eigen::VectorXd d0 = Eigen::VectorXd::Zero(nv);
    for (int i = 1; i <= N; ++i)
      d0(ocp.is(i)) = std::max(0.0, ev.lateral(i - 1));

    const QPResult qr =
        solve_qp(qp, d0, warm_rows_.empty() ? nullptr : &warm_rows_);
    warm_rows_ = qr.active_rows;
    lam_corr = qr.lambda.head(N);
    rep.qp_iterations += qr.iterations;
    if (qr.status == QPStatus::kRelaxed) ++rep.qp_relaxed;

    const Eigen::VectorXd& dz = qr.x;
    const double feas = viol_of(ev);
    const double stat = (qp.H * dz).lpNorm<Eigen::Infinity>();
    double comp = 0.0;
    for (int i = 0; i < N; ++i)
      comp = std::max(comp, std::abs(qr.lambda(i) * ev.lateral(i)));
    rep.kkt_stationarity = stat;
    rep.kkt_feasibility = feas;
    rep.kkt_complementarity = comp;
    if (stat <= opt_.kkt_tol && feas <= opt_.kkt_tol &&
        qr.status != QPStatus::kRelaxed) {
      converged = true;
      if (trace.is_open())
        trace << it << ',' << ev.cost << ',' << feas << ','
              << dz.lpNorm<Eigen::Infinity>() << ",0," << mu << ','
              << qr.iterations << '\n';
      break;
    }

    // Backtracking line search on the l1 merit.
    rho = std::max(rho, 2.0 * qr.lambda.lpNorm<Eigen::Infinity>() + 1.0);
    const double viol0 = merit_viol(ev);
    const double phi0 = ev.cost + rho * viol0;
    const double dirderiv = grad.dot(dz) - rho * viol0;
    double alpha = 1.0;
    bool accepted = false;
    if (dirderiv < 0.0) {
      for (int bt = 0; bt <= opt_.max_backtracks; ++bt) {
        const Eigen::VectorXd zt = (z + alpha * dz).cwiseMax(lb).cwiseMin(ub);
        mpcc::Eval trial = mpcc::evaluate_solution(ocp, zt);
        const double phi = trial.cost + rho * merit_viol(trial);
        if (phi <= phi0 + opt_.armijo_c1 * alpha * dirderiv) {
          z = zt;
          ev = std::move(trial);
          accepted = true;
          break;
        }
        if (bt == 0) {
          // The unit step was rejected; when curved rows caused it, a
          // minimum-norm correction against their values at the trial point
          // restores feasibility to second order (the classic fix for the
          // Maratos stall).
          std::vector<int> act;
          for (int rid : qr.active_rows)
            if (rid < N) act.push_back(rid);
          for (int i = 0; i < N; ++i)
            if (trial.lateral(i) > 0 &&
                std::find(act.begin(), act.end(), i) == act.end())
              act.push_back(i);
          if (!act.empty()) {
            const int k = static_cast<int>(act.size());
            Eigen::MatrixXd Aact(k, nv);
            Eigen::VectorXd rhs(k);
            for (int a = 0; a < k; ++a) {
              Aact.row(a) = qp.Ain.row(act[a]);
              rhs(a) = -trial.lateral(act[a]);
            }
            // Only the position part of a corridor row is nonlinear; the
            // slack enters linearly and carries a steep linear penalty, so
            // route the correction through the inputs alone.
            for (int i = 1; i <= N; ++i) Aact.col(ocp.is(i)).setZero();
            Eigen::MatrixXd aat = Aact * Aact.transpose();
            aat.diagonal().array() += 1e-12;
            const Eigen::VectorXd dsoc =
                Aact.transpose() * aat.llt().solve(rhs);
            const Eigen::VectorXd zs =
                (z + dz + dsoc).cwiseMax(lb).cwiseMin(ub);
            mpcc::Eval corr = mpcc::evaluate_solution(ocp, zs);
            const double cphi = corr.cost + rho * merit_viol(corr);
            if (cphi <= phi0 + opt_.armijo_c1 * dirderiv) {
              z = zs;
              ev = std::move(corr);
              accepted = true;
              break;
            }
          }
        }
        alpha *= 0.5;
      }
    }
    if (accepted) {
      mu = std::max(mu / 3.0, opt_.mu_min);
      consider_best(z, ev.cost, viol_of(ev));
    } else {
      // No productive direction at this curvature: inflate the Levenberg
      // shift and rebuild the subproblem around the same point.
      mu = std::min(mu * 10.0, opt_.mu_max);
      alpha = 0.0;
    }
    if (trace.is_open())
      trace << it << ',' << ev.cost << ',' << viol_of(ev) << ','
            << dz.lpNorm<Eigen::Infinity>() << ',' << alpha << ',' << mu << ','
            << qr.iterations << '\n';
  }

  const Eigen::VectorXd& zf = converged ? z : best_z;
  const mpcc::Eval evf = mpcc::evaluate_solution(ocp, zf);
  mpcc::Solution sol;
  sol.z = zf;
  sol.states = evf.states;
  sol.thetas = evf.thetas;
  sol.cost = evf.cost;
  rep.status = converged ? SQPStatus::kConverged : SQPStatus::kIterationCap;
  rep.kkt_feasibility = viol_of(evf);
  rep.wall_time_s =
      std::chrono::duration<double>(clock::now() - t_start).count();
  return {std::move(sol), rep};
}

std::pair<mpcc::Solution, SolveReport> solve_sqp(const mpcc::OCP& ocp,
                                                 const Eigen::VectorXd& init,
                                                 int max_iter) {
  SQPSolver s;
  return s.solve(ocp, init, max_iter);
}

}  // namespace racer::solver
