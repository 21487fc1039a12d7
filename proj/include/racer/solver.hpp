#pragma once

#include <Eigen/Dense>

#include <string>
#include <utility>
#include <vector>

#include "racer/mpcc.hpp"

namespace racer::solver {

// Convex quadratic program
//   min  1/2 x'Hx + g'x
//   s.t. Ain x <= bin,  lb <= x <= ub.
// H must be positive definite (a tiny diagonal shift is applied internally if
// a Cholesky factorization fails).  Ain may have zero rows; bound entries may
// be +/-infinity.
struct QP {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  Eigen::MatrixXd Ain;
  Eigen::VectorXd bin;
  Eigen::VectorXd lb;
  Eigen::VectorXd ub;
};

enum class QPStatus {
  kOptimal,       // KKT point found
  kRelaxed,       // start point was infeasible; solved a slack-relaxed problem
  kIterationCap,  // active-set loop hit its iteration limit
};

struct QPResult {
  Eigen::VectorXd x;
  Eigen::VectorXd lambda;  // multipliers for the Ain rows, >= 0
  Eigen::VectorXd mu_lo;   // multipliers for the lower bounds, >= 0
  Eigen::VectorXd mu_hi;   // multipliers for the upper bounds, >= 0
  QPStatus status = QPStatus::kOptimal;
  int iterations = 0;
  double stationarity = 0.0;    // ||Hx + g + Ain'lambda - mu_lo + mu_hi||_inf
  double feasibility = 0.0;     // largest constraint violation at x
  double complementarity = 0.0; // max_i |multiplier_i * residual_i|
  // Row ids of the final working set (internal numbering, stable for a fixed
  // problem shape).  Feed back as warm_rows to seed the next solve.
  std::vector<int> active_rows;
};

// Primal active-set solver.  x0 is clamped into the bounds; if any general row
// is violated at the clamped point, a slack-relaxed problem (one extra elastic
// variable penalized linearly and quadratically) is solved instead and the
// result is flagged kRelaxed.  warm_rows, when given, seeds the working set
// with those rows that are active at the start point.  max_iter <= 0 picks a
// size-based default.
QPResult solve_qp(const QP& qp, const Eigen::VectorXd& x0,
                  const std::vector<int>* warm_rows = nullptr, int max_iter = 0);

enum class SQPStatus { kConverged, kIterationCap };

struct SolveReport {
  SQPStatus status = SQPStatus::kIterationCap;
  int iterations = 0;      // SQP iterations spent
  int qp_iterations = 0;   // total active-set iterations across subproblems
  int qp_relaxed = 0;      // subproblems that needed the elastic relaxation
  double kkt_stationarity = 0.0;
  double kkt_feasibility = 0.0;
  double kkt_complementarity = 0.0;
  double wall_time_s = 0.0;
};

struct SQPOptions {
  double kkt_tol = 1e-6;    // stationarity/feasibility threshold for convergence
  double mu_init = 1e-6;    // initial Levenberg shift added to the Hessian
  double mu_min = 1e-8;
  double mu_max = 1e8;
  double armijo_c1 = 1e-4;
  int max_backtracks = 30;
  std::string trace_path;   // per-iteration CSV dump when nonempty
};

// Sequential quadratic programming over an mpcc::OCP.  Single shooting: the
// decision vector is the OCP's z layout; states are eliminated through the
// rollout, so each subproblem has only the lateral rows plus bounds.  The
// subproblem start point raises the slack entries just enough to be feasible,
// hence Phase-1 is never needed here.  Steps are accepted under an Armijo test
// on the l1 merit; failures inflate the Levenberg shift and retry.  The best
// iterate seen (by feasibility, then cost) is returned even on the cap.
class SQPSolver {
 public:
  explicit SQPSolver(SQPOptions opt = {}) : opt_(std::move(opt)) {}

  std::pair<mpcc::Solution, SolveReport> solve(const mpcc::OCP& ocp,
                                               const Eigen::VectorXd& init,
                                               int max_iter);

  const SQPOptions& options() const { return opt_; }

 private:
  SQPOptions opt_;
  std::vector<int> warm_rows_;  // working set carried across solves
};

// One-shot convenience wrapper around a fresh SQPSolver.
std::pair<mpcc::Solution, SolveReport> solve_sqp(const mpcc::OCP& ocp,
                                                 const Eigen::VectorXd& init,
                                                 int max_iter);

}  // namespace racer::solver
