#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "racer/config.hpp"
#include "racer/propagation.hpp"
#include "racer/residual.hpp"
#include "racer/track.hpp"
#include "racer/vehicle.hpp"

namespace racer::mpcc {

struct Config {
  int horizon = 30;
  double q_c = 0.5;      // contouring error weight
  double q_l = 1000.0;   // lag error weight
  double gamma = 3.0;    // progress reward
  Eigen::Matrix2d R_u = (Eigen::Matrix2d() << 0.5, 0, 0, 2.0).finished();
  double R_v = 2.0;
  double q_s = 500.0;    // quadratic slack weight
  double c_s = 100.0;    // linear slack weight (exact penalty)
  int n_tight = 15;
  double chi2_level = 1.0;
  double v_max_step = 0.12;  // per-step progress bound [m]
  double p_min = 0.0, p_max = 1.0;
  double r_min_frac = 0.1;

  /// Reads `mpcc.*` keys, leaving defaults in place for absent ones.
  static Config from_kv(config::KV& kv);
  bool validate(std::string* why) const;
};

/// The transition model the controller rolls out over the horizon.
class MeanDynamics {
 public:
  virtual ~MeanDynamics() = default;
  virtual vehicle::State step(const vehicle::State& x, const vehicle::Control& u) const = 0;
  virtual void jacobians(const vehicle::State& x, const vehicle::Control& u,
                         vehicle::StateJacobian& A, vehicle::ControlJacobian& B) const = 0;
};

/// Nominal vehicle model plus the residual-mean correction: the plant as
/// the controller believes it to be.
class VehicleMeanDynamics final : public MeanDynamics {
 public:
  VehicleMeanDynamics(const vehicle::Params& p, const ResidualModel& r)
      : params_(&p), residual_(&r) {}
  vehicle::State step(const vehicle::State& x, const vehicle::Control& u) const override;
  void jacobians(const vehicle::State& x, const vehicle::Control& u,
                 vehicle::StateJacobian& A, vehicle::ControlJacobian& B) const override;

 private:
  const vehicle::Params* params_;
  const ResidualModel* residual_;
};

/// Frozen per-stage data: the contouring cost linearized at the reference
/// pose, and the tightened corridor disc at the frozen progress.
struct Stage {
  double theta_bar = 0;
  Eigen::Vector3d lin_pose = Eigen::Vector3d::Zero();  // X, Y, theta at linearization
  double ec0 = 0, el0 = 0;
  Eigen::Vector3d grad_ec = Eigen::Vector3d::Zero();
  Eigen::Vector3d grad_el = Eigen::Vector3d::Zero();
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  double radius = 0;  // tightened and floored
  double margin = 0;
};

/// Single-shooting horizon problem over z = (u_0..u_{N-1}, v_0..v_{N-1},
/// s_1..s_N). States are reconstructed through the mean dynamics; the
/// contouring cost is the frozen quadratic model in `stages`.
struct OCP {
  Config cfg;
  vehicle::State x0 = vehicle::State::Zero();
  double theta0 = 0;
  vehicle::Control u_prev = vehicle::Control::Zero();  // applied at the previous step
  double v_prev = 0;
  double delta_max = 0;
  std::vector<Stage> stages;  // stage i in [1, N] stored at [i-1]
  const MeanDynamics* model = nullptr;

  int horizon() const { return cfg.horizon; }
  int nvar() const { return 4 * cfg.horizon; }
  int iu(int i) const { return 2 * i; }
  int iv(int i) const { return 2 * cfg.horizon + i; }
  int is(int i) const { return 3 * cfg.horizon + i - 1; }
  const Stage& stage(int i) const { return stages[i - 1]; }

  Eigen::Vector2d u_at(const Eigen::VectorXd& z, int i) const { return z.segment<2>(iu(i)); }
  double v_at(const Eigen::VectorXd& z, int i) const { return z(iv(i)); }
  double s_at(const Eigen::VectorXd& z, int i) const { return z(is(i)); }

  Eigen::VectorXd lower_bounds() const;
  Eigen::VectorXd upper_bounds() const;
};

/// Linearization/warm-start trajectory: the shifted previous solution, or a
/// stop-down rollout when none exists.
struct Reference {
  std::vector<vehicle::State> states;    // N+1
  std::vector<vehicle::Control> inputs;  // N
  std::vector<double> thetas;            // N+1
  std::vector<double> vs;                // N

  std::vector<propagation::StagePoint> tube_points() const;
};

struct Solution {
  Eigen::VectorXd z;
  std::vector<vehicle::State> states;  // N+1, reconstructed by the solver
  std::vector<double> thetas;          // N+1
  double cost = 0;
};

/// Drops stage 0 of the previous solution and duplicates the last stage;
/// slot 0 is replaced by the fresh measurement.
Reference shift_solution(const Solution& prev, const vehicle::State& x_meas,
                         double theta_meas);

/// Reference for the very first control step: a speed-holding rollout whose
/// progress advances with the body speed. The anchor speed is floored at a
/// gentle roll; a stalled plan both pulls nothing forward and linearizes
/// badly near standstill.
Reference cold_start_reference(const vehicle::Params& p, const vehicle::State& x_meas,
                               double theta_meas, int horizon);

/// Decision vector matching the reference (slacks zero), clamped into the
/// OCP bounds.
Eigen::VectorXd pack_decision(const OCP& ocp, const Reference& ref);

/// Exact (non-quadratized) stage cost with first-order data, the source of
/// the per-stage quadratic model.
struct StageCostEval {
  double value = 0;
  track::ContouringErrors errors;
  Eigen::Vector3d grad_pose = Eigen::Vector3d::Zero();  // d/d(X, Y, theta)
  Eigen::Matrix3d gn_hessian = Eigen::Matrix3d::Zero();
  double grad_v = 0;
  Eigen::Vector2d grad_du = Eigen::Vector2d::Zero();
  double grad_dv = 0;
};
StageCostEval stage_cost(const track::Track& trk, const vehicle::State& x, double theta,
                         double v, const Eigen::Vector2d& du, double dv, const Config& cfg);

/// Freezes centerline data and tightened radii along the reference and
/// quadratizes the contouring cost there. Throws std::invalid_argument on
/// inconsistent horizon lengths.
OCP build_ocp(const vehicle::State& x0, double theta0, const Reference& ref,
              const propagation::VarianceTube& tube, const track::Track& trk,
              const MeanDynamics& model, const vehicle::Params& params,
              const vehicle::Control& u_prev, double v_prev, const Config& cfg);

/// Cost, constraint residuals, and the reconstructed trajectory for a
/// decision vector; the single source of truth shared by solver and tests.
struct Eval {
  double cost = 0;
  std::vector<vehicle::State> states;  // N+1
  std::vector<double> thetas;          // N+1
  Eigen::VectorXd lateral;             // N: ||p_i - c_i|| - radius_i - s_i (<= 0 ok)
  double bound_violation = 0;          // max bound overshoot, 0 when inside
};
Eval evaluate_solution(const OCP& ocp, const Eigen::VectorXd& z);

/// Forward rollout plus the stage Jacobians of the mean dynamics, for the
/// solver's sensitivity propagation.
struct Rollout {
  std::vector<vehicle::State> states;       // N+1
  std::vector<double> thetas;               // N+1
  std::vector<vehicle::StateJacobian> A;    // N
  std::vector<vehicle::ControlJacobian> B;  // N
};
Rollout rollout_with_jacobians(const OCP& ocp, const Eigen::VectorXd& z);

}  // namespace racer::mpcc
