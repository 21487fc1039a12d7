#pragma once

#include <Eigen/Dense>
#include <vector>

#include "racer/residual.hpp"
#include "racer/vehicle.hpp"

namespace racer::propagation {

using StateCov = Eigen::Matrix<double, vehicle::NX, vehicle::NX>;

/// One stage of a reference trajectory used for linearization.
struct StagePoint {
  vehicle::State x = vehicle::State::Zero();
  vehicle::Control u = vehicle::Control::Zero();
};

/// Mean of the one-step-ahead state: nominal step plus the believed
/// correction routed through the residual channel.
vehicle::State propagate_mean(const vehicle::Params& p, const vehicle::State& x,
                              const vehicle::Control& u, const ResidualModel& model);

/// First-order covariance step for x+ = f(x) + G (d(x) + w) with x ~ N(mu,
/// Sigma_x), d evaluated at the mean with diagonal-free covariance Sigma_d
/// and gradient dmu_dx, and independent noise w ~ N(0, Sigma_w):
///   Sigma+ = (A + G dmu_dx) Sigma_x (A + G dmu_dx)^T + G (Sigma_d + Sigma_w) G^T,
/// symmetrized and clamped onto the PSD cone.
Eigen::MatrixXd gaussian_step_covariance(const Eigen::MatrixXd& A, const Eigen::MatrixXd& G,
                                         const Eigen::MatrixXd& dmu_dx,
                                         const Eigen::MatrixXd& Sigma_x,
                                         const Eigen::MatrixXd& Sigma_d,
                                         const Eigen::MatrixXd& Sigma_w);

/// Vehicle wrapper around gaussian_step_covariance using the analytic
/// discrete Jacobian and the residual model's belief at (x, u). sigma_w is
/// the per-step process noise variance on the velocity states; passing zero
/// drops the noise term.
StateCov propagate_variance(const vehicle::Params& p, const vehicle::State& x,
                            const vehicle::Control& u, const StateCov& Sigma_x,
                            const ResidualModel& model, const Eigen::Vector3d& sigma_w);

struct Tightening {
  double margin = 0;
  double radius = 0;
};

/// Constraint margin that makes a ball constraint hold with the confidence
/// encoded by chi2_level: margin = sqrt(chi2_level * lambda_max(sigma_xy)),
/// with the tightened radius floored at r_min_frac * r so the corridor can
/// never close completely.
Tightening tighten_radius(double r, const Eigen::Matrix2d& sigma_xy, double chi2_level,
                          double r_min_frac = 0.1);

struct TubeOptions {
  double chi2_level = 1.0;
  int n_tight = 15;                  // stages 1..n_tight get a margin, rest zero
  bool include_process_noise = true;
  double track_radius = 0;           // half-width used for the margin/radius pair
};

/// Time-varying uncertainty envelope along a fixed reference trajectory:
/// sigma[0] = 0 (the current state is measured), then the covariance
/// recursion evaluated at each (x_i, u_i). margins[i] carries the position
/// tightening for stage i; zero for i = 0 and for i > n_tight.
struct VarianceTube {
  std::vector<StateCov> sigma;             // N+1 entries
  std::vector<Eigen::Matrix2d> sigma_xy;   // N+1 position marginals
  std::vector<double> margins;             // N+1
};

VarianceTube build_variance_tube(const vehicle::Params& p,
                                 const std::vector<StagePoint>& traj,
                                 const ResidualModel& model, const Eigen::Vector3d& sigma_w,
                                 const TubeOptions& opt);

/// Coast-down of the nominal model from x0 under zero inputs, with forward
/// speed clamped at zero so drag cannot drive the model backwards. Supplies
/// a linearization trajectory when no previous solution exists.
std::vector<StagePoint> braking_rollout(const vehicle::Params& p, const vehicle::State& x0,
                                        int n);

}  // namespace racer::propagation
