#include "racer/propagation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "racer/linalg.hpp"

namespace racer::propagation {

vehicle::State propagate_mean(const vehicle::Params& p, const vehicle::State& x,
                              const vehicle::Control& u, const ResidualModel& model) {
  return vehicle::discrete_step(x, u, p) + residual_channel() * model.eval(x, u).mean;
}

Eigen::MatrixXd gaussian_step_covariance(const Eigen::MatrixXd& A, const Eigen::MatrixXd& G,
                                         const Eigen::MatrixXd& dmu_dx,
                                         const Eigen::MatrixXd& Sigma_x,
                                         const Eigen::MatrixXd& Sigma_d,
                                         const Eigen::MatrixXd& Sigma_w) {
  const Eigen::MatrixXd M = A + G * dmu_dx;
  Eigen::MatrixXd out = M * Sigma_x * M.transpose() + G * (Sigma_d + Sigma_w) * G.transpose();
  linalg::clamp_psd(out);
  return out;
}

StateCov propagate_variance(const vehicle::Params& p, const vehicle::State& x,
                            const vehicle::Control& u, const StateCov& Sigma_x,
                            const ResidualModel& model, const Eigen::Vector3d& sigma_w) {
  vehicle::StateJacobian A;
  vehicle::ControlJacobian B;
  vehicle::discrete_jacobians(x, u, p, A, B);
  const ResidualEval d = model.eval(x, u);
  return gaussian_step_covariance(A, residual_channel(), d.dmean_dx, Sigma_x,
                                  d.var.asDiagonal(), sigma_w.asDiagonal());
}

Tightening tighten_radius(double r, const Eigen::Matrix2d& sigma_xy, double chi2_level,
                          double r_min_frac) {
  Tightening t;
  t.margin = std::sqrt(chi2_level * std::max(linalg::eig_max_2x2(sigma_xy), 0.0));
  t.radius = std::max(r - t.margin, r_min_frac * r);
  return t;
}

VarianceTube build_variance_tube(const vehicle::Params& p,
                                 const std::vector<StagePoint>& traj,
                                 const ResidualModel& model, const Eigen::Vector3d& sigma_w,
                                 const TubeOptions& opt) {
  if (traj.empty()) throw std::invalid_argument("variance tube: empty trajectory");
  const int n = static_cast<int>(traj.size());
  const Eigen::Vector3d w =
      opt.include_process_noise ? sigma_w : Eigen::Vector3d::Zero().eval();

  VarianceTube tube;
  tube.sigma.resize(n + 1);
  tube.sigma_xy.resize(n + 1);
  tube.margins.assign(n + 1, 0.0);
  tube.sigma[0].setZero();
  for (int i = 0; i < n; ++i)
    tube.sigma[i + 1] = propagate_variance(p, traj[i].x, traj[i].u, tube.sigma[i], model, w);
  for (int i = 0; i <= n; ++i) {
    tube.sigma_xy[i] = tube.sigma[i].topLeftCorner<2, 2>();
    if (i >= 1 && i <= opt.n_tight)
      tube.margins[i] =
          tighten_radius(opt.track_radius, tube.sigma_xy[i], opt.chi2_level).margin;
  }
  return tube;
}

std::vector<StagePoint> braking_rollout(const vehicle::Params& p, const vehicle::State& x0,
                                        int n) {
  std::vector<StagePoint> traj(n);
  vehicle::State x = x0;
  for (int i = 0; i < n; ++i) {
    traj[i].x = x;
    traj[i].u.setZero();
    vehicle::State next = vehicle::discrete_step(x, traj[i].u, p);
    if (next(vehicle::SVX) <= 0.0) {  // the car has stopped: freeze the pose
      next = x;
      next(vehicle::SVX) = 0.0;
      next(vehicle::SVY) = 0.0;
      next(vehicle::SOMEGA) = 0.0;
    }
    x = next;
  }
  return traj;
}

}  // namespace racer::propagation
