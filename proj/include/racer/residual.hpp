#pragma once

#include <Eigen/Dense>

#include "racer/gp.hpp"
#include "racer/gp_sparse.hpp"
#include "racer/vehicle.hpp"

namespace racer {

inline constexpr int ND = 3;               // residual acts on vx, vy, omega
inline constexpr int NZ = vehicle::NX + vehicle::NU;  // regressor [x; u]

/// Channel matrix B_d routing the residual (and process noise) into the
/// velocity states.
inline Eigen::Matrix<double, vehicle::NX, ND> residual_channel() {
  Eigen::Matrix<double, vehicle::NX, ND> b = Eigen::Matrix<double, vehicle::NX, ND>::Zero();
  b(vehicle::SVX, 0) = 1;
  b(vehicle::SVY, 1) = 1;
  b(vehicle::SOMEGA, 2) = 1;
  return b;
}

inline Eigen::Matrix<double, NZ, 1> regressor(const vehicle::State& x,
                                              const vehicle::Control& u) {
  Eigen::Matrix<double, NZ, 1> z;
  z << x, u;
  return z;
}

struct ResidualEval {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  Eigen::Vector3d var = Eigen::Vector3d::Zero();  // diagonal covariance
  Eigen::Matrix<double, ND, vehicle::NX> dmean_dx =
      Eigen::Matrix<double, ND, vehicle::NX>::Zero();
  Eigen::Matrix<double, ND, vehicle::NU> dmean_du =
      Eigen::Matrix<double, ND, vehicle::NU>::Zero();
};

/// What the controller believes about the gap between its nominal model and
/// the plant, as a distribution over velocity-state corrections.
class ResidualModel {
 public:
  virtual ~ResidualModel() = default;
  virtual ResidualEval eval(const vehicle::State& x, const vehicle::Control& u) const = 0;
};

/// Nominal-model controller: no correction, no model uncertainty.
class ZeroResidual final : public ResidualModel {
 public:
  ResidualEval eval(const vehicle::State&, const vehicle::Control&) const override {
    return {};
  }
};

namespace detail {
inline ResidualEval from_prediction(const gp::Prediction& p) {
  ResidualEval e;
  e.mean = p.mean;
  e.var = p.var;
  e.dmean_dx = p.dmean_dz.leftCols(vehicle::NX);
  e.dmean_du = p.dmean_dz.rightCols(vehicle::NU);
  return e;
}
}  // namespace detail

class GpResidual final : public ResidualModel {
 public:
  explicit GpResidual(const gp::Model& m) : model_(&m) {}
  ResidualEval eval(const vehicle::State& x, const vehicle::Control& u) const override {
    return detail::from_prediction(model_->predict(regressor(x, u)));
  }

 private:
  const gp::Model* model_;
};

class SparseGpResidual final : public ResidualModel {
 public:
  explicit SparseGpResidual(const gp::SparseModel& m) : model_(&m) {}
  ResidualEval eval(const vehicle::State& x, const vehicle::Control& u) const override {
    return detail::from_prediction(model_->predict(regressor(x, u)));
  }

 private:
  const gp::SparseModel* model_;
};

}  // namespace racer
