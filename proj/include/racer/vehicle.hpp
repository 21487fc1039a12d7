#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>

#include "racer/config.hpp"

namespace racer::vehicle {

inline constexpr int NX = 6;  // X, Y, Phi, vx, vy, omega
inline constexpr int NU = 2;  // p (duty cycle), delta (steering)

using State = Eigen::Matrix<double, NX, 1>;
using Control = Eigen::Matrix<double, NU, 1>;
using StateJacobian = Eigen::Matrix<double, NX, NX>;
using ControlJacobian = Eigen::Matrix<double, NX, NU>;

enum StateIndex { SX = 0, SY, SPHI, SVX, SVY, SOMEGA };
enum ControlIndex { UP = 0, UDELTA };

struct Params {
  double m = 0, Iz = 0, lf = 0, lr = 0;          // chassis
  double Bf = 0, Cf = 0, Df = 0;                 // front tire
  double Br = 0, Cr = 0, Dr = 0;                 // rear tire
  double Cm1 = 0, Cm2 = 0, Cr0 = 0, Cr2 = 0;     // drivetrain + friction
  double delta_max = 0;                          // steering limit [rad]
  double Ts = 0;                                 // sampling time [s]
  double vx_min = 0.05;                          // slip-angle guard [m/s]

  /// Reads a flat parameter file; errors (missing keys, bad values,
  /// invariant violations) accumulate on kv.
  static Params from_kv(config::KV& kv);
};

struct Forces {
  double Ffy = 0;  // front lateral [N]
  double Fry = 0;  // rear lateral [N]
  double Frx = 0;  // longitudinal drive/friction [N]
};

/// Simplified Pacejka lateral tire forces plus DC-motor/friction drive force.
/// vx is clamped to vx_min inside the slip-angle atan arguments only.
/// Throws std::domain_error naming the field if an output is not finite.
Forces tire_and_drive_forces(const State& x, const Control& u, const Params& p);

/// Bicycle-model state derivative.
State continuous_dynamics(const State& x, const Control& u, const Params& p);

/// One Euler-forward step: x + Ts * f_c(x, u).
State discrete_step(const State& x, const Control& u, const Params& p);

/// Analytic Jacobians of discrete_step: A = I + Ts*df/dx, B = Ts*df/du.
void discrete_jacobians(const State& x, const Control& u, const Params& p,
                        StateJacobian& A, ControlJacobian& B);

/// Independently scales every physical coefficient by a uniform factor in
/// [1-magnitude, 1+magnitude]. Ts, delta_max, and vx_min are untouched.
Params perturbed_plant(const Params& nominal, double magnitude, std::uint64_t seed);

struct NoiseSpec {
  Eigen::Vector3d sigma_w = Eigen::Vector3d::Zero();  // per-step variances on vx, vy, omega
};

/// Simulated plant: `substeps` Euler substeps of the true dynamics over one
/// Ts, then additive noise on the velocity states. With substeps = 1 and
/// zero noise this equals discrete_step bit for bit.
State plant_step(const State& x, const Control& u, const Params& true_params,
                 const NoiseSpec& noise, std::mt19937_64& rng, int substeps = 1);

}  // namespace racer::vehicle
