#include "racer/vehicle.hpp"

#include <cmath>
#include <stdexcept>

#include "racer/rng.hpp"

namespace racer::vehicle {

Params Params::from_kv(config::KV& kv) {
  Params p;
  p.m = kv.require_double("m");
  p.Iz = kv.require_double("Iz");
  p.lf = kv.require_double("lf");
  p.lr = kv.require_double("lr");
  p.Bf = kv.require_double("Bf");
  p.Cf = kv.require_double("Cf");
  p.Df = kv.require_double("Df");
  p.Br = kv.require_double("Br");
  p.Cr = kv.require_double("Cr");
  p.Dr = kv.require_double("Dr");
  p.Cm1 = kv.require_double("Cm1");
  p.Cm2 = kv.require_double("Cm2");
  p.Cr0 = kv.require_double("Cr0");
  p.Cr2 = kv.require_double("Cr2");
  p.delta_max = kv.require_double("delta_max");
  p.Ts = kv.require_double("Ts");
  p.vx_min = kv.get_double("vx_min", 0.05);

  auto positive = [&](double v, const char* name) {
    if (!(v > 0.0)) kv.add_error(std::string(name) + " must be > 0");
  };
  positive(p.m, "m");
  positive(p.Iz, "Iz");
  positive(p.lf, "lf");
  positive(p.lr, "lr");
  positive(p.Df, "Df");
  positive(p.Dr, "Dr");
  positive(p.delta_max, "delta_max");
  positive(p.Ts, "Ts");
  positive(p.vx_min, "vx_min");
  return p;
}

namespace {

// Slip angles and forces with all partial derivatives needed downstream.
struct ForceDerivs {
  Forces F;
  // dF*/d(af or ar), then the slip-angle partials.
  double dFfy_daf = 0, dFry_dar = 0;
  double daf_dvx = 0, daf_dvy = 0, daf_domega = 0;  // daf_ddelta = 1
  double dar_dvx = 0, dar_dvy = 0, dar_domega = 0;
  double dFrx_dvx = 0, dFrx_dp = 0;
};

ForceDerivs force_derivs(const State& x, const Control& u, const Params& p) {
  const double vx = x(SVX), vy = x(SVY), omega = x(SOMEGA);
  const double duty = u(UP), delta = u(UDELTA);

  const double vxg = std::max(vx, p.vx_min);  // guard inside atan args only
  const double guard_active = (vx > p.vx_min) ? 1.0 : 0.0;

  const double tf = (vy + p.lf * omega) / vxg;
  const double tr = (vy - p.lr * omega) / vxg;
  const double af = delta - std::atan(tf);
  const double ar = -std::atan(tr);

  const double df = 1.0 / (1.0 + tf * tf);  // d atan(tf)/d tf
  const double dr = 1.0 / (1.0 + tr * tr);

  ForceDerivs out;
  const double gf = p.Cf * std::atan(p.Bf * af);
  const double gr = p.Cr * std::atan(p.Br * ar);
  out.F.Ffy = p.Df * std::sin(gf);
  out.F.Fry = p.Dr * std::sin(gr);
  out.F.Frx = (p.Cm1 - p.Cm2 * vx) * duty - p.Cr0 - p.Cr2 * vx * vx;

  out.dFfy_daf = p.Df * std::cos(gf) * p.Cf * p.Bf / (1.0 + p.Bf * p.Bf * af * af);
  out.dFry_dar = p.Dr * std::cos(gr) * p.Cr * p.Br / (1.0 + p.Br * p.Br * ar * ar);

  out.daf_dvx = guard_active * df * tf / vxg;
  out.daf_dvy = -df / vxg;
  out.daf_domega = -df * p.lf / vxg;
  out.dar_dvx = guard_active * dr * tr / vxg;
  out.dar_dvy = -dr / vxg;
  out.dar_domega = dr * p.lr / vxg;

  out.dFrx_dvx = -p.Cm2 * duty - 2.0 * p.Cr2 * vx;
  out.dFrx_dp = p.Cm1 - p.Cm2 * vx;
  return out;
}

}  // namespace

Forces tire_and_drive_forces(const State& x, const Control& u, const Params& p) {
  const Forces F = force_derivs(x, u, p).F;
  if (!std::isfinite(F.Ffy)) throw std::domain_error("tire_and_drive_forces: Ffy is not finite");
  if (!std::isfinite(F.Fry)) throw std::domain_error("tire_and_drive_forces: Fry is not finite");
  if (!std::isfinite(F.Frx)) throw std::domain_error("tire_and_drive_forces: Frx is not finite");
  return F;
}

State continuous_dynamics(const State& x, const Control& u, const Params& p) {
  const Forces F = tire_and_drive_forces(x, u, p);
  const double phi = x(SPHI), vx = x(SVX), vy = x(SVY), omega = x(SOMEGA);
  const double delta = u(UDELTA);
  const double c = std::cos(phi), s = std::sin(phi);

  State f;
  f(SX) = vx * c - vy * s;
  f(SY) = vx * s + vy * c;
  f(SPHI) = omega;
  f(SVX) = (F.Frx - F.Ffy * std::sin(delta) + p.m * vy * omega) / p.m;
  f(SVY) = (F.Fry + F.Ffy * std::cos(delta) - p.m * vx * omega) / p.m;
  f(SOMEGA) = (F.Ffy * p.lf * std::cos(delta) - F.Fry * p.lr) / p.Iz;
  return f;
}

State discrete_step(const State& x, const Control& u, const Params& p) {
  return x + p.Ts * continuous_dynamics(x, u, p);
}

void discrete_jacobians(const State& x, const Control& u, const Params& p,
                        StateJacobian& A, ControlJacobian& B) {
  const ForceDerivs d = force_derivs(x, u, p);
  const double phi = x(SPHI), vx = x(SVX), vy = x(SVY), omega = x(SOMEGA);
  const double delta = u(UDELTA);
  const double c = std::cos(phi), s = std::sin(phi);
  const double cd = std::cos(delta), sd = std::sin(delta);

  // Chain the slip-angle partials through the tire forces.
  const double dFfy_dvx = d.dFfy_daf * d.daf_dvx;
  const double dFfy_dvy = d.dFfy_daf * d.daf_dvy;
  const double dFfy_dw = d.dFfy_daf * d.daf_domega;
  const double dFry_dvx = d.dFry_dar * d.dar_dvx;
  const double dFry_dvy = d.dFry_dar * d.dar_dvy;
  const double dFry_dw = d.dFry_dar * d.dar_domega;

  StateJacobian J = StateJacobian::Zero();  // continuous df/dx
  J(SX, SPHI) = -vx * s - vy * c;
  J(SX, SVX) = c;
  J(SX, SVY) = -s;
  J(SY, SPHI) = vx * c - vy * s;
  J(SY, SVX) = s;
  J(SY, SVY) = c;
  J(SPHI, SOMEGA) = 1.0;

  J(SVX, SVX) = (d.dFrx_dvx - sd * dFfy_dvx) / p.m;
  J(SVX, SVY) = (-sd * dFfy_dvy) / p.m + omega;
  J(SVX, SOMEGA) = (-sd * dFfy_dw) / p.m + vy;

  J(SVY, SVX) = (dFry_dvx + cd * dFfy_dvx) / p.m - omega;
  J(SVY, SVY) = (dFry_dvy + cd * dFfy_dvy) / p.m;
  J(SVY, SOMEGA) = (dFry_dw + cd * dFfy_dw) / p.m - vx;

  J(SOMEGA, SVX) = (p.lf * cd * dFfy_dvx - p.lr * dFry_dvx) / p.Iz;
  J(SOMEGA, SVY) = (p.lf * cd * dFfy_dvy - p.lr * dFry_dvy) / p.Iz;
  J(SOMEGA, SOMEGA) = (p.lf * cd * dFfy_dw - p.lr * dFry_dw) / p.Iz;

  ControlJacobian G = ControlJacobian::Zero();  // continuous df/du
  G(SVX, UP) = d.dFrx_dp / p.m;
  G(SVX, UDELTA) = -(d.dFfy_daf * sd + d.F.Ffy * cd) / p.m;
  G(SVY, UDELTA) = (d.dFfy_daf * cd - d.F.Ffy * sd) / p.m;
  G(SOMEGA, UDELTA) = p.lf * (d.dFfy_daf * cd - d.F.Ffy * sd) / p.Iz;

  A = StateJacobian::Identity() + p.Ts * J;
  B = p.Ts * G;
}

Params perturbed_plant(const Params& nominal, double magnitude, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  Params p = nominal;
  auto scale = [&](double& v) { v *= rng::uniform(g, 1.0 - magnitude, 1.0 + magnitude); };
  scale(p.m);
  scale(p.Iz);
  scale(p.lf);
  scale(p.lr);
  scale(p.Bf);
  scale(p.Cf);
  scale(p.Df);
  scale(p.Br);
  scale(p.Cr);
  scale(p.Dr);
  scale(p.Cm1);
  scale(p.Cm2);
  scale(p.Cr0);
  scale(p.Cr2);
  return p;
}

State plant_step(const State& x, const Control& u, const Params& true_params,
                 const NoiseSpec& noise, std::mt19937_64& rng_state, int substeps) {
  Params sub = true_params;
  sub.Ts = true_params.Ts / substeps;
  State xn = x;
  for (int i = 0; i < substeps; ++i) xn = discrete_step(xn, u, sub);
  for (int i = 0; i < 3; ++i) {
    if (noise.sigma_w(i) > 0.0)
      xn(SVX + i) += std::sqrt(noise.sigma_w(i)) * rng::normal(rng_state);
  }
  return xn;
}

}  // namespace racer::vehicle
