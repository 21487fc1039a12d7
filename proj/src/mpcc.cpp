#include "racer/mpcc.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace racer::mpcc {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

Config Config::from_kv(config::KV& kv) {
  Config c;
  c.horizon = kv.get_int("mpcc.horizon", c.horizon);
  c.q_c = kv.get_double("mpcc.q_c", c.q_c);
  c.q_l = kv.get_double("mpcc.q_l", c.q_l);
  c.gamma = kv.get_double("mpcc.gamma", c.gamma);
  const double rup = kv.get_double("mpcc.r_u_p", c.R_u(0, 0));
  const double rud = kv.get_double("mpcc.r_u_delta", c.R_u(1, 1));
  c.R_u << rup, 0, 0, rud;
  c.R_v = kv.get_double("mpcc.r_v", c.R_v);
  c.q_s = kv.get_double("mpcc.q_s", c.q_s);
  c.c_s = kv.get_double("mpcc.c_s", c.c_s);
  c.n_tight = kv.get_int("mpcc.n_tight", c.n_tight);
  c.chi2_level = kv.get_double("mpcc.chi2_level", c.chi2_level);
  c.v_max_step = kv.get_double("mpcc.v_max_step", c.v_max_step);
  c.p_min = kv.get_double("mpcc.p_min", c.p_min);
  c.p_max = kv.get_double("mpcc.p_max", c.p_max);
  c.r_min_frac = kv.get_double("mpcc.r_min_frac", c.r_min_frac);
  std::string why;
  if (!c.validate(&why)) kv.add_error("mpcc config: " + why);
  return c;
}

bool Config::validate(std::string* why) const {
  const auto fail = [why](const char* msg) {
    if (why) *why = msg;
    return false;
  };
  if (horizon < 2) return fail("horizon must be at least 2");
  if (q_c < 0 || q_l < 0 || gamma < 0 || R_v < 0 || q_s < 0)
    return fail("weights must be nonnegative");
  if (R_u(0, 0) < 0 || R_u(1, 1) < 0) return fail("input rate weights must be nonnegative");
  if (c_s <= 0) return fail("linear slack weight must be positive");
  if (n_tight < 1 || n_tight > horizon) return fail("n_tight must lie in [1, horizon]");
  if (chi2_level < 0) return fail("chi2_level must be nonnegative");
  if (v_max_step <= 0) return fail("v_max_step must be positive");
  if (p_min >= p_max) return fail("throttle bounds must be ordered");
  if (r_min_frac < 0 || r_min_frac >= 1) return fail("r_min_frac must lie in [0, 1)");
  return true;
}

vehicle::State VehicleMeanDynamics::step(const vehicle::State& x,
                                         const vehicle::Control& u) const {
  return propagation::propagate_mean(*params_, x, u, *residual_);
}

void VehicleMeanDynamics::jacobians(const vehicle::State& x, const vehicle::Control& u,
                                    vehicle::StateJacobian& A,
                                    vehicle::ControlJacobian& B) const {
  vehicle::discrete_jacobians(x, u, *params_, A, B);
  const ResidualEval d = residual_->eval(x, u);
  const Eigen::Matrix<double, vehicle::NX, ND> bd = residual_channel();
  A += bd * d.dmean_dx;
  B += bd * d.dmean_du;
}

Eigen::VectorXd OCP::lower_bounds() const {
  Eigen::VectorXd lb(nvar());
  for (int i = 0; i < cfg.horizon; ++i) {
    lb(iu(i) + 0) = cfg.p_min;
    lb(iu(i) + 1) = -delta_max;
    lb(iv(i)) = 0;
    lb(is(i + 1)) = 0;
  }
  return lb;
}

Eigen::VectorXd OCP::upper_bounds() const {
  Eigen::VectorXd ub(nvar());
  for (int i = 0; i < cfg.horizon; ++i) {
    ub(iu(i) + 0) = cfg.p_max;
    ub(iu(i) + 1) = delta_max;
    ub(iv(i)) = cfg.v_max_step;
    ub(is(i + 1)) = kInf;
  }
  return ub;
}

std::vector<propagation::StagePoint> Reference::tube_points() const {
  std::vector<propagation::StagePoint> pts(inputs.size());
  for (size_t i = 0; i < inputs.size(); ++i) {
    pts[i].x = states[i];
    pts[i].u = inputs[i];
  }
  return pts;
}

Reference shift_solution(const Solution& prev, const vehicle::State& x_meas,
                         double theta_meas) {
  const int n = static_cast<int>(prev.states.size()) - 1;
  if (n < 2 || static_cast<int>(prev.thetas.size()) != n + 1 || prev.z.size() < 3 * n)
    throw std::invalid_argument("shift: malformed previous solution");
  Reference ref;
  ref.states.resize(n + 1);
  ref.inputs.resize(n);
  ref.thetas.resize(n + 1);
  ref.vs.resize(n);
  ref.states[0] = x_meas;
  ref.thetas[0] = theta_meas;
  for (int i = 1; i <= n; ++i) {
    ref.states[i] = prev.states[std::min(i + 1, n)];
    ref.thetas[i] = prev.thetas[std::min(i + 1, n)];
  }
  for (int i = 0; i < n; ++i) {
    const int j = std::min(i + 1, n - 1);
    ref.inputs[i] = prev.z.segment<2>(2 * j);
    ref.vs[i] = prev.z(2 * n + j);
  }
  return ref;
}

// Anchor speed floor for the first plan. Below roughly 0.7 m/s the yaw
// dynamics linearize with |1 + Ts * dwdot/dw| > 1, so the single-shooting
// sensitivities blow up along the horizon; a stalled anchor also gives the
// progress cost nothing to pull on.
constexpr double kColdStartSpeed = 1.0;  // [m/s]

Reference cold_start_reference(const vehicle::Params& p, const vehicle::State& x_meas,
                               double theta_meas, int horizon) {
  Reference ref;
  ref.states.resize(horizon + 1);
  ref.inputs.resize(horizon);
  ref.thetas.resize(horizon + 1);
  ref.vs.resize(horizon);
  vehicle::State x = x_meas;
  x(vehicle::SVX) = std::max(x(vehicle::SVX), kColdStartSpeed);
  ref.states[0] = x;
  ref.thetas[0] = theta_meas;
  for (int i = 0; i < horizon; ++i) {
    // Throttle that balances the drag at the current speed, so the anchor
    // neither coasts down into the stiff regime nor runs away.
    const double vx = x(vehicle::SVX);
    const double hold =
        (p.Cr0 + p.Cr2 * vx * vx) / std::max(p.Cm1 - p.Cm2 * vx, 1e-9);
    ref.inputs[i] = vehicle::Control(std::clamp(hold, 0.0, 1.0), 0.0);
    ref.vs[i] = p.Ts * vx;
    ref.thetas[i + 1] = ref.thetas[i] + ref.vs[i];
    x = vehicle::discrete_step(x, ref.inputs[i], p);
    x(vehicle::SVX) = std::max(x(vehicle::SVX), kColdStartSpeed);
    ref.states[i + 1] = x;
  }
  return ref;
}

Eigen::VectorXd pack_decision(const OCP& ocp, const Reference& ref) {
  const int n = ocp.horizon();
  if (static_cast<int>(ref.inputs.size()) != n || static_cast<int>(ref.vs.size()) != n)
    throw std::invalid_argument("pack: reference horizon mismatch");
  Eigen::VectorXd z = Eigen::VectorXd::Zero(ocp.nvar());
  for (int i = 0; i < n; ++i) {
    z.segment<2>(ocp.iu(i)) = ref.inputs[i];
    z(ocp.iv(i)) = ref.vs[i];
  }
  const Eigen::VectorXd lb = ocp.lower_bounds();
  const Eigen::VectorXd ub = ocp.upper_bounds();
  return z.cwiseMax(lb).cwiseMin(ub);
}

StageCostEval stage_cost(const track::Track& trk, const vehicle::State& x, double theta,
                         double v, const Eigen::Vector2d& du, double dv, const Config& cfg) {
  StageCostEval out;
  out.errors = trk.contouring_errors(x(vehicle::SX), x(vehicle::SY), theta);
  const double ec = out.errors.ec, el = out.errors.el;
  out.value = cfg.q_c * ec * ec + cfg.q_l * el * el - cfg.gamma * v +
              du.dot(cfg.R_u * du) + cfg.R_v * dv * dv;
  out.grad_pose = 2 * cfg.q_c * ec * out.errors.grad_ec + 2 * cfg.q_l * el * out.errors.grad_el;
  out.gn_hessian = 2 * cfg.q_c * out.errors.grad_ec * out.errors.grad_ec.transpose() +
                   2 * cfg.q_l * out.errors.grad_el * out.errors.grad_el.transpose();
  out.grad_v = -cfg.gamma;
  out.grad_du = 2 * (cfg.R_u * du);
  out.grad_dv = 2 * cfg.R_v * dv;
  return out;
}

OCP build_ocp(const vehicle::State& x0, double theta0, const Reference& ref,
              const propagation::VarianceTube& tube, const track::Track& trk,
              const MeanDynamics& model, const vehicle::Params& params,
              const vehicle::Control& u_prev, double v_prev, const Config& cfg) {
  const int n = cfg.horizon;
  if (static_cast<int>(ref.states.size()) != n + 1 ||
      static_cast<int>(ref.thetas.size()) != n + 1 ||
      static_cast<int>(tube.margins.size()) != n + 1)
    throw std::invalid_argument("ocp: horizon mismatch between reference, tube, and config");

  OCP ocp;
  ocp.cfg = cfg;
  ocp.x0 = x0;
  ocp.theta0 = theta0;
  ocp.u_prev = u_prev;
  ocp.v_prev = v_prev;
  ocp.delta_max = params.delta_max;
  ocp.model = &model;
  ocp.stages.resize(n);
  const double r = trk.half_width();
  for (int i = 1; i <= n; ++i) {
    Stage& st = ocp.stages[i - 1];
    st.theta_bar = ref.thetas[i];
    st.lin_pose << ref.states[i](vehicle::SX), ref.states[i](vehicle::SY), ref.thetas[i];
    const track::ContouringErrors ce =
        trk.contouring_errors(st.lin_pose(0), st.lin_pose(1), st.theta_bar);
    st.ec0 = ce.ec;
    st.el0 = ce.el;
    st.grad_ec = ce.grad_ec;
    st.grad_el = ce.grad_el;
    const track::CenterlinePose pose = trk.eval(st.theta_bar);
    st.center << pose.Xc, pose.Yc;
    st.margin = tube.margins[i];
    st.radius = std::max(r - st.margin, cfg.r_min_frac * r);
    if (!st.lin_pose.allFinite() || !std::isfinite(st.radius))
      throw std::invalid_argument("ocp: non-finite frozen stage data");
  }
  return ocp;
}

Eval evaluate_solution(const OCP& ocp, const Eigen::VectorXd& z) {
  const int n = ocp.horizon();
  if (z.size() != ocp.nvar()) throw std::invalid_argument("evaluate: dimension mismatch");

  Eval ev;
  ev.states.resize(n + 1);
  ev.thetas.resize(n + 1);
  ev.lateral.resize(n);
  ev.states[0] = ocp.x0;
  ev.thetas[0] = ocp.theta0;
  for (int i = 0; i < n; ++i) {
    ev.states[i + 1] = ocp.model->step(ev.states[i], ocp.u_at(z, i));
    ev.thetas[i + 1] = ev.thetas[i] + ocp.v_at(z, i);
  }

  double cost = 0;
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector2d u = ocp.u_at(z, i);
    const Eigen::Vector2d du = u - (i == 0 ? ocp.u_prev : Eigen::Vector2d(ocp.u_at(z, i - 1)));
    const double dv = ocp.v_at(z, i) - (i == 0 ? ocp.v_prev : ocp.v_at(z, i - 1));
    cost += -ocp.cfg.gamma * ocp.v_at(z, i) + du.dot(ocp.cfg.R_u * du) +
            ocp.cfg.R_v * dv * dv;
  }
  for (int i = 1; i <= n; ++i) {
    const Stage& st = ocp.stage(i);
    Eigen::Vector3d pose;
    pose << ev.states[i](vehicle::SX), ev.states[i](vehicle::SY), ev.thetas[i];
    const Eigen::Vector3d d = pose - st.lin_pose;
    const double ec = st.ec0 + st.grad_ec.dot(d);
    const double el = st.el0 + st.grad_el.dot(d);
    const double s = ocp.s_at(z, i);
    cost += ocp.cfg.q_c * ec * ec + ocp.cfg.q_l * el * el + ocp.cfg.q_s * s * s +
            ocp.cfg.c_s * s;
    ev.lateral(i - 1) = (pose.head<2>() - st.center).norm() - st.radius - s;
  }
  ev.cost = cost;

  const Eigen::VectorXd lb = ocp.lower_bounds();
  const Eigen::VectorXd ub = ocp.upper_bounds();
  double bv = 0;
  for (int j = 0; j < z.size(); ++j) {
    bv = std::max(bv, lb(j) - z(j));
    if (std::isfinite(ub(j))) bv = std::max(bv, z(j) - ub(j));
  }
  ev.bound_violation = bv;
  return ev;
}

Rollout rollout_with_jacobians(const OCP& ocp, const Eigen::VectorXd& z) {
  const int n = ocp.horizon();
  Rollout r;
  r.states.resize(n + 1);
  r.thetas.resize(n + 1);
  r.A.resize(n);
  r.B.resize(n);
  r.states[0] = ocp.x0;
  r.thetas[0] = ocp.theta0;
  for (int i = 0; i < n; ++i) {
    const vehicle::Control u = ocp.u_at(z, i);
    ocp.model->jacobians(r.states[i], u, r.A[i], r.B[i]);
    r.states[i + 1] = ocp.model->step(r.states[i], u);
    r.thetas[i + 1] = r.thetas[i] + ocp.v_at(z, i);
  }
  return r;
}

}  // namespace racer::mpcc
