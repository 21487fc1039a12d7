#include "doctest.h"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "racer/gp.hpp"
#include "racer/mpcc.hpp"
#include "racer/residual.hpp"
#include "racer/rng.hpp"
#include "racer/track.hpp"
#include "test_helpers.hpp"

using Eigen::Vector2d;
using Eigen::Vector3d;
using Eigen::VectorXd;
using racer::track::Track;

namespace mpcc = racer::mpcc;
namespace vehicle = racer::vehicle;
namespace propagation = racer::propagation;
namespace gp = racer::gp;

namespace {

Track demo_track() {
  racer::config::KV kv =
      racer::config::KV::parse_file(testutil::source_path("config/track.cfg"));
  auto trk = Track::from_kv(kv);
  REQUIRE(kv.ok());
  REQUIRE(trk.has_value());
  return *trk;
}

// State sitting on the centerline at progress theta, heading along the
// tangent, rolling forward at vx.
vehicle::State centerline_state(const Track& trk, double theta, double vx) {
  const racer::track::CenterlinePose p = trk.eval(theta);
  vehicle::State x = vehicle::State::Zero();
  x(vehicle::SX) = p.Xc;
  x(vehicle::SY) = p.Yc;
  x(vehicle::SPHI) = p.Phic;
  x(vehicle::SVX) = vx;
  return x;
}

propagation::VarianceTube zero_tube(int n) {
  propagation::VarianceTube t;
  t.sigma.assign(n + 1, propagation::StateCov::Zero());
  t.sigma_xy.assign(n + 1, Eigen::Matrix2d::Zero());
  t.margins.assign(n + 1, 0.0);
  return t;
}

// Reference produced by actually rolling the model, so the linearization
// points coincide with the rollout of the packed decision vector.
mpcc::Reference rolled_reference(const mpcc::MeanDynamics& model,
                                 const vehicle::State& x0, double theta0,
                                 const std::vector<vehicle::Control>& us,
                                 const std::vector<double>& vs) {
  const int n = static_cast<int>(us.size());
  mpcc::Reference ref;
  ref.states.resize(n + 1);
  ref.inputs = us;
  ref.thetas.resize(n + 1);
  ref.vs = vs;
  ref.states[0] = x0;
  ref.thetas[0] = theta0;
  for (int i = 0; i < n; ++i) {
    ref.states[i + 1] = model.step(ref.states[i], us[i]);
    ref.thetas[i + 1] = ref.thetas[i] + vs[i];
  }
  return ref;
}

}  // namespace

TEST_CASE("controller config reads overrides and rejects bad values") {
  mpcc::Config def;
  std::string why;
  CHECK(def.validate(&why));

  racer::config::KV kv = racer::config::KV::parse_string(
      "mpcc.horizon = 12\n"
      "mpcc.q_c = 7.5\n"
      "mpcc.r_u_delta = 4.0\n"
      "mpcc.n_tight = 6\n",
      "inline");
  const mpcc::Config c = mpcc::Config::from_kv(kv);
  CHECK(kv.ok());
  CHECK(c.horizon == 12);
  CHECK(c.q_c == 7.5);
  CHECK(c.R_u(1, 1) == 4.0);
  CHECK(c.R_u(0, 0) == def.R_u(0, 0));
  CHECK(c.n_tight == 6);
  CHECK(c.q_l == def.q_l);

  auto rejects = [](auto&& tweak) {
    mpcc::Config bad;
    tweak(bad);
    std::string msg;
    return !bad.validate(&msg) && !msg.empty();
  };
  CHECK(rejects([](mpcc::Config& c2) { c2.horizon = 1; }));
  CHECK(rejects([](mpcc::Config& c2) { c2.q_c = -1; }));
  CHECK(rejects([](mpcc::Config& c2) { c2.c_s = 0; }));
  CHECK(rejects([](mpcc::Config& c2) { c2.n_tight = 0; }));
  CHECK(rejects([](mpcc::Config& c2) { c2.n_tight = c2.horizon + 1; }));
  CHECK(rejects([](mpcc::Config& c2) { c2.v_max_step = 0; }));
  CHECK(rejects([](mpcc::Config& c2) { c2.p_min = c2.p_max; }));
  CHECK(rejects([](mpcc::Config& c2) { c2.r_min_frac = 1.0; }));

  racer::config::KV bad_kv =
      racer::config::KV::parse_string("mpcc.horizon = 1\n", "inline");
  (void)mpcc::Config::from_kv(bad_kv);
  CHECK(!bad_kv.ok());
}

TEST_CASE("stage cost vanishes on the centerline at constant inputs") {
  const Track trk = demo_track();
  const mpcc::Config cfg;
  const vehicle::State x = centerline_state(trk, 0.7, 1.2);
  const auto e = mpcc::stage_cost(trk, x, 0.7, 0.0, Vector2d::Zero(), 0.0, cfg);
  CHECK(std::abs(e.errors.ec) < 1e-9);
  CHECK(std::abs(e.errors.el) < 1e-9);
  CHECK(std::abs(e.value) < 1e-12);
  CHECK(e.grad_v == -cfg.gamma);
}

TEST_CASE("stage cost isolates progress, input rate, and slack-free terms") {
  const Track trk = demo_track();
  mpcc::Config cfg;
  cfg.gamma = 3.5;
  const vehicle::State x = centerline_state(trk, 1.1, 0.8);

  const auto base = mpcc::stage_cost(trk, x, 1.1, 0.0, Vector2d::Zero(), 0.0, cfg);
  const auto prog = mpcc::stage_cost(trk, x, 1.1, 0.08, Vector2d::Zero(), 0.0, cfg);
  CHECK(prog.value - base.value == doctest::Approx(-3.5 * 0.08).epsilon(1e-12));

  const Vector2d du(0.2, -0.05);
  const double dv = 0.03;
  const auto rate = mpcc::stage_cost(trk, x, 1.1, 0.0, du, dv, cfg);
  const double expect = du.dot(cfg.R_u * du) + cfg.R_v * dv * dv;
  CHECK(rate.value - base.value == doctest::Approx(expect).epsilon(1e-12));
  CHECK((rate.grad_du - 2.0 * cfg.R_u * du).norm() < 1e-14);
  CHECK(rate.grad_dv == doctest::Approx(2.0 * cfg.R_v * dv).epsilon(1e-12));
}

TEST_CASE("stage cost pose gradient matches finite differences") {
  const Track trk = demo_track();
  mpcc::Config cfg;
  cfg.q_c = 12.0;
  cfg.q_l = 300.0;
  vehicle::State x = centerline_state(trk, 1.3, 1.0);
  x(vehicle::SX) += 0.05;
  x(vehicle::SY) -= 0.03;
  const double theta = 1.3;

  const auto e = mpcc::stage_cost(trk, x, theta, 0.0, Vector2d::Zero(), 0.0, cfg);
  const double h = 1e-6;
  auto value_at = [&](double dx, double dy, double dth) {
    vehicle::State xp = x;
    xp(vehicle::SX) += dx;
    xp(vehicle::SY) += dy;
    return mpcc::stage_cost(trk, xp, theta + dth, 0.0, Vector2d::Zero(), 0.0, cfg).value;
  };
  const Vector3d fd((value_at(h, 0, 0) - value_at(-h, 0, 0)) / (2 * h),
                    (value_at(0, h, 0) - value_at(0, -h, 0)) / (2 * h),
                    (value_at(0, 0, h) - value_at(0, 0, -h)) / (2 * h));
  for (int k = 0; k < 3; ++k)
    CHECK(e.grad_pose(k) ==
          doctest::Approx(fd(k)).epsilon(1e-5).scale(1.0 + std::abs(fd(k))));
}

TEST_CASE("curvature model is exact on a straightaway") {
  // On a straight centerline the contouring errors are linear in the pose, so
  // the rank-two curvature of the squared errors is the full Hessian.
  std::vector<Vector2d> pts;
  for (int i = 0; i < 7; ++i) pts.push_back({1.5 * i, 0.0});
  const Track trk = Track::build(pts, 0.2, false);
  mpcc::Config cfg;
  cfg.q_c = 4.0;
  cfg.q_l = 9.0;
  vehicle::State x = vehicle::State::Zero();
  x(vehicle::SX) = 3.1;
  x(vehicle::SY) = 0.07;
  const double theta = 2.9;

  const auto e = mpcc::stage_cost(trk, x, theta, 0.0, Vector2d::Zero(), 0.0, cfg);
  auto value_at = [&](const Vector3d& d) {
    vehicle::State xp = x;
    xp(vehicle::SX) += d(0);
    xp(vehicle::SY) += d(1);
    return mpcc::stage_cost(trk, xp, theta + d(2), 0.0, Vector2d::Zero(), 0.0, cfg).value;
  };
  const double h = 1e-4;
  Eigen::Matrix3d fd;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      Vector3d da = Vector3d::Zero(), db = Vector3d::Zero();
      da(a) = h;
      db(b) = h;
      fd(a, b) = (value_at(da + db) - value_at(da - db) - value_at(db - da) +
                  value_at(-da - db)) /
                 (4 * h * h);
    }
  }
  CHECK((e.gn_hessian - fd).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("reference shift drops the first stage and duplicates the tail") {
  const int n = 4;
  mpcc::Solution prev;
  prev.z = VectorXd::Zero(4 * n);
  for (int j = 0; j < n; ++j) {
    prev.z(2 * j) = 0.1 * (j + 1);
    prev.z(2 * j + 1) = -0.01 * (j + 1);
    prev.z(2 * n + j) = 0.02 * (j + 1);
  }
  prev.states.resize(n + 1);
  prev.thetas.resize(n + 1);
  for (int i = 0; i <= n; ++i) {
    prev.states[i] = vehicle::State::Constant(i);
    prev.thetas[i] = 0.5 * i;
  }
  const vehicle::State meas = vehicle::State::Constant(-7.0);

  const mpcc::Reference ref = mpcc::shift_solution(prev, meas, 42.0);
  REQUIRE(ref.states.size() == n + 1);
  REQUIRE(ref.inputs.size() == n);
  CHECK((ref.states[0] - meas).norm() == 0.0);
  CHECK(ref.thetas[0] == 42.0);
  for (int i = 1; i <= n; ++i) {
    const int src = std::min(i + 1, n);
    CHECK((ref.states[i] - prev.states[src]).norm() == 0.0);
    CHECK(ref.thetas[i] == prev.thetas[src]);
  }
  for (int i = 0; i < n; ++i) {
    const int j = std::min(i + 1, n - 1);
    CHECK((ref.inputs[i] - Vector2d(prev.z.segment<2>(2 * j))).norm() == 0.0);
    CHECK(ref.vs[i] == prev.z(2 * n + j));
  }

  mpcc::Solution bad = prev;
  bad.z = VectorXd::Zero(3);
  CHECK_THROWS_AS(mpcc::shift_solution(bad, meas, 0.0), std::invalid_argument);
}

TEST_CASE("cold start keeps the anchor rolling forward") {
  const Track trk = demo_track();
  const vehicle::Params p = testutil::car_params();
  const vehicle::State x0 = centerline_state(trk, 0.4, 0.0);

  // Even from rest the plan moves: progress advances with the anchor speed
  // and the inputs hold that speed instead of letting the anchor stall.
  const mpcc::Reference ref = mpcc::cold_start_reference(p, x0, 0.4, 10);
  REQUIRE(ref.states.size() == 11);
  REQUIRE(ref.inputs.size() == 10);
  CHECK(ref.thetas[0] == 0.4);
  for (int i = 0; i < 10; ++i) {
    CHECK(ref.states[i](vehicle::SVX) >= 0.9);
    CHECK(ref.vs[i] == p.Ts * ref.states[i](vehicle::SVX));
    CHECK(ref.thetas[i + 1] == ref.thetas[i] + ref.vs[i]);
    CHECK(ref.inputs[i](vehicle::UP) > 0.0);
    CHECK(ref.inputs[i](vehicle::UP) <= 1.0);
    CHECK(ref.inputs[i](vehicle::UDELTA) == 0.0);
  }

  // From speed the anchor holds close to the measured velocity.
  const vehicle::State xm = centerline_state(trk, 0.4, 1.5);
  const mpcc::Reference moving = mpcc::cold_start_reference(p, xm, 0.4, 10);
  CHECK(moving.states[0](vehicle::SVX) == 1.5);
  for (const auto& x : moving.states) {
    CHECK(x(vehicle::SVX) > 1.3);
    CHECK(x(vehicle::SVX) < 1.7);
  }
  CHECK(moving.thetas[10] > moving.thetas[0] + 10 * p.Ts * 1.3);
}

TEST_CASE("packed decision round-trips the reference and clamps excursions") {
  mpcc::Config cfg;
  cfg.horizon = 4;
  mpcc::OCP ocp;
  ocp.cfg = cfg;
  ocp.delta_max = 0.35;

  mpcc::Reference ref;
  ref.states.assign(5, vehicle::State::Zero());
  ref.thetas.assign(5, 0.0);
  ref.inputs = {Vector2d(0.3, 0.1), Vector2d(0.5, -0.2), Vector2d(5.0, 0.0),
                Vector2d(0.1, -3.0)};
  ref.vs = {0.05, 0.11, -0.5, 9.0};

  const VectorXd z = mpcc::pack_decision(ocp, ref);
  CHECK((ocp.u_at(z, 0) - Vector2d(0.3, 0.1)).norm() == 0.0);
  CHECK((ocp.u_at(z, 1) - Vector2d(0.5, -0.2)).norm() == 0.0);
  CHECK(ocp.u_at(z, 2)(0) == cfg.p_max);   // throttle clamped down
  CHECK(ocp.u_at(z, 3)(1) == -0.35);       // steering clamped to the wheel stop
  CHECK(ocp.v_at(z, 0) == 0.05);
  CHECK(ocp.v_at(z, 2) == 0.0);            // progress increments cannot reverse
  CHECK(ocp.v_at(z, 3) == cfg.v_max_step);
  for (int i = 1; i <= 4; ++i) CHECK(ocp.s_at(z, i) == 0.0);

  mpcc::Reference short_ref = ref;
  short_ref.inputs.pop_back();
  CHECK_THROWS_AS(mpcc::pack_decision(ocp, short_ref), std::invalid_argument);
}

TEST_CASE("frozen stage data sits on the centerline at the reference") {
  const Track trk = demo_track();
  const vehicle::Params params = testutil::car_params();
  const racer::ZeroResidual zero;
  const mpcc::VehicleMeanDynamics model(params, zero);
  mpcc::Config cfg;
  cfg.horizon = 6;

  mpcc::Reference ref;
  ref.states.resize(7);
  ref.thetas.resize(7);
  ref.inputs.assign(6, Vector2d(0.3, 0.0));
  ref.vs.assign(6, 0.25);
  for (int i = 0; i <= 6; ++i) {
    ref.thetas[i] = 0.4 + 0.25 * i;
    ref.states[i] = centerline_state(trk, ref.thetas[i], 1.0);
  }

  const mpcc::OCP ocp =
      mpcc::build_ocp(ref.states[0], ref.thetas[0], ref, zero_tube(6), trk, model,
                      params, Vector2d::Zero(), 0.0, cfg);
  REQUIRE(static_cast<int>(ocp.stages.size()) == 6);
  for (int i = 1; i <= 6; ++i) {
    const mpcc::Stage& st = ocp.stage(i);
    CHECK(st.theta_bar == ref.thetas[i]);
    CHECK(std::abs(st.ec0) < 1e-9);
    CHECK(std::abs(st.el0) < 1e-9);
    const auto pose = trk.eval(ref.thetas[i]);
    CHECK(st.center(0) == pose.Xc);
    CHECK(st.center(1) == pose.Yc);
    CHECK(st.radius == trk.half_width());
    CHECK(st.margin == 0.0);
    CHECK((st.lin_pose.head<2>() - Vector2d(pose.Xc, pose.Yc)).norm() < 1e-12);
  }

  propagation::VarianceTube bad = zero_tube(5);
  CHECK_THROWS_AS(mpcc::build_ocp(ref.states[0], ref.thetas[0], ref, bad, trk, model,
                                  params, Vector2d::Zero(), 0.0, cfg),
                  std::invalid_argument);
  mpcc::Reference bad_ref = ref;
  bad_ref.states.pop_back();
  CHECK_THROWS_AS(mpcc::build_ocp(ref.states[0], ref.thetas[0], bad_ref, zero_tube(6),
                                  trk, model, params, Vector2d::Zero(), 0.0, cfg),
                  std::invalid_argument);
}

TEST_CASE("tube margins tighten the stage radii down to the floor") {
  const Track trk = demo_track();
  const vehicle::Params params = testutil::car_params();
  const racer::ZeroResidual zero;
  const mpcc::VehicleMeanDynamics model(params, zero);
  mpcc::Config cfg;
  cfg.horizon = 4;
  const double r = trk.half_width();

  mpcc::Reference ref;
  ref.states.resize(5);
  ref.thetas.resize(5);
  ref.inputs.assign(4, Vector2d::Zero());
  ref.vs.assign(4, 0.1);
  for (int i = 0; i <= 4; ++i) {
    ref.thetas[i] = 0.2 + 0.1 * i;
    ref.states[i] = centerline_state(trk, ref.thetas[i], 0.5);
  }

  propagation::VarianceTube tube = zero_tube(4);
  tube.margins = {0.0, 0.01, 0.05, r + 5.0, 0.0};
  const mpcc::OCP ocp = mpcc::build_ocp(ref.states[0], ref.thetas[0], ref, tube, trk,
                                        model, params, Vector2d::Zero(), 0.0, cfg);
  CHECK(ocp.stage(1).radius == r - 0.01);
  CHECK(ocp.stage(2).radius == r - 0.05);
  CHECK(ocp.stage(3).radius == cfg.r_min_frac * r);  // floored, corridor stays open
  CHECK(ocp.stage(4).radius == r);
  CHECK(ocp.stage(3).margin == r + 5.0);
}

TEST_CASE("a dynamically consistent reference scores the sum of its stage costs") {
  const Track trk = demo_track();
  const vehicle::Params params = testutil::car_params();
  const racer::ZeroResidual zero;
  const mpcc::VehicleMeanDynamics model(params, zero);
  mpcc::Config cfg;
  cfg.horizon = 8;

  const vehicle::State x0 = centerline_state(trk, 0.3, 0.8);
  const std::vector<vehicle::Control> us(8, Vector2d(0.35, 0.02));
  const std::vector<double> vs(8, 0.05);
  const mpcc::Reference ref = rolled_reference(model, x0, 0.3, us, vs);

  const Vector2d u_prev(0.2, 0.0);
  const double v_prev = 0.03;
  const mpcc::OCP ocp = mpcc::build_ocp(x0, 0.3, ref, zero_tube(8), trk, model,
                                        params, u_prev, v_prev, cfg);
  const VectorXd z = mpcc::pack_decision(ocp, ref);
  const mpcc::Eval ev = mpcc::evaluate_solution(ocp, z);

  // The rollout must reproduce the reference exactly: same model, same inputs.
  for (int i = 0; i <= 8; ++i) {
    CHECK((ev.states[i] - ref.states[i]).norm() == 0.0);
    CHECK(ev.thetas[i] == ref.thetas[i]);
  }

  double expected = 0.0;
  for (int i = 1; i <= 8; ++i) {
    const Vector2d du = us[i - 1] - (i == 1 ? u_prev : us[i - 2]);
    const double dv = vs[i - 1] - (i == 1 ? v_prev : vs[i - 2]);
    expected += mpcc::stage_cost(trk, ref.states[i], ref.thetas[i], vs[i - 1], du, dv,
                                 cfg).value;
  }
  CHECK(ev.cost == doctest::Approx(expected).epsilon(1e-12));

  // Lateral residuals against the frozen geometry, slacks at zero.
  for (int i = 1; i <= 8; ++i) {
    const mpcc::Stage& st = ocp.stage(i);
    const Vector2d p(ref.states[i](vehicle::SX), ref.states[i](vehicle::SY));
    const double hand = (p - st.center).norm() - st.radius;
    CHECK(ev.lateral(i - 1) == doctest::Approx(hand).epsilon(1e-14));
  }
  CHECK(ev.bound_violation == 0.0);
}

TEST_CASE("identical inputs rebuild an identical problem") {
  const Track trk = demo_track();
  const vehicle::Params params = testutil::car_params();
  const racer::ZeroResidual zero;
  const mpcc::VehicleMeanDynamics model(params, zero);
  mpcc::Config cfg;
  cfg.horizon = 5;

  const vehicle::State x0 = centerline_state(trk, 1.0, 0.9);
  const std::vector<vehicle::Control> us(5, Vector2d(0.4, -0.03));
  const std::vector<double> vs(5, 0.04);
  const mpcc::Reference ref = rolled_reference(model, x0, 1.0, us, vs);

  const mpcc::OCP a = mpcc::build_ocp(x0, 1.0, ref, zero_tube(5), trk, model, params,
                                      Vector2d::Zero(), 0.0, cfg);
  const mpcc::OCP b = mpcc::build_ocp(x0, 1.0, ref, zero_tube(5), trk, model, params,
                                      Vector2d::Zero(), 0.0, cfg);
  for (int i = 1; i <= 5; ++i) {
    CHECK(a.stage(i).theta_bar == b.stage(i).theta_bar);
    CHECK((a.stage(i).lin_pose - b.stage(i).lin_pose).norm() == 0.0);
    CHECK(a.stage(i).ec0 == b.stage(i).ec0);
    CHECK((a.stage(i).grad_ec - b.stage(i).grad_ec).norm() == 0.0);
    CHECK(a.stage(i).radius == b.stage(i).radius);
  }
  const VectorXd z = mpcc::pack_decision(a, ref);
  CHECK(mpcc::evaluate_solution(a, z).cost == mpcc::evaluate_solution(b, z).cost);
}

TEST_CASE("packed cold start stays inside the corridor") {
  const Track trk = demo_track();
  const vehicle::Params params = testutil::car_params();
  const racer::ZeroResidual zero;
  const mpcc::VehicleMeanDynamics model(params, zero);
  mpcc::Config cfg;
  cfg.horizon = 10;

  // Measured speed matching the anchor keeps the packed rollout close to the
  // frozen corridor centers over the whole horizon.
  const vehicle::State x0 = centerline_state(trk, 2.0, 1.0);
  const mpcc::Reference ref = mpcc::cold_start_reference(params, x0, 2.0, 10);
  const mpcc::OCP ocp = mpcc::build_ocp(x0, 2.0, ref, zero_tube(10), trk, model,
                                        params, Vector2d::Zero(), 0.0, cfg);
  const VectorXd z = mpcc::pack_decision(ocp, ref);
  const mpcc::Eval ev = mpcc::evaluate_solution(ocp, z);
  for (int i = 0; i < 10; ++i) CHECK(ev.lateral(i) < 0.0);
  CHECK(ev.lateral(0) == doctest::Approx(-trk.half_width()).epsilon(0.02));
  CHECK(ev.bound_violation == 0.0);
}

TEST_CASE("transition jacobians track the learned correction") {
  const vehicle::Params params = testutil::car_params();

  // A smooth synthetic correction trained on the full [x; u] regressor.
  std::mt19937_64 g(321);
  const int m = 40;
  gp::Dataset ds;
  ds.Z.resize(m, racer::NZ);
  ds.Y.resize(m, racer::ND);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < racer::NZ; ++j) ds.Z(i, j) = racer::rng::uniform(g, -1.0, 1.5);
    ds.Y(i, 0) = 0.3 * std::sin(ds.Z(i, vehicle::SVX));
    ds.Y(i, 1) = 0.2 * ds.Z(i, vehicle::SVY) * ds.Z(i, 6);
    ds.Y(i, 2) = 0.1 * std::cos(ds.Z(i, vehicle::SOMEGA));
  }
  gp::Hyper hyper;
  for (int d = 0; d < racer::ND; ++d) {
    gp::HyperDim h;
    h.sigma_f2 = 0.5;
    h.length2 = Eigen::VectorXd::Constant(racer::NZ, 1.0);
    h.sigma_n2 = 1e-6;
    hyper.push_back(h);
  }
  const gp::Model gpm = gp::Model::fit(ds, hyper);
  const racer::GpResidual learned(gpm);
  const racer::ZeroResidual zero;
  const mpcc::VehicleMeanDynamics model(params, learned);
  const mpcc::VehicleMeanDynamics nominal(params, zero);

  vehicle::State x;
  x << 0.2, -0.1, 0.3, 1.2, 0.05, 0.4;
  const Vector2d u(0.45, 0.08);
  vehicle::StateJacobian A, A0;
  vehicle::ControlJacobian B, B0;
  model.jacobians(x, u, A, B);
  nominal.jacobians(x, u, A0, B0);
  CHECK((A - A0).cwiseAbs().maxCoeff() > 1e-4);  // the correction must matter

  const double h = 1e-6;
  for (int j = 0; j < vehicle::NX; ++j) {
    vehicle::State xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    const vehicle::State fd = (model.step(xp, u) - model.step(xm, u)) / (2 * h);
    CHECK((A.col(j) - fd).cwiseAbs().maxCoeff() < 2e-5);
  }
  for (int j = 0; j < vehicle::NU; ++j) {
    Vector2d up = u, um = u;
    up(j) += h;
    um(j) -= h;
    const vehicle::State fd = (model.step(x, up) - model.step(x, um)) / (2 * h);
    CHECK((B.col(j) - fd).cwiseAbs().maxCoeff() < 2e-5);
  }
}

TEST_CASE("progress and slack entries leave the rolled-out states alone") {
  const Track trk = demo_track();
  const vehicle::Params params = testutil::car_params();
  const racer::ZeroResidual zero;
  const mpcc::VehicleMeanDynamics model(params, zero);
  mpcc::Config cfg;
  cfg.horizon = 4;

  const vehicle::State x0 = centerline_state(trk, 0.5, 0.6);
  const std::vector<vehicle::Control> us(4, Vector2d(0.3, 0.01));
  const std::vector<double> vs(4, 0.02);
  const mpcc::Reference ref = rolled_reference(model, x0, 0.5, us, vs);
  const mpcc::OCP ocp = mpcc::build_ocp(x0, 0.5, ref, zero_tube(4), trk, model, params,
                                        Vector2d::Zero(), 0.0, cfg);

  VectorXd z = mpcc::pack_decision(ocp, ref);
  const mpcc::Rollout r0 = mpcc::rollout_with_jacobians(ocp, z);
  VectorXd z2 = z;
  z2(ocp.iv(1)) += 0.03;
  z2(ocp.is(2)) += 0.4;
  const mpcc::Rollout r1 = mpcc::rollout_with_jacobians(ocp, z2);
  for (int i = 0; i <= 4; ++i) CHECK((r1.states[i] - r0.states[i]).norm() == 0.0);
  CHECK(r1.thetas[2] == r0.thetas[2] + 0.03);
  CHECK(r1.thetas[4] == r0.thetas[4] + 0.03);

  const mpcc::Eval e0 = mpcc::evaluate_solution(ocp, z);
  for (int i = 0; i <= 4; ++i) CHECK((e0.states[i] - r0.states[i]).norm() == 0.0);
}
