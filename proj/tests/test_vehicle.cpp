#include "doctest.h"

#include <cmath>
#include <map>
#include <random>

#include "expr.hpp"
#include "racer/rng.hpp"
#include "racer/vehicle.hpp"
#include "test_helpers.hpp"

using namespace racer::vehicle;

namespace {

State make_state(double X, double Y, double phi, double vx, double vy, double w) {
  State x;
  x << X, Y, phi, vx, vy, w;
  return x;
}

Control make_input(double p, double delta) {
  Control u;
  u << p, delta;
  return u;
}

std::map<std::string, double> var_map(const State& x, const Control& u, const Params& p) {
  return {
      {"X", x(SX)},       {"Y", x(SY)},     {"Phi", x(SPHI)}, {"vx", x(SVX)},
      {"vy", x(SVY)},     {"omega", x(SOMEGA)}, {"p", u(UP)},  {"delta", u(UDELTA)},
      {"m", p.m},         {"Iz", p.Iz},     {"lf", p.lf},     {"lr", p.lr},
      {"Bf", p.Bf},       {"Cf", p.Cf},     {"Df", p.Df},     {"Br", p.Br},
      {"Cr", p.Cr},       {"Dr", p.Dr},     {"Cm1", p.Cm1},   {"Cm2", p.Cm2},
      {"Cr0", p.Cr0},     {"Cr2", p.Cr2},   {"vx_min", p.vx_min},
  };
}

const char* kFfy = "Df*sin(Cf*atan(Bf*(delta - atan((vy + lf*omega)/max(vx, vx_min)))))";
const char* kFry = "Dr*sin(Cr*atan(Br*(-atan((vy - lr*omega)/max(vx, vx_min)))))";
const char* kFrx = "(Cm1 - Cm2*vx)*p - Cr0 - Cr2*vx*vx";

State random_state(std::mt19937_64& g) {
  using racer::rng::uniform;
  return make_state(uniform(g, -2, 2), uniform(g, -2, 2), uniform(g, -3.1, 3.1),
                    uniform(g, 0.3, 3.0), uniform(g, -0.8, 0.8), uniform(g, -4, 4));
}

Control random_input(std::mt19937_64& g) {
  using racer::rng::uniform;
  return make_input(uniform(g, 0, 1), uniform(g, -0.38, 0.38));
}

}  // namespace

TEST_CASE("zero slip gives zero lateral force") {
  const Params p = testutil::car_params();
  const Forces F = tire_and_drive_forces(make_state(0, 0, 0, 1.0, 0, 0), make_input(0.3, 0), p);
  CHECK(F.Ffy == 0.0);
  CHECK(F.Fry == 0.0);
}

TEST_CASE("static friction offset at rest") {
  const Params p = testutil::car_params();
  const Forces F = tire_and_drive_forces(make_state(0, 0, 0, 0, 0, 0), make_input(0, 0), p);
  CHECK(F.Frx == doctest::Approx(-p.Cr0).epsilon(1e-14));
}

TEST_CASE("forces match an independently interpreted formula") {
  const Params p = testutil::car_params();
  std::mt19937_64 g(101);
  for (int trial = 0; trial < 50; ++trial) {
    const State x = random_state(g);
    const Control u = random_input(g);
    const Forces F = tire_and_drive_forces(x, u, p);
    auto vars = var_map(x, u, p);
    CHECK(F.Ffy == doctest::Approx(expr::eval(kFfy, vars)).epsilon(1e-12));
    CHECK(F.Fry == doctest::Approx(expr::eval(kFry, vars)).epsilon(1e-12));
    CHECK(F.Frx == doctest::Approx(expr::eval(kFrx, vars)).epsilon(1e-12));
  }
}

TEST_CASE("straight coasting kinematics") {
  const Params p = testutil::car_params();
  const State f = continuous_dynamics(make_state(0, 0, 0, 1.0, 0, 0), make_input(0, 0), p);
  CHECK(f(SX) == doctest::Approx(1.0));
  CHECK(f(SY) == 0.0);
  CHECK(f(SPHI) == 0.0);
}

TEST_CASE("lateral acceleration vanishes without slip or rotation") {
  const Params p = testutil::car_params();
  const State f = continuous_dynamics(make_state(1, -2, 0.7, 1.5, 0, 0), make_input(0.5, 0), p);
  CHECK(f(SVY) == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("state derivative matches an independently interpreted model") {
  const Params p = testutil::car_params();
  std::mt19937_64 g(103);
  for (int trial = 0; trial < 50; ++trial) {
    const State x = random_state(g);
    const Control u = random_input(g);
    const State f = continuous_dynamics(x, u, p);

    auto vars = var_map(x, u, p);
    vars["Ffy"] = expr::eval(kFfy, vars);
    vars["Fry"] = expr::eval(kFry, vars);
    vars["Frx"] = expr::eval(kFrx, vars);
    const char* rows[6] = {
        "vx*cos(Phi) - vy*sin(Phi)",
        "vx*sin(Phi) + vy*cos(Phi)",
        "omega",
        "(Frx - Ffy*sin(delta) + m*vy*omega)/m",
        "(Fry + Ffy*cos(delta) - m*vx*omega)/m",
        "(Ffy*lf*cos(delta) - Fry*lr)/Iz",
    };
    for (int i = 0; i < 6; ++i)
      CHECK(f(i) == doctest::Approx(expr::eval(rows[i], vars)).epsilon(1e-12));
  }
}

TEST_CASE("euler step contract") {
  const Params p = testutil::car_params();
  std::mt19937_64 g(107);
  const State x = random_state(g);
  const Control u = random_input(g);
  const State xp = discrete_step(x, u, p);
  const State f = continuous_dynamics(x, u, p);
  CHECK((xp - x - p.Ts * f).norm() < 1e-15);
}

TEST_CASE("equilibrium is a fixed point") {
  const Params p = testutil::car_params();
  // At rest with the duty cycle exactly canceling static friction.
  const double p_eq = p.Cr0 / p.Cm1;
  const State x = make_state(0.4, -0.2, 1.1, 0, 0, 0);
  const State xp = discrete_step(x, make_input(p_eq, 0), p);
  CHECK((xp - x).norm() < 1e-15);
}

TEST_CASE("launch from rest at full throttle") {
  const Params p = testutil::car_params();
  const State x = make_state(0, 0, 0, 0, 0, 0);
  const State xp = discrete_step(x, make_input(1.0, 0), p);
  CHECK(xp(SVX) == doctest::Approx(p.Ts * (p.Cm1 - p.Cr0) / p.m).epsilon(1e-13));
}

TEST_CASE("analytic jacobians match central finite differences") {
  const Params p = testutil::car_params();
  std::mt19937_64 g(109);
  const double h = 1e-6;
  for (int trial = 0; trial < 40; ++trial) {
    const State x = random_state(g);
    const Control u = random_input(g);
    StateJacobian A;
    ControlJacobian B;
    discrete_jacobians(x, u, p, A, B);

    for (int j = 0; j < NX; ++j) {
      State xp = x, xm = x;
      xp(j) += h;
      xm(j) -= h;
      const State col = (discrete_step(xp, u, p) - discrete_step(xm, u, p)) / (2 * h);
      for (int i = 0; i < NX; ++i) {
        const double scale = std::max(1.0, std::abs(A(i, j)));
        CHECK(std::abs(col(i) - A(i, j)) / scale < 1e-5);
      }
    }
    for (int j = 0; j < NU; ++j) {
      Control up = u, um = u;
      up(j) += h;
      um(j) -= h;
      const State col = (discrete_step(x, up, p) - discrete_step(x, um, p)) / (2 * h);
      for (int i = 0; i < NX; ++i) {
        const double scale = std::max(1.0, std::abs(B(i, j)));
        CHECK(std::abs(col(i) - B(i, j)) / scale < 1e-5);
      }
    }
  }
}

TEST_CASE("dynamics are odd under mirroring") {
  // Negating (Phi, vy, omega, delta) negates the (Y, Phi, vy, omega) rows
  // and preserves the (X, vx) rows.
  const Params p = testutil::car_params();
  std::mt19937_64 g(113);
  for (int trial = 0; trial < 30; ++trial) {
    State x = random_state(g);
    x(SX) = 0;
    x(SY) = 0;
    const Control u = random_input(g);

    State xm = x;
    xm(SPHI) = -x(SPHI);
    xm(SVY) = -x(SVY);
    xm(SOMEGA) = -x(SOMEGA);
    const Control um = make_input(u(UP), -u(UDELTA));

    const State f = continuous_dynamics(x, u, p);
    const State fm = continuous_dynamics(xm, um, p);
    CHECK(fm(SX) == doctest::Approx(f(SX)).epsilon(1e-12));
    CHECK(fm(SY) == doctest::Approx(-f(SY)).epsilon(1e-12));
    CHECK(fm(SPHI) == doctest::Approx(-f(SPHI)).epsilon(1e-12));
    CHECK(fm(SVX) == doctest::Approx(f(SVX)).epsilon(1e-12));
    CHECK(fm(SVY) == doctest::Approx(-f(SVY)).epsilon(1e-12));
    CHECK(fm(SOMEGA) == doctest::Approx(-f(SOMEGA)).epsilon(1e-12));
  }
}

TEST_CASE("non-finite force evaluation is reported with the field name") {
  const Params p = testutil::car_params();
  State x = make_state(0, 0, 0, std::nan(""), 0, 0);
  CHECK_THROWS_WITH_AS(tire_and_drive_forces(x, make_input(0.5, 0), p),
                       doctest::Contains("Ffy"), std::domain_error);
}

TEST_CASE("plant perturbation is bounded, deterministic, and off at zero") {
  const Params nom = testutil::car_params();

  const Params same = perturbed_plant(nom, 0.0, 42);
  CHECK(same.m == nom.m);
  CHECK(same.Dr == nom.Dr);
  CHECK(same.Cm1 == nom.Cm1);

  const Params a = perturbed_plant(nom, 0.15, 42);
  const Params b = perturbed_plant(nom, 0.15, 42);
  CHECK(a.m == b.m);
  CHECK(a.Cr2 == b.Cr2);

  const Params c = perturbed_plant(nom, 0.15, 43);
  CHECK(a.m != c.m);

  auto ratio_ok = [](double pert, double ref) {
    const double r = pert / ref;
    return r >= 0.85 && r <= 1.15;
  };
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Params q = perturbed_plant(nom, 0.15, seed);
    CHECK(ratio_ok(q.m, nom.m));
    CHECK(ratio_ok(q.Iz, nom.Iz));
    CHECK(ratio_ok(q.lf, nom.lf));
    CHECK(ratio_ok(q.lr, nom.lr));
    CHECK(ratio_ok(q.Bf, nom.Bf));
    CHECK(ratio_ok(q.Cf, nom.Cf));
    CHECK(ratio_ok(q.Df, nom.Df));
    CHECK(ratio_ok(q.Br, nom.Br));
    CHECK(ratio_ok(q.Cr, nom.Cr));
    CHECK(ratio_ok(q.Dr, nom.Dr));
    CHECK(ratio_ok(q.Cm1, nom.Cm1));
    CHECK(ratio_ok(q.Cm2, nom.Cm2));
    CHECK(ratio_ok(q.Cr0, nom.Cr0));
    CHECK(ratio_ok(q.Cr2, nom.Cr2));
    CHECK(q.Ts == nom.Ts);
    CHECK(q.delta_max == nom.delta_max);
  }
}

TEST_CASE("noise-free plant equals the nominal step bitwise") {
  const Params p = testutil::car_params();
  std::mt19937_64 g(127);
  const State x = random_state(g);
  const Control u = random_input(g);
  NoiseSpec none;
  std::mt19937_64 rng(1);
  const State a = plant_step(x, u, p, none, rng);
  const State b = discrete_step(x, u, p);
  for (int i = 0; i < NX; ++i) CHECK(a(i) == b(i));
}

TEST_CASE("noise enters only the velocity states") {
  const Params p = testutil::car_params();
  std::mt19937_64 g(131);
  const State x = random_state(g);
  const Control u = random_input(g);
  NoiseSpec noise;
  noise.sigma_w << 1e-4, 1e-4, 1e-2;
  std::mt19937_64 rng(7);
  const State noisy = plant_step(x, u, p, noise, rng);
  const State clean = discrete_step(x, u, p);
  CHECK(noisy(SX) == clean(SX));
  CHECK(noisy(SY) == clean(SY));
  CHECK(noisy(SPHI) == clean(SPHI));
  CHECK(noisy(SVX) != clean(SVX));
}

TEST_CASE("plant noise variance matches the specification") {
  const Params p = testutil::car_params();
  const State x = make_state(0, 0, 0, 1.0, 0.1, 0.5);
  const Control u = make_input(0.4, 0.1);
  NoiseSpec noise;
  noise.sigma_w << 2e-4, 1e-4, 5e-3;
  const int n = 100000;
  std::mt19937_64 rng(2024);
  const State clean = discrete_step(x, u, p);
  Eigen::Vector3d sum = Eigen::Vector3d::Zero(), sumsq = Eigen::Vector3d::Zero();
  for (int i = 0; i < n; ++i) {
    const State s = plant_step(x, u, p, noise, rng);
    for (int j = 0; j < 3; ++j) {
      const double d = s(SVX + j) - clean(SVX + j);
      sum(j) += d;
      sumsq(j) += d * d;
    }
  }
  for (int j = 0; j < 3; ++j) {
    const double mean = sum(j) / n;
    const double var = sumsq(j) / n - mean * mean;
    // Sample variance of a Gaussian has std dev sigma^2 * sqrt(2/(n-1)).
    const double tol = 3.0 * noise.sigma_w(j) * std::sqrt(2.0 / (n - 1));
    CHECK(std::abs(var - noise.sigma_w(j)) < tol);
  }
}
