#include "racer/simloop.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "racer/gp_sparse.hpp"
#include "racer/propagation.hpp"
#include "racer/residual.hpp"

namespace racer::sim {

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

/// Representative of theta (mod L) closest to the anchor, so the measured
/// progress stays continuous across the finish line.
double unwrap_near(double theta, double anchor, double length, bool closed) {
  if (!closed) return theta;
  double d = std::fmod(theta - anchor, length);
  if (d > 0.5 * length) d -= length;
  if (d <= -0.5 * length) d += length;
  return anchor + d;
}

propagation::VarianceTube zero_tube(int n) {
  propagation::VarianceTube t;
  t.sigma.assign(static_cast<size_t>(n) + 1, propagation::StateCov::Zero());
  t.sigma_xy.assign(static_cast<size_t>(n) + 1, Eigen::Matrix2d::Zero());
  t.margins.assign(static_cast<size_t>(n) + 1, 0.0);
  return t;
}

void append_g17(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

const char* const kLogColumns =
    "k,t,X,Y,Phi,vx,vy,omega,p,delta,v,theta,slack0,eX,eY,ePhi,evx,evy,"
    "eomega,margin1,sqp_iterations";
constexpr int kLogColumnCount = 21;

bool split_fields(const std::string& line, std::vector<std::string>& out) {
  out.clear();
  size_t pos = 0;
  while (true) {
    const size_t next = line.find(',', pos);
    if (next == std::string::npos) {
      out.push_back(line.substr(pos));
      return true;
    }
    out.push_back(line.substr(pos, next - pos));
    pos = next + 1;
  }
}

bool parse_double(const std::string& s, double& out) {
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end && *end == '\0' && end != s.c_str();
}

}  // namespace

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kBaseline: return "baseline";
    case Variant::kGpFull: return "gp-full";
    case Variant::kGpSparse: return "gp-sparse";
    case Variant::kReference: return "reference";
  }
  return "unknown";
}

std::optional<Variant> variant_from_name(const std::string& name) {
  if (name == "baseline") return Variant::kBaseline;
  if (name == "gp-full") return Variant::kGpFull;
  if (name == "gp-sparse") return Variant::kGpSparse;
  if (name == "reference") return Variant::kReference;
  return std::nullopt;
}

bool LapLog::save_csv(const std::string& path) const {
  std::string out;
  out.reserve(steps.size() * 256 + 512);
  char head[128];
  out += "# laplog 1\n";
  std::snprintf(head, sizeof head, "# config_hash %016llx\n",
                static_cast<unsigned long long>(config_hash));
  out += head;
  std::snprintf(head, sizeof head, "# seed %llu\n",
                static_cast<unsigned long long>(seed));
  out += head;
  out += "# variant " + variant + "\n";
  for (const auto& [key, value] :
       {std::pair<const char*, double>{"Ts", Ts},
        {"track_length", track_length},
        {"theta_start", theta_start},
        {"theta_final", theta_final}}) {
    out += "# ";
    out += key;
    out += ' ';
    append_g17(out, value);
    out += '\n';
  }
  out += completed ? "# completed 1\n" : "# completed 0\n";
  out += diverged ? "# diverged 1\n" : "# diverged 0\n";
  out += kLogColumns;
  out += '\n';
  for (const StepRecord& r : steps) {
    out += std::to_string(r.k);
    const double cols[] = {r.t,      r.x(0),   r.x(1),   r.x(2),  r.x(3),
                           r.x(4),   r.x(5),   r.u(0),   r.u(1),  r.v,
                           r.theta,  r.slack0, r.err(0), r.err(1), r.err(2),
                           r.err(3), r.err(4), r.err(5), r.margin1};
    for (double c : cols) {
      out += ',';
      append_g17(out, c);
    }
    out += ',';
    out += std::to_string(r.sqp_iterations);
    out += '\n';
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) return false;
  f << out;
  return static_cast<bool>(f);
}

bool LapLog::save_timing_csv(const std::string& path) const {
  std::string out;
  out.reserve(steps.size() * 64 + 128);
  char head[128];
  out += "# laplog-timing 1\n";
  std::snprintf(head, sizeof head, "# config_hash %016llx\n",
                static_cast<unsigned long long>(config_hash));
  out += head;
  std::snprintf(head, sizeof head, "# seed %llu\n",
                static_cast<unsigned long long>(seed));
  out += head;
  out += "# variant " + variant + "\n";
  out += "k,solve_time,refresh_time\n";
  for (const StepRecord& r : steps) {
    out += std::to_string(r.k);
    out += ',';
    append_g17(out, r.solve_time);
    out += ',';
    append_g17(out, r.refresh_time);
    out += '\n';
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) return false;
  f << out;
  return static_cast<bool>(f);
}

std::optional<LapLog> LapLog::load_csv(const std::string& path, std::string* error) {
  auto fail = [&](const std::string& why) -> std::optional<LapLog> {
    if (error) *error = path + ": " + why;
    return std::nullopt;
  };
  std::ifstream f(path, std::ios::binary);
  if (!f) return fail("cannot open");
  LapLog log;
  std::string line;
  bool saw_columns = false;
  std::vector<std::string> fields;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::string body = line.substr(1);
      const size_t key_start = body.find_first_not_of(' ');
      if (key_start == std::string::npos) continue;
      const size_t key_end = body.find(' ', key_start);
      if (key_end == std::string::npos) continue;
      const std::string key = body.substr(key_start, key_end - key_start);
      const std::string value = body.substr(key_end + 1);
      try {
        if (key == "config_hash") log.config_hash = std::stoull(value, nullptr, 16);
        else if (key == "seed") log.seed = std::stoull(value);
        else if (key == "variant") log.variant = value;
        else if (key == "Ts") log.Ts = std::stod(value);
        else if (key == "track_length") log.track_length = std::stod(value);
        else if (key == "theta_start") log.theta_start = std::stod(value);
        else if (key == "theta_final") log.theta_final = std::stod(value);
        else if (key == "completed") log.completed = value == "1";
        else if (key == "diverged") log.diverged = value == "1";
      } catch (const std::exception&) {
        return fail("bad header value on line " + std::to_string(lineno));
      }
      continue;
    }
    if (!saw_columns) {
      if (line != kLogColumns)
        return fail("unexpected column header on line " + std::to_string(lineno));
      saw_columns = true;
      continue;
    }
    split_fields(line, fields);
    if (static_cast<int>(fields.size()) != kLogColumnCount)
      return fail("wrong field count on line " + std::to_string(lineno));
    StepRecord r;
    double vals[19];
    bool ok = true;
    for (int i = 0; i < 19; ++i) ok = ok && parse_double(fields[i + 1], vals[i]);
    char* end = nullptr;
    r.k = static_cast<int>(std::strtol(fields[0].c_str(), &end, 10));
    ok = ok && end && *end == '\0';
    r.sqp_iterations =
        static_cast<int>(std::strtol(fields[20].c_str(), &end, 10));
    ok = ok && end && *end == '\0';
    if (!ok) return fail("bad number on line " + std::to_string(lineno));
    r.t = vals[0];
    r.x << vals[1], vals[2], vals[3], vals[4], vals[5], vals[6];
    r.u << vals[7], vals[8];
    r.v = vals[9];
    r.theta = vals[10];
    r.slack0 = vals[11];
    r.err << vals[12], vals[13], vals[14], vals[15], vals[16], vals[17];
    r.margin1 = vals[18];
    log.steps.push_back(r);
  }
  if (!saw_columns) return fail("no column header");
  return log;
}

Metrics compute_metrics(const LapLog& log) {
  Metrics m;
  m.steps = static_cast<int>(log.steps.size());
  m.complete = log.completed && !log.diverged && !log.steps.empty();
  if (log.steps.empty()) return m;
  double slack_sq = 0, err_norm = 0, solve = 0, refresh = 0;
  std::vector<double> solve_times;
  solve_times.reserve(log.steps.size());
  for (const StepRecord& r : log.steps) {
    slack_sq += r.slack0 * r.slack0;
    err_norm += r.err.norm();
    solve += r.solve_time;
    refresh += r.refresh_time;
    solve_times.push_back(r.solve_time);
  }
  const double n = static_cast<double>(log.steps.size());
  m.mean_slack_sq = slack_sq / n;
  m.mean_err_norm = err_norm / n;
  m.mean_solve_time = solve / n;
  m.mean_refresh_time = refresh / n;
  std::sort(solve_times.begin(), solve_times.end());
  const int rank = std::clamp(
      static_cast<int>(std::ceil(0.999 * n)), 1, static_cast<int>(n));
  m.p999_solve_time = solve_times[rank - 1];
  if (m.complete) {
    const StepRecord& last = log.steps.back();
    const double target = log.theta_start + log.track_length;
    const double den = log.theta_final - last.theta;
    const double frac =
        den > 1e-12 ? std::clamp((target - last.theta) / den, 0.0, 1.0) : 1.0;
    m.lap_time = last.t + log.Ts * frac;
  }
  return m;
}

LapLog run_lap(Variant variant, const RunSetup& setup, std::uint64_t seed) {
  if (!setup.trk) throw std::invalid_argument("run_lap: track is null");
  std::string why;
  if (!setup.mpcc.validate(&why))
    throw std::invalid_argument("run_lap: " + why);
  if (setup.sqp_iterations < 1 || setup.step_budget < 1 || setup.plant_substeps < 1)
    throw std::invalid_argument("run_lap: iteration/step budgets must be positive");
  if (setup.divergence_factor <= 0)
    throw std::invalid_argument("run_lap: divergence factor must be positive");
  if (setup.start_speed < 0)
    throw std::invalid_argument("run_lap: start speed must be nonnegative");
  const bool is_gp = variant == Variant::kGpFull || variant == Variant::kGpSparse;
  if (is_gp && !setup.gp)
    throw std::invalid_argument("run_lap: GP variant without a fitted model");
  if (variant == Variant::kGpSparse && setup.inducing_count < 1)
    throw std::invalid_argument("run_lap: inducing count must be positive");

  const track::Track& trk = *setup.trk;
  const int N = setup.mpcc.horizon;
  const double L = trk.length();
  const vehicle::Params& model_params =
      variant == Variant::kReference ? setup.plant : setup.nominal;

  // Residual belief per variant; the sparse approximation is a per-run
  // snapshot whose inducing set starts spread over the training lap and then
  // follows the planned horizon.
  ZeroResidual zero;
  std::optional<GpResidual> full_res;
  std::optional<gp::SparseModel> sparse;
  std::optional<SparseGpResidual> sparse_res;
  const ResidualModel* residual = &zero;
  if (variant == Variant::kGpFull) {
    full_res.emplace(*setup.gp);
    residual = &*full_res;
  } else if (variant == Variant::kGpSparse) {
    gp::InducingSet ind0 =
        gp::select_inducing(setup.gp->data().Z, setup.inducing_count, 1.0,
                            setup.gp->hyper(), setup.inducing_min_sep);
    sparse.emplace(gp::SparseModel::build(*setup.gp, std::move(ind0)));
    sparse_res.emplace(*sparse);
    residual = &*sparse_res;
  }
  mpcc::VehicleMeanDynamics model(model_params, *residual);

  propagation::TubeOptions topt;
  topt.chi2_level = setup.mpcc.chi2_level;
  topt.n_tight = setup.mpcc.n_tight;
  topt.include_process_noise = true;
  topt.track_radius = trk.half_width();

  LapLog log;
  log.config_hash = setup.config_hash;
  log.seed = seed;
  log.variant = variant_name(variant);
  log.Ts = model_params.Ts;
  log.track_length = L;
  log.theta_start = setup.start_theta;

  const track::CenterlinePose start_pose = trk.eval(setup.start_theta);
  vehicle::State x = vehicle::State::Zero();
  x(vehicle::SX) = start_pose.Xc;
  x(vehicle::SY) = start_pose.Yc;
  x(vehicle::SPHI) = start_pose.Phic;
  x(vehicle::SVX) = setup.start_speed;

  std::mt19937_64 rng(seed);
  solver::SQPSolver sqp(setup.solver);
  mpcc::Solution prev;
  bool have_prev = false;
  vehicle::Control u_prev = vehicle::Control::Zero();
  double v_prev = 0;
  double theta_u = setup.start_theta;
  log.steps.reserve(static_cast<size_t>(setup.step_budget));

  for (int k = 0; k < setup.step_budget; ++k) {
    if (!x.allFinite()) {
      log.diverged = true;
      break;
    }
    const Eigen::Vector2d pos(x(vehicle::SX), x(vehicle::SY));
    const double wrapped = trk.project(pos, theta_u).value_or(trk.wrap(theta_u));
    theta_u = unwrap_near(wrapped, theta_u, L, trk.closed());
    const track::CenterlinePose cp = trk.eval(theta_u);
    const double dist = (pos - Eigen::Vector2d(cp.Xc, cp.Yc)).norm();
    if (theta_u - setup.start_theta >= L) {
      log.completed = true;
      break;
    }
    if (dist > setup.divergence_factor * trk.half_width()) {
      log.diverged = true;
      break;
    }

    StepRecord rec;
    rec.k = k;
    rec.t = k * model_params.Ts;
    rec.x = x;
    rec.theta = theta_u;
    rec.slack0 = std::max(0.0, dist - trk.half_width());

    try {
      const mpcc::Reference ref =
          have_prev ? mpcc::shift_solution(prev, x, theta_u)
                    : mpcc::cold_start_reference(model_params, x, theta_u, N);
      const propagation::VarianceTube tube =
          is_gp ? propagation::build_variance_tube(
                      model_params, ref.tube_points(), *residual,
                      setup.noise.sigma_w, topt)
                : zero_tube(N);
      const mpcc::OCP ocp =
          mpcc::build_ocp(x, theta_u, ref, tube, trk, model, model_params,
                          u_prev, v_prev, setup.mpcc);
      const Eigen::VectorXd z0 = mpcc::pack_decision(ocp, ref);

      auto t0 = clock_type::now();
      auto [sol, rep] = sqp.solve(ocp, z0, setup.sqp_iterations);
      rec.solve_time = seconds_since(t0);
      rec.sqp_iterations = rep.iterations;
      rec.margin1 = tube.margins.size() > 1 ? tube.margins[1] : 0.0;

      // The box constraints already enforce these; the clamp is a safety
      // assertion on the applied input.
      vehicle::Control u0 = ocp.u_at(sol.z, 0);
      u0(vehicle::UP) = std::clamp(u0(vehicle::UP), setup.mpcc.p_min, setup.mpcc.p_max);
      u0(vehicle::UDELTA) = std::clamp(u0(vehicle::UDELTA), -model_params.delta_max,
                                       model_params.delta_max);
      const double v0 = std::clamp(ocp.v_at(sol.z, 0), 0.0, setup.mpcc.v_max_step);
      rec.u = u0;
      rec.v = v0;

      const vehicle::State predicted = model.step(x, u0);
      const vehicle::State next = vehicle::plant_step(
          x, u0, setup.plant, setup.noise, rng, setup.plant_substeps);
      rec.err = predicted - next;

      if (variant == Variant::kGpSparse) {
        t0 = clock_type::now();
        Eigen::MatrixXd traj(N, NZ);
        for (int i = 0; i < N; ++i)
          traj.row(i) =
              regressor(sol.states[i], ocp.u_at(sol.z, i)).transpose();
        const gp::InducingSet target =
            gp::select_inducing(traj, setup.inducing_count, setup.inducing_decay,
                                setup.gp->hyper(), setup.inducing_min_sep);
        sparse->refresh(target, setup.refresh_match_tol);
        rec.refresh_time = seconds_since(t0);
      }

      prev = std::move(sol);
      have_prev = true;
      u_prev = u0;
      v_prev = v0;
      x = next;
    } catch (const std::domain_error&) {
      log.diverged = true;  // non-finite forces: the run left the physical regime
      break;
    } catch (const std::runtime_error&) {
      log.diverged = true;  // factorization breakdown on a blown-up iterate
      break;
    }
    log.steps.push_back(rec);
  }

  log.theta_final = theta_u;
  return log;
}

gp::Dataset collect_training_data(const LapLog& log, const vehicle::Params& nominal,
                                  int count) {
  const int pairs = static_cast<int>(log.steps.size()) - 1;
  if (pairs < 1)
    throw std::invalid_argument("collect_training_data: log needs at least two records");
  if (count < 1)
    throw std::invalid_argument("collect_training_data: count must be positive");
  const int m = std::min(count, pairs);
  gp::Dataset data;
  data.Z.resize(m, NZ);
  data.Y.resize(m, ND);
  for (int j = 0; j < m; ++j) {
    const int i = static_cast<int>(static_cast<std::int64_t>(j) * pairs / m);
    const StepRecord& a = log.steps[i];
    const StepRecord& b = log.steps[i + 1];
    data.Z.row(j) = regressor(a.x, a.u).transpose();
    const vehicle::State pred = vehicle::discrete_step(a.x, a.u, nominal);
    data.Y(j, 0) = b.x(vehicle::SVX) - pred(vehicle::SVX);
    data.Y(j, 1) = b.x(vehicle::SVY) - pred(vehicle::SVY);
    data.Y(j, 2) = b.x(vehicle::SOMEGA) - pred(vehicle::SOMEGA);
  }
  return data;
}

namespace {

gp::Hyper hyper_init_from(const gp::Dataset& data) {
  gp::Hyper hyper(static_cast<size_t>(data.output_dim()));
  for (int d = 0; d < data.output_dim(); ++d) {
    auto& h = hyper[d];
    const Eigen::VectorXd col = data.Y.col(d);
    const double mean = col.mean();
    const double var =
        (col.array() - mean).square().sum() / std::max(1, data.size() - 1);
    h.sigma_f2 = std::max(var, 1e-8);
    h.sigma_n2 = std::max(0.1 * h.sigma_f2, 1e-10);
    h.length2.resize(data.input_dim());
    for (int i = 0; i < data.input_dim(); ++i) {
      const double range = data.Z.col(i).maxCoeff() - data.Z.col(i).minCoeff();
      h.length2(i) = std::max(range * range / 4.0, 1e-4);
    }
  }
  return hyper;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg, const RunSink& on_run) {
  if (!cfg.trk) throw std::invalid_argument("run_experiment: track is null");
  if (cfg.variants.empty())
    throw std::invalid_argument("run_experiment: no variants requested");
  if (cfg.seeds.empty())
    throw std::invalid_argument("run_experiment: no seeds given");
  for (size_t i = 0; i < cfg.variants.size(); ++i)
    for (size_t j = i + 1; j < cfg.variants.size(); ++j)
      if (cfg.variants[i] == cfg.variants[j])
        throw std::invalid_argument("run_experiment: duplicate variant");
  if (cfg.perturbation < 0 || cfg.perturbation >= 1)
    throw std::invalid_argument("run_experiment: perturbation must be in [0, 1)");
  if (cfg.race_noise_scale < 0 || cfg.train_noise_scale < 0)
    throw std::invalid_argument("run_experiment: noise scales must be nonnegative");
  if ((cfg.step_noise_var.array() < 0).any())
    throw std::invalid_argument("run_experiment: noise variances must be nonnegative");
  if (cfg.gp_points < 1 || cfg.hyper_budget < 0)
    throw std::invalid_argument("run_experiment: bad GP fitting settings");
  std::string why;
  if (!cfg.mpcc.validate(&why))
    throw std::invalid_argument("run_experiment: " + why);

  ExperimentReport report;
  report.config_hash = cfg.config_hash;

  RunSetup base;
  base.trk = cfg.trk;
  base.nominal = cfg.nominal;
  base.plant = vehicle::perturbed_plant(cfg.nominal, cfg.perturbation, cfg.plant_seed);
  base.noise.sigma_w = cfg.step_noise_var * cfg.race_noise_scale;
  base.mpcc = cfg.mpcc;
  base.solver = cfg.solver;
  base.sqp_iterations = cfg.sqp_iterations;
  base.plant_substeps = cfg.plant_substeps;
  base.step_budget = cfg.step_budget;
  base.start_theta = cfg.start_theta;
  base.start_speed = cfg.start_speed;
  base.inducing_count = cfg.inducing_count;
  base.inducing_decay = cfg.inducing_decay;
  base.inducing_min_sep = cfg.inducing_min_sep;
  base.refresh_match_tol = cfg.refresh_match_tol;
  base.config_hash = cfg.config_hash;

  const bool need_gp =
      std::any_of(cfg.variants.begin(), cfg.variants.end(), [](Variant v) {
        return v == Variant::kGpFull || v == Variant::kGpSparse;
      });

  std::optional<gp::Model> model;
  if (need_gp) {
    RunSetup train_setup = base;
    train_setup.noise.sigma_w = cfg.step_noise_var * cfg.train_noise_scale;
    const LapLog train_log = run_lap(Variant::kBaseline, train_setup, cfg.train_seed);
    report.train_metrics = compute_metrics(train_log);
    if (report.train_metrics.complete) {
      gp::Dataset data = collect_training_data(train_log, cfg.nominal, cfg.gp_points);
      const gp::Hyper init = hyper_init_from(data);
      report.hyper = gp::fit_hyperparameters(data, init, cfg.hyper_budget);
      model.emplace(gp::Model::fit(std::move(data), report.hyper));
      base.gp = &*model;
      report.trained = true;
    }
  }

  std::vector<std::pair<Variant, std::uint64_t>> tasks;
  for (Variant v : cfg.variants) {
    const bool is_gp = v == Variant::kGpFull || v == Variant::kGpSparse;
    if (is_gp && !report.trained) continue;
    for (std::uint64_t s : cfg.seeds) tasks.emplace_back(v, s);
  }

  std::vector<LapLog> logs(tasks.size());
  std::vector<RunResult> results(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  auto work = [&](size_t i) {
    try {
      logs[i] = run_lap(tasks[i].first, base, tasks[i].second);
      RunResult& r = results[i];
      r.variant = tasks[i].first;
      r.seed = tasks[i].second;
      r.metrics = compute_metrics(logs[i]);
      r.outlier = !r.metrics.complete;
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const int jobs = std::clamp<int>(cfg.jobs, 1, std::max<int>(1, tasks.size()));
  if (jobs == 1 || tasks.size() < 2) {
    for (size_t i = 0; i < tasks.size(); ++i) work(i);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(jobs);
    for (int t = 0; t < jobs; ++t)
      pool.emplace_back([&] {
        for (size_t i; (i = next.fetch_add(1)) < tasks.size();) work(i);
      });
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  report.runs = results;
  for (Variant v : cfg.variants) {
    VariantSummary s;
    s.variant = v;
    std::vector<double> pooled_times;
    double lap = 0, slack = 0, err = 0, solve = 0, refresh = 0, steps = 0;
    for (size_t i = 0; i < tasks.size(); ++i) {
      if (tasks[i].first != v) continue;
      ++s.runs;
      if (results[i].outlier) {
        ++s.outliers;
        continue;
      }
      ++s.completed;
      const Metrics& m = results[i].metrics;
      lap += m.lap_time;
      slack += m.mean_slack_sq;
      err += m.mean_err_norm;
      solve += m.mean_solve_time;
      refresh += m.mean_refresh_time;
      steps += m.steps;
      for (const StepRecord& r : logs[i].steps) pooled_times.push_back(r.solve_time);
    }
    if (s.runs == 0) continue;  // GP variant skipped for lack of a model
    if (s.completed > 0) {
      const double n = s.completed;
      s.mean.lap_time = lap / n;
      s.mean.mean_slack_sq = slack / n;
      s.mean.mean_err_norm = err / n;
      s.mean.mean_solve_time = solve / n;
      s.mean.mean_refresh_time = refresh / n;
      s.mean.steps = static_cast<int>(std::lround(steps / n));
      std::sort(pooled_times.begin(), pooled_times.end());
      const int rank =
          std::clamp(static_cast<int>(std::ceil(0.999 * pooled_times.size())), 1,
                     static_cast<int>(pooled_times.size()));
      s.mean.p999_solve_time = pooled_times[rank - 1];
    }
    s.mean.complete = s.completed == s.runs;
    report.variants.push_back(std::move(s));
  }

  if (on_run)
    for (size_t i = 0; i < tasks.size(); ++i) on_run(logs[i], results[i].metrics);
  return report;
}

}  // namespace racer::sim
