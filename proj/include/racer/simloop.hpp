#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "racer/gp.hpp"
#include "racer/mpcc.hpp"
#include "racer/solver.hpp"
#include "racer/track.hpp"
#include "racer/vehicle.hpp"

namespace racer::sim {

enum class Variant { kBaseline, kGpFull, kGpSparse, kReference };

const char* variant_name(Variant v);
std::optional<Variant> variant_from_name(const std::string& name);

/// One control period of a closed-loop run. Wall times are measurement
/// noise by nature and stay out of the deterministic serialization.
struct StepRecord {
  int k = 0;
  double t = 0;                                  // k * Ts [s]
  vehicle::State x = vehicle::State::Zero();     // measured state
  vehicle::Control u = vehicle::Control::Zero(); // applied input
  double v = 0;                                  // applied progress rate [m/step]
  double theta = 0;                              // unwrapped measured progress [m]
  double slack0 = 0;                             // boundary overshoot of x, >= 0 [m]
  vehicle::State err = vehicle::State::Zero();   // predicted mean minus realized next state
  double margin1 = 0;                            // corridor tightening at stage 1 [m]
  int sqp_iterations = 0;
  double solve_time = 0;    // [s]
  double refresh_time = 0;  // [s]
};

/// Closed-loop trace of one lap attempt plus the identity needed to replay
/// it. The CSV round-trip covers every deterministic field; wall times go
/// to a separate sidecar file so re-runs compare bitwise.
struct LapLog {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::string variant;
  double Ts = 0;
  double track_length = 0;
  double theta_start = 0;
  double theta_final = 0;  // first measurement at or past the finish line
  bool completed = false;
  bool diverged = false;
  std::vector<StepRecord> steps;

  bool save_csv(const std::string& path) const;
  bool save_timing_csv(const std::string& path) const;
  static std::optional<LapLog> load_csv(const std::string& path, std::string* error);
};

struct Metrics {
  bool complete = false;  // full lap, no divergence
  int steps = 0;
  double lap_time = 0;       // [s], interpolated at the finish-line crossing
  double mean_slack_sq = 0;  // mean of slack0^2 [m^2]
  double mean_err_norm = 0;  // mean one-step prediction error norm
  double mean_solve_time = 0;
  double p999_solve_time = 0;  // nearest-rank 99.9th percentile
  double mean_refresh_time = 0;
};

/// Pure arithmetic over the log; replaying a saved log reproduces every
/// deterministic metric exactly.
Metrics compute_metrics(const LapLog& log);

/// Everything one closed-loop run needs. The track and (for GP variants)
/// the fitted model are borrowed and must outlive the run.
struct RunSetup {
  const track::Track* trk = nullptr;
  vehicle::Params nominal;   // controller model parameters
  vehicle::Params plant;     // simulated true parameters
  vehicle::NoiseSpec noise;  // per-step process noise on the plant
  mpcc::Config mpcc;
  solver::SQPOptions solver;
  int sqp_iterations = 75;  // per-step solver cap
  int plant_substeps = 4;
  int step_budget = 2000;
  double start_theta = 0;
  double start_speed = 1.0;        // flying start [m/s]; see cold_start_reference
  double divergence_factor = 5.0;  // abort beyond this multiple of the half-width
  const gp::Model* gp = nullptr;   // required for kGpFull / kGpSparse
  int inducing_count = 10;
  double inducing_decay = 0.8;     // geometric density along the horizon
  double inducing_min_sep = 0.2;   // scaled-space separation floor
  double refresh_match_tol = 0.05;
  std::uint64_t config_hash = 0;
};

/// Closed-loop simulation of one lap attempt: measure, project, solve,
/// apply, log, refresh. Terminates at the finish line, on divergence, or at
/// the step budget; numeric blow-ups abort the run as a divergence instead
/// of propagating.
LapLog run_lap(Variant variant, const RunSetup& setup, std::uint64_t seed);

/// One-step model residuals from consecutive log records: z_j = [x_j; u_j],
/// y_j = velocity rows of x_{j+1} - f(x_j, u_j), uniformly strided down to
/// at most `count` points. Throws std::invalid_argument on logs with fewer
/// than two records.
gp::Dataset collect_training_data(const LapLog& log, const vehicle::Params& nominal,
                                  int count);

struct ExperimentConfig {
  const track::Track* trk = nullptr;
  vehicle::Params nominal;
  double perturbation = 0.15;
  std::uint64_t plant_seed = 1;
  Eigen::Vector3d step_noise_var = Eigen::Vector3d::Zero();  // per-step variance
  double race_noise_scale = 1.0;
  double train_noise_scale = 1.0;
  std::uint64_t train_seed = 1;
  std::vector<Variant> variants;
  std::vector<std::uint64_t> seeds;
  mpcc::Config mpcc;
  solver::SQPOptions solver;
  int sqp_iterations = 75;
  int plant_substeps = 4;
  int step_budget = 2000;
  double start_theta = 0;
  double start_speed = 1.0;
  int gp_points = 350;
  int hyper_budget = 60;  // likelihood evaluations per output dimension
  int inducing_count = 10;
  double inducing_decay = 0.8;
  double inducing_min_sep = 0.2;
  double refresh_match_tol = 0.05;
  int jobs = 1;
  std::uint64_t config_hash = 0;
};

struct RunResult {
  Variant variant = Variant::kBaseline;
  std::uint64_t seed = 0;
  Metrics metrics;
  bool outlier = false;  // incomplete or diverged; excluded from the averages
};

struct VariantSummary {
  Variant variant = Variant::kBaseline;
  int runs = 0;
  int completed = 0;
  int outliers = 0;
  Metrics mean;  // averaged over completed runs; p999 pooled across them
};

struct ExperimentReport {
  std::uint64_t config_hash = 0;
  bool trained = false;  // GP fitted from the training lap
  Metrics train_metrics;
  gp::Hyper hyper;
  std::vector<RunResult> runs;
  std::vector<VariantSummary> variants;
};

/// Per-run artifact hook, called in run order after all runs finish.
using RunSink = std::function<void(const LapLog&, const Metrics&)>;

/// Full pipeline: perturb the plant, drive a baseline training lap, fit the
/// residual model, race every variant over every seed (common noise stream
/// per seed), and aggregate. GP variants are skipped with trained = false
/// when the training lap fails. Runs execute on up to `jobs` threads;
/// results and artifacts keep the sequential order either way.
ExperimentReport run_experiment(const ExperimentConfig& cfg, const RunSink& on_run = {});

}  // namespace racer::sim
