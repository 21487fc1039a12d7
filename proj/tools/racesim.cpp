// racesim: run closed-loop contouring-control experiments, replay saved
// logs, and validate experiment configs.
//
//   racesim race config/experiment.cfg --seeds 1..20 --variants baseline,gp-sparse
//   racesim replay out/run_baseline_1.csv
//   racesim validate config/experiment.cfg --set plant.perturbation=0.2
//
// Exit codes: 0 success, 1 runtime failure (including replay mismatch),
// 2 configuration or usage error. All artifacts land inside out.dir.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "racer/config.hpp"
#include "racer/mpcc.hpp"
#include "racer/simloop.hpp"
#include "racer/track.hpp"
#include "racer/vehicle.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

// "a,b,,c" -> {"a","b","c"}; used so comma lists and whitespace lists are
// interchangeable on the command line and in config files.
std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (auto t = trim(cur); !t.empty()) out.push_back(t);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (auto t = trim(cur); !t.empty()) out.push_back(t);
  return out;
}

std::string join_spaces(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out += ' ';
    out += p;
  }
  return out;
}

bool parse_u64(const std::string& s, std::uint64_t* out) {
  if (s.empty() || s[0] == '-' || s[0] == '+') return false;
  errno = 0;
  char* end = nullptr;
  unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (errno != 0 || end != s.c_str() + s.size()) return false;
  *out = v;
  return true;
}

// Seed tokens are plain integers or inclusive ranges like "3..12".
bool expand_seed_token(const std::string& tok, std::vector<std::uint64_t>* out,
                       std::string* why) {
  auto dots = tok.find("..");
  if (dots == std::string::npos) {
    std::uint64_t v = 0;
    if (!parse_u64(tok, &v)) {
      *why = "seed '" + tok + "' is not a non-negative integer";
      return false;
    }
    out->push_back(v);
    return true;
  }
  std::uint64_t a = 0, b = 0;
  if (!parse_u64(tok.substr(0, dots), &a) || !parse_u64(tok.substr(dots + 2), &b) ||
      b < a) {
    *why = "seed range '" + tok + "' must look like A..B with A <= B";
    return false;
  }
  if (b - a >= 100000) {
    *why = "seed range '" + tok + "' spans more than 100000 seeds";
    return false;
  }
  for (std::uint64_t v = a; v <= b; ++v) out->push_back(v);
  return true;
}

// The config argument resolves against the working directory first; when
// that misses and the path is relative, RACESIM_CONFIG_DIR supplies the
// default configuration directory.
std::string resolve_config_path(const std::string& arg) {
  fs::path p(arg);
  std::error_code ec;
  if (fs::exists(p, ec)) return p.string();
  if (p.is_relative()) {
    if (const char* dir = std::getenv("RACESIM_CONFIG_DIR")) {
      fs::path alt = fs::path(dir) / p;
      if (fs::exists(alt, ec)) return alt.string();
    }
  }
  return p.string();
}

// track.file / vehicle.file are siblings of the experiment config unless
// given as absolute paths, so a config directory relocates as a unit.
std::string resolve_sibling(const std::string& cfg_path, const std::string& rel) {
  fs::path p(rel);
  if (p.is_absolute()) return p.string();
  return (fs::path(cfg_path).parent_path() / p).string();
}

struct CliOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::string seeds;
  std::string variants;
  std::string out;
  int jobs = -1;  // -1: take run.jobs from the config
};

/// Experiment config merged from file and command-line overrides, with the
/// track and vehicle files loaded. Errors aggregate instead of failing fast
/// so `validate` reports everything at once.
struct Loaded {
  racer::config::KV kv;
  std::optional<racer::track::Track> trk;
  racer::sim::ExperimentConfig cfg;
  std::string out_dir;
  std::string config_path;
  std::vector<std::string> errors;

  bool ok() const { return errors.empty(); }
};

void check(Loaded* L, bool good, const std::string& why) {
  if (!good) L->errors.push_back(why);
}

Loaded load_experiment(const CliOptions& opt) {
  Loaded L;
  L.config_path = resolve_config_path(opt.config_path);
  L.kv = racer::config::KV::parse_file(L.config_path);

  for (const auto& s : opt.sets) {
    auto eq = s.find('=');
    if (eq == std::string::npos || trim(s.substr(0, eq)).empty()) {
      L.errors.push_back("--set expects key=value, got '" + s + "'");
      continue;
    }
    L.kv.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  if (!opt.variants.empty())
    L.kv.set("run.variants", join_spaces(split_commas(opt.variants)));
  if (!opt.seeds.empty()) L.kv.set("run.seeds", join_spaces(split_commas(opt.seeds)));
  if (opt.jobs >= 0) L.kv.set("run.jobs", std::to_string(opt.jobs));
  if (!opt.out.empty()) L.kv.set("out.dir", opt.out);

  auto& kv = L.kv;
  auto& cfg = L.cfg;

  // The hash stamps every artifact with the experiment's identity: the
  // merged config minus the keys that cannot change a computed number
  // (where artifacts land, how many threads raced). Re-running the same
  // experiment into a different directory keeps the same stamp.
  {
    std::istringstream canon(kv.canonical());
    std::string line, hashed;
    while (std::getline(canon, line)) {
      if (line.rfind("out.dir=", 0) == 0 || line.rfind("run.jobs=", 0) == 0) continue;
      hashed += line;
      hashed += '\n';
    }
    cfg.config_hash = racer::config::fnv1a(hashed);
  }

  const std::string track_file = kv.require_string("track.file");
  const std::string vehicle_file = kv.require_string("vehicle.file");
  L.out_dir = kv.get_string("out.dir", "out");

  cfg.mpcc = racer::mpcc::Config::from_kv(kv);
  cfg.perturbation = kv.get_double("plant.perturbation", 0.15);
  cfg.plant_seed = static_cast<std::uint64_t>(kv.get_int("plant.seed", 1));
  cfg.plant_substeps = kv.get_int("plant.substeps", 4);

  if (kv.has("noise.step_var")) {
    auto nv = kv.get_doubles("noise.step_var");
    if (nv.size() == 3) {
      cfg.step_noise_var = Eigen::Vector3d(nv[0], nv[1], nv[2]);
    } else {
      L.errors.push_back("noise.step_var needs exactly 3 values (vx vy omega), got " +
                         std::to_string(nv.size()));
    }
  } else {
    cfg.step_noise_var = Eigen::Vector3d(1e-3, 1e-3, 0.1);
  }
  cfg.race_noise_scale = kv.get_double("noise.race_scale", 1.0);
  cfg.train_noise_scale = kv.get_double("noise.train_scale", 1.0);
  cfg.train_seed = static_cast<std::uint64_t>(kv.get_int("train.seed", 1));

  cfg.gp_points = kv.get_int("gp.points", 350);
  cfg.hyper_budget = kv.get_int("gp.hyper_budget", 60);
  cfg.inducing_count = kv.get_int("gp.inducing", 10);
  cfg.inducing_decay = kv.get_double("gp.inducing_decay", 0.8);
  cfg.inducing_min_sep = kv.get_double("gp.inducing_min_sep", 0.2);
  cfg.refresh_match_tol = kv.get_double("gp.refresh_tol", 0.05);

  cfg.sqp_iterations = kv.get_int("solver.iterations", 75);
  cfg.step_budget = kv.get_int("run.step_budget", 2000);
  cfg.start_theta = kv.get_double("run.start_theta", 0.0);
  cfg.start_speed = kv.get_double("run.start_speed", 1.0);
  cfg.jobs = kv.get_int("run.jobs", 1);

  std::vector<std::string> vtok = kv.get_strings("run.variants");
  if (vtok.empty()) vtok = {"baseline", "gp-full", "gp-sparse", "reference"};
  for (const auto& raw : vtok) {
    for (const auto& name : split_commas(raw)) {
      auto v = racer::sim::variant_from_name(name);
      if (!v) {
        L.errors.push_back("unknown variant '" + name +
                           "' (expected baseline, gp-full, gp-sparse, or reference)");
        continue;
      }
      if (std::find(cfg.variants.begin(), cfg.variants.end(), *v) !=
          cfg.variants.end()) {
        L.errors.push_back("variant '" + name + "' listed twice");
        continue;
      }
      cfg.variants.push_back(*v);
    }
  }

  std::vector<std::string> stok = kv.get_strings("run.seeds");
  if (stok.empty()) stok = {"1"};
  for (const auto& raw : stok) {
    for (const auto& tok : split_commas(raw)) {
      std::string why;
      if (!expand_seed_token(tok, &cfg.seeds, &why)) L.errors.push_back(why);
    }
  }

  // Pull in the referenced files. Their parse errors surface here with the
  // file name attached, so a missing track names its path.
  if (!track_file.empty()) {
    auto tkv = racer::config::KV::parse_file(resolve_sibling(L.config_path, track_file));
    L.trk = racer::track::Track::from_kv(tkv);
    for (const auto& e : tkv.errors()) L.errors.push_back(e);
    for (const auto& e : tkv.unknown_keys()) L.errors.push_back(e);
  }
  if (!vehicle_file.empty()) {
    auto vkv =
        racer::config::KV::parse_file(resolve_sibling(L.config_path, vehicle_file));
    cfg.nominal = racer::vehicle::Params::from_kv(vkv);
    for (const auto& e : vkv.errors()) L.errors.push_back(e);
    for (const auto& e : vkv.unknown_keys()) L.errors.push_back(e);
  }

  // from_kv and the getters above have already recorded parse and mpcc
  // validation problems; the checks below cover what only the assembled
  // experiment can know. Everything aggregates into one report.
  for (const auto& e : kv.errors()) L.errors.push_back(e);
  for (const auto& e : kv.unknown_keys()) L.errors.push_back(e);

  check(&L, cfg.perturbation >= 0.0 && cfg.perturbation < 1.0,
        "plant.perturbation must lie in [0, 1)");
  check(&L, cfg.plant_substeps >= 1, "plant.substeps must be at least 1");
  check(&L, cfg.step_noise_var.minCoeff() >= 0.0,
        "noise.step_var entries must be non-negative");
  check(&L, cfg.race_noise_scale >= 0.0 && cfg.train_noise_scale >= 0.0,
        "noise scales must be non-negative");
  check(&L, cfg.gp_points >= 1, "gp.points must be at least 1");
  check(&L, cfg.hyper_budget >= 0, "gp.hyper_budget must be non-negative");
  check(&L, cfg.inducing_count >= 1, "gp.inducing must be at least 1");
  check(&L, cfg.inducing_decay > 0.0 && cfg.inducing_decay <= 1.0,
        "gp.inducing_decay must lie in (0, 1]");
  check(&L, cfg.inducing_min_sep >= 0.0, "gp.inducing_min_sep must be non-negative");
  check(&L, cfg.refresh_match_tol >= 0.0, "gp.refresh_tol must be non-negative");
  check(&L, cfg.sqp_iterations >= 1, "solver.iterations must be at least 1");
  check(&L, cfg.step_budget >= 1, "run.step_budget must be at least 1");
  check(&L, cfg.start_speed >= 0.0, "run.start_speed must be non-negative");
  check(&L, cfg.jobs >= 1, "run.jobs must be at least 1");
  check(&L, !cfg.seeds.empty(), "run.seeds expanded to no seeds");
  check(&L, !L.out_dir.empty(), "out.dir must not be empty");

  return L;
}

void print_errors(const Loaded& L) {
  for (const auto& e : L.errors) std::cerr << "error: " << e << "\n";
  std::cerr << L.errors.size() << " configuration error"
            << (L.errors.size() == 1 ? "" : "s") << "\n";
}

bool write_text(const fs::path& path, const std::string& text, std::string* why) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  out.flush();
  if (!out) {
    *why = "cannot write " + path.string();
    return false;
  }
  return true;
}

json metrics_json(const racer::sim::LapLog& log, const racer::sim::Metrics& m) {
  return json{{"variant", log.variant},
              {"seed", log.seed},
              {"config_hash", hash_hex(log.config_hash)},
              {"completed", log.completed},
              {"diverged", log.diverged},
              {"complete", m.complete},
              {"steps", m.steps},
              {"lap_time", m.lap_time},
              {"mean_slack_sq", m.mean_slack_sq},
              {"mean_err_norm", m.mean_err_norm}};
}

// Raced path plus the centerline and the tightened corridor radius actually
// enforced at each step; enough to plot a lap without re-running it.
std::string trajectory_csv(const racer::sim::LapLog& log,
                           const racer::track::Track& trk) {
  std::string out;
  out += "# trajectory 1\n";
  out += "# config_hash " + hash_hex(log.config_hash) + "\n";
  out += "# seed " + std::to_string(log.seed) + "\n";
  out += "# variant " + log.variant + "\n";
  out += "k,t,X,Y,Xc,Yc,radius\n";
  for (const auto& rec : log.steps) {
    auto pose = trk.eval(rec.theta);
    out += std::to_string(rec.k);
    out += ',' + g17(rec.t);
    out += ',' + g17(rec.x(racer::vehicle::SX));
    out += ',' + g17(rec.x(racer::vehicle::SY));
    out += ',' + g17(pose.Xc);
    out += ',' + g17(pose.Yc);
    out += ',' + g17(trk.half_width() - rec.margin1);
    out += '\n';
  }
  return out;
}

int cmd_validate(const CliOptions& opt) {
  Loaded L = load_experiment(opt);
  if (!L.ok()) {
    print_errors(L);
    return 2;
  }
  std::vector<std::string> vnames;
  for (auto v : L.cfg.variants) vnames.emplace_back(racer::sim::variant_name(v));
  std::ostringstream seeds;
  const std::size_t shown = std::min<std::size_t>(L.cfg.seeds.size(), 10);
  for (std::size_t i = 0; i < shown; ++i) {
    if (i) seeds << ' ';
    seeds << L.cfg.seeds[i];
  }
  if (shown < L.cfg.seeds.size()) seeds << " ...";

  std::cout << "ok: " << L.config_path << "\n"
            << "  hash     " << hash_hex(L.cfg.config_hash) << "\n"
            << "  track    length " << L.trk->length() << " m, half-width "
            << L.trk->half_width() << " m, " << (L.trk->closed() ? "closed" : "open")
            << "\n"
            << "  variants " << join_spaces(vnames) << "\n"
            << "  seeds    " << L.cfg.seeds.size() << " (" << seeds.str() << ")\n"
            << "  runs     " << L.cfg.variants.size() * L.cfg.seeds.size() << " on "
            << L.cfg.jobs << (L.cfg.jobs == 1 ? " thread" : " threads") << "\n"
            << "  out      " << L.out_dir << "\n";
  return 0;
}

int cmd_race(const CliOptions& opt) {
  Loaded L = load_experiment(opt);
  if (!L.ok()) {
    print_errors(L);
    return 2;
  }
  L.cfg.trk = &*L.trk;

  const fs::path out_dir(L.out_dir);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) {
    std::cerr << "error: cannot create " << out_dir.string() << ": " << ec.message()
              << "\n";
    return 1;
  }

  const std::string hash = hash_hex(L.cfg.config_hash);
  std::vector<std::string> io_errors;
  auto sink = [&](const racer::sim::LapLog& log, const racer::sim::Metrics& m) {
    const std::string stem = "run_" + log.variant + "_" + std::to_string(log.seed);
    std::string why;
    if (!log.save_csv((out_dir / (stem + ".csv")).string()))
      io_errors.push_back("cannot write " + (out_dir / (stem + ".csv")).string());
    if (!log.save_timing_csv((out_dir / (stem + ".timing.csv")).string()))
      io_errors.push_back("cannot write " +
                          (out_dir / (stem + ".timing.csv")).string());
    if (!write_text(out_dir / (stem + ".json"), metrics_json(log, m).dump(2) + "\n",
                    &why))
      io_errors.push_back(why);
    if (!write_text(out_dir / ("trajectory_" + log.variant + "_" +
                               std::to_string(log.seed) + ".csv"),
                    trajectory_csv(log, *L.trk), &why))
      io_errors.push_back(why);
  };

  racer::sim::ExperimentReport rep;
  try {
    rep = racer::sim::run_experiment(L.cfg, sink);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  const bool need_gp = std::any_of(
      L.cfg.variants.begin(), L.cfg.variants.end(), [](racer::sim::Variant v) {
        return v == racer::sim::Variant::kGpFull || v == racer::sim::Variant::kGpSparse;
      });

  json report;
  report["config_hash"] = hash;
  report["trained"] = rep.trained;
  if (need_gp) {
    report["train"] = json{{"steps", rep.train_metrics.steps},
                           {"complete", rep.train_metrics.complete},
                           {"lap_time", rep.train_metrics.lap_time},
                           {"mean_slack_sq", rep.train_metrics.mean_slack_sq},
                           {"mean_err_norm", rep.train_metrics.mean_err_norm}};
  }
  if (rep.trained) {
    json dims = json::array();
    for (const auto& h : rep.hyper) {
      json lens = json::array();
      for (int i = 0; i < h.length2.size(); ++i) lens.push_back(h.length2(i));
      dims.push_back(json{{"sigma_f2", h.sigma_f2},
                          {"sigma_n2", h.sigma_n2},
                          {"length2", lens}});
    }
    report["hyper"] = dims;
  }
  json runs = json::array();
  json timing_runs = json::array();
  for (const auto& r : rep.runs) {
    const char* vn = racer::sim::variant_name(r.variant);
    runs.push_back(json{{"variant", vn},
                        {"seed", r.seed},
                        {"outlier", r.outlier},
                        {"complete", r.metrics.complete},
                        {"steps", r.metrics.steps},
                        {"lap_time", r.metrics.lap_time},
                        {"mean_slack_sq", r.metrics.mean_slack_sq},
                        {"mean_err_norm", r.metrics.mean_err_norm}});
    timing_runs.push_back(json{{"variant", vn},
                               {"seed", r.seed},
                               {"mean_solve_time", r.metrics.mean_solve_time},
                               {"p999_solve_time", r.metrics.p999_solve_time},
                               {"mean_refresh_time", r.metrics.mean_refresh_time}});
  }
  report["runs"] = runs;
  json summaries = json::array();
  json timing_summaries = json::array();
  for (const auto& s : rep.variants) {
    const char* vn = racer::sim::variant_name(s.variant);
    summaries.push_back(json{{"variant", vn},
                             {"runs", s.runs},
                             {"completed", s.completed},
                             {"outliers", s.outliers},
                             {"steps", s.mean.steps},
                             {"lap_time", s.mean.lap_time},
                             {"mean_slack_sq", s.mean.mean_slack_sq},
                             {"mean_err_norm", s.mean.mean_err_norm}});
    timing_summaries.push_back(json{{"variant", vn},
                                    {"mean_solve_time", s.mean.mean_solve_time},
                                    {"p999_solve_time", s.mean.p999_solve_time},
                                    {"mean_refresh_time", s.mean.mean_refresh_time}});
  }
  report["variants"] = summaries;

  json timing;
  timing["config_hash"] = hash;
  timing["runs"] = timing_runs;
  timing["variants"] = timing_summaries;

  std::string why;
  if (!write_text(out_dir / "report.json", report.dump(2) + "\n", &why))
    io_errors.push_back(why);
  if (!write_text(out_dir / "timing.json", timing.dump(2) + "\n", &why))
    io_errors.push_back(why);

  if (need_gp) {
    if (rep.trained) {
      std::printf("training lap: %d steps, model fitted\n", rep.train_metrics.steps);
    } else {
      std::printf("training lap incomplete after %d steps; GP variants skipped\n",
                  rep.train_metrics.steps);
    }
  }
  std::printf("%-10s %5s %5s %9s %11s %11s %9s\n", "variant", "runs", "done",
              "lap_time", "slack_sq", "err_norm", "solve_ms");
  for (const auto& s : rep.variants) {
    std::printf("%-10s %5d %5d %9.3f %11.3e %11.4f %9.1f\n",
                racer::sim::variant_name(s.variant), s.runs, s.completed,
                s.mean.lap_time, s.mean.mean_slack_sq, s.mean.mean_err_norm,
                1e3 * s.mean.mean_solve_time);
  }
  std::printf("report: %s\n", (out_dir / "report.json").string().c_str());

  for (const auto& e : io_errors) std::cerr << "error: " << e << "\n";
  return io_errors.empty() ? 0 : 1;
}

// Merge wall times from the sidecar back into the log so replay can print
// full metrics. Identity or shape mismatches are reported, not patched.
bool merge_timing(const fs::path& sidecar, racer::sim::LapLog* log, std::string* why) {
  std::ifstream in(sidecar, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  std::string line;
  std::size_t row = 0;
  bool header_seen = false;
  while (std::getline(ss, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') continue;  // identity lines; the .csv is authoritative
    if (!header_seen) {
      if (line != "k,solve_time,refresh_time") {
        *why = sidecar.string() + ": unexpected column header";
        return false;
      }
      header_seen = true;
      continue;
    }
    int k = 0;
    double solve = 0, refresh = 0;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf", &k, &solve, &refresh) != 3 ||
        row >= log->steps.size() || log->steps[row].k != k) {
      *why = sidecar.string() + ": rows do not match the log";
      return false;
    }
    log->steps[row].solve_time = solve;
    log->steps[row].refresh_time = refresh;
    ++row;
  }
  if (!header_seen || row != log->steps.size()) {
    *why = sidecar.string() + ": rows do not match the log";
    return false;
  }
  return true;
}

struct FieldCheck {
  const char* name;
  std::string stored;
  std::string replayed;
  bool ok;
};

int cmd_replay(const std::string& log_path) {
  std::string err;
  auto log = racer::sim::LapLog::load_csv(log_path, &err);
  if (!log) {
    std::cerr << "error: " << err << "\n";
    return 1;
  }

  fs::path base(log_path);
  base.replace_extension();  // run_baseline_1.csv -> run_baseline_1
  const fs::path sidecar = base.string() + ".timing.csv";
  std::error_code ec;
  bool have_timing = false;
  if (fs::exists(sidecar, ec)) {
    std::string why;
    if (!merge_timing(sidecar, &*log, &why)) {
      std::cerr << "error: " << why << "\n";
      return 1;
    }
    have_timing = true;
  }

  const fs::path summary_path = base.string() + ".json";
  std::ifstream sin(summary_path, std::ios::binary);
  if (!sin) {
    std::cerr << "error: no stored summary at " << summary_path.string() << "\n";
    return 1;
  }
  json stored = json::parse(sin, nullptr, false);
  if (stored.is_discarded() || !stored.is_object()) {
    std::cerr << "error: " << summary_path.string() << " is not valid JSON\n";
    return 1;
  }

  const auto m = racer::sim::compute_metrics(*log);

  std::vector<FieldCheck> checks;
  auto check_str = [&](const char* name, const std::string& replayed) {
    std::string s = stored.contains(name) && stored[name].is_string()
                        ? stored[name].get<std::string>()
                        : "<missing>";
    checks.push_back({name, s, replayed, s == replayed});
  };
  auto check_bool = [&](const char* name, bool replayed) {
    std::string s = stored.contains(name) && stored[name].is_boolean()
                        ? (stored[name].get<bool>() ? "true" : "false")
                        : "<missing>";
    checks.push_back({name, s, replayed ? "true" : "false",
                      s == (replayed ? "true" : "false")});
  };
  auto check_int = [&](const char* name, long long replayed) {
    std::string s = stored.contains(name) && stored[name].is_number_integer()
                        ? std::to_string(stored[name].get<long long>())
                        : "<missing>";
    checks.push_back({name, s, std::to_string(replayed), s == std::to_string(replayed)});
  };
  auto check_double = [&](const char* name, double replayed) {
    bool ok = false;
    std::string s = "<missing>";
    if (stored.contains(name) && stored[name].is_number()) {
      double v = stored[name].get<double>();
      s = g17(v);
      ok = std::abs(v - replayed) <= 1e-12;
    }
    checks.push_back({name, s, g17(replayed), ok});
  };

  check_str("variant", log->variant);
  check_int("seed", static_cast<long long>(log->seed));
  check_str("config_hash", hash_hex(log->config_hash));
  check_bool("completed", log->completed);
  check_bool("diverged", log->diverged);
  check_bool("complete", m.complete);
  check_int("steps", m.steps);
  check_double("lap_time", m.lap_time);
  check_double("mean_slack_sq", m.mean_slack_sq);
  check_double("mean_err_norm", m.mean_err_norm);

  std::printf("replayed %s: %zu steps\n", log_path.c_str(), log->steps.size());
  int bad = 0;
  for (const auto& c : checks) {
    if (c.ok) {
      std::printf("  %-14s %-22s ok\n", c.name, c.replayed.c_str());
    } else {
      std::printf("  %-14s replayed %-22s stored %-22s MISMATCH\n", c.name,
                  c.replayed.c_str(), c.stored.c_str());
      ++bad;
    }
  }
  if (have_timing) {
    std::printf("  %-14s %.1f ms mean, %.1f ms p99.9\n", "solve_time",
                1e3 * m.mean_solve_time, 1e3 * m.p999_solve_time);
  }
  if (bad) {
    std::printf("%d field%s drifted\n", bad, bad == 1 ? "" : "s");
    return 1;
  }
  std::printf("all stored metrics reproduced\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"closed-loop contouring-control race simulator"};
  app.require_subcommand(1);

  CliOptions opt;
  std::string replay_path;

  auto add_config_options = [&](CLI::App* cmd) {
    cmd->add_option("config", opt.config_path, "experiment config file")->required();
    cmd->add_option("--set", opt.sets, "override a config entry (key=value)");
    cmd->add_option("--seeds", opt.seeds, "seed list, e.g. 1,2 or 1..20");
    cmd->add_option("--variants", opt.variants,
                    "comma list of baseline, gp-full, gp-sparse, reference");
    cmd->add_option("--jobs", opt.jobs, "worker threads");
    cmd->add_option("--out", opt.out, "output directory");
  };

  auto* race = app.add_subcommand("race", "run an experiment and write its artifacts");
  add_config_options(race);
  auto* replay =
      app.add_subcommand("replay", "recompute metrics from a saved run log");
  replay->add_option("log", replay_path, "run_<variant>_<seed>.csv path")->required();
  auto* validate =
      app.add_subcommand("validate", "check a config and report every problem");
  add_config_options(validate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (race->parsed()) return cmd_race(opt);
    if (replay->parsed()) return cmd_replay(replay_path);
    return cmd_validate(opt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
