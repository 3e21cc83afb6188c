#pragma once

// Experiment orchestration: each kind composes the library modules, writes
// its artifacts into one output directory together with summary.json and a
// manifest.json from which the run can be repeated.

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "trapsim/app/config.hpp"
#include "trapsim/dynamics.hpp"
#include "trapsim/parallel.hpp"
#include "trapsim/slow_flow.hpp"
#include "trapsim/spectral.hpp"
#include "trapsim/trajectory_io.hpp"

#ifndef TRAPSIM_VERSION
#define TRAPSIM_VERSION "0.1.0"
#endif

namespace trapsim::app {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

enum class RunStatus { Success = 0, Failure = 1, Partial = 2 };

struct RunResult {
  RunStatus status = RunStatus::Success;
  fs::path out_dir;
  std::vector<std::string> artifacts;  // file names relative to out_dir
  json summary;
  json manifest;
};

// ---------------------------------------------------------------------------
// Seeds and JSON helpers
// ---------------------------------------------------------------------------

struct SeedPlanRow {
  std::uint64_t trajectory;
  std::uint64_t seed;
  std::array<std::uint64_t, kNoiseSourceCount> streams;  // surface, johnson, rf walk
};

inline std::vector<SeedPlanRow> seed_plan(std::uint64_t base_seed, std::size_t count) {
  if (count < 1) throw DomainError("seed_plan: count must be >= 1");
  std::vector<SeedPlanRow> rows(count);
  for (std::size_t i = 0; i < count; ++i) {
    rows[i].trajectory = i;
    rows[i].seed = base_seed;
    for (std::uint64_t s = 0; s < kNoiseSourceCount; ++s) {
      rows[i].streams[s] = stream_id(i, static_cast<NoiseSource>(s));
    }
  }
  return rows;
}

inline json seed_plan_json(const std::vector<SeedPlanRow>& rows) {
  json a = json::array();
  for (const auto& r : rows) {
    a.push_back({{"trajectory", r.trajectory},
                 {"seed", r.seed},
                 {"surface_stream", r.streams[0]},
                 {"johnson_stream", r.streams[1]},
                 {"rf_walk_stream", r.streams[2]}});
  }
  return a;
}

/// YAML scalars become JSON numbers, booleans, null or strings.
inline json yaml_to_json(const YAML::Node& n) {
  switch (n.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined:
      return nullptr;
    case YAML::NodeType::Sequence: {
      json a = json::array();
      for (const auto& e : n) a.push_back(yaml_to_json(e));
      return a;
    }
    case YAML::NodeType::Map: {
      json o = json::object();
      for (auto it = n.begin(); it != n.end(); ++it) {
        o[it->first.as<std::string>()] = yaml_to_json(it->second);
      }
      return o;
    }
    case YAML::NodeType::Scalar: {
      const std::string s = n.Scalar();
      if (n.Tag() == "!") return s;  // quoted in the source
      if (s == "true") return true;
      if (s == "false") return false;
      if (s == "null" || s == "~") return nullptr;
      long long i;
      if (YAML::convert<long long>::decode(n, i) &&
          s.find_first_of(".eE") == std::string::npos) {
        return i;
      }
      double d;
      if (YAML::convert<double>::decode(n, d)) return d;
      return s;
    }
  }
  return nullptr;
}

inline std::string code_version() { return TRAPSIM_VERSION; }

inline void write_json(const fs::path& p, const json& j) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot open " + p.string());
  os << j.dump(2) << '\n';
}

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

namespace experiment_detail {

struct Context {
  const RunConfig& cfg;
  fs::path dir;
  RunResult& result;
  json metrics = json::object();

  std::ofstream open(const std::string& name) {
    result.artifacts.push_back(name);
    std::ofstream os(dir / name);
    if (!os) throw std::runtime_error("cannot open " + (dir / name).string());
    os.precision(12);
    return os;
  }
  std::string path(const std::string& name) {
    result.artifacts.push_back(name);
    return (dir / name).string();
  }
};

inline std::string fixed(double v, int digits = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

inline double amplitude_star(const RunConfig& cfg) {
  const auto att = attractors(cfg.slowflow_params(), cfg.drive.epsilon_max);
  return att ? (*att)[0].A : 0.0;
}

// ---------------------------------------------------------------------------

inline void slowflow_portrait(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto p = cfg.slowflow_params();
  const double eps = cfg.drive.epsilon_max;
  const auto grid = phase_portrait(p, eps, cfg.portrait_half_width, cfg.portrait_points);
  write_portrait_csv(ctx.path("portrait.csv"), grid);
  auto os = ctx.open("fixed_points.csv");
  os << "A_m,phi_rad,stability\n";
  json fps = json::array();
  for (const auto& f : fixed_points(p, eps)) {
    os << f.A << ',' << f.phi << ',' << to_string(f.stability) << '\n';
    fps.push_back({{"A_m", f.A}, {"phi_rad", f.phi}, {"stability", to_string(f.stability)}});
  }
  ctx.result.summary["epsilon"] = eps;
  ctx.result.summary["lambda4_rad_per_s_m2"] = p.lambda4;
  ctx.result.summary["lambda6_rad_per_s_m4"] = p.lambda6;
  ctx.result.summary["fixed_points"] = fps;
  ctx.result.summary["attractor_amplitude_m"] = amplitude_star(cfg);
  ctx.result.summary["grid_points_per_axis"] = cfg.portrait_points;
}

inline void slowflow_ensemble(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto p = cfg.slowflow_params();
  std::vector<SlowState> init;
  if (cfg.ensemble_init == "ring") {
    init = ring_slow_ensemble(cfg.ensemble_size, cfg.init.temperature, p.omega_x);
  } else {
    RngStream rng(cfg.seed, 0);
    init = thermal_slow_ensemble(cfg.ensemble_size, cfg.init.temperature, p.omega_x,
                                 cfg.drive.omega_d, rng);
  }
  EnsembleOptions opt;
  opt.window_start = cfg.window_start;
  opt.window_end = cfg.window_end;
  opt.workers = cfg.workers;
  opt.trajectory_samples = cfg.trajectory_samples;
  const auto wall0 = std::chrono::steady_clock::now();
  const auto res = evolve_ensemble(init, p, cfg.duration, opt);
  ctx.metrics["wall_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  write_ensemble_csv(ctx.path("ensemble.csv"), res);
  if (cfg.trajectory_samples > 0) {
    auto os = ctx.open("trajectories.csv");
    os << "index,t_s,X_m,Y_m\n";
    const double dt = cfg.trajectory_samples > 1
                          ? cfg.duration / static_cast<double>(cfg.trajectory_samples - 1)
                          : cfg.duration;
    for (std::size_t i = 0; i < res.members.size(); ++i) {
      const auto& s = res.members[i].samples;
      for (std::size_t k = 0; k < s.size(); ++k) {
        os << i << ',' << dt * static_cast<double>(k) << ',' << s[k].x() << ',' << s[k].y() << '\n';
      }
    }
  }
  const double a_star = amplitude_star(cfg);
  std::size_t locked = 0, boundary = 0;
  json failures = json::array();
  for (std::size_t i = 0; i < res.members.size(); ++i) {
    const auto& m = res.members[i];
    if (m.failed) {
      failures.push_back({{"index", i}, {"reason", m.failure}});
      continue;
    }
    if (classify_basin(m.initial, p, cfg.drive.epsilon_max) == Basin::Boundary) ++boundary;
    if (std::abs(m.mean_x) > 0.5 * a_star) ++locked;
  }
  auto& s = ctx.result.summary;
  s["states"] = res.members.size();
  s["attractor_amplitude_m"] = a_star;
  s["window_s"] = {res.window_start, res.window_end};
  s["right_cluster"] = {{"count", res.right_count}, {"mean_x_m", res.right_mean[0]}, {"mean_y_m", res.right_mean[1]}};
  s["left_cluster"] = {{"count", res.left_count}, {"mean_x_m", res.left_mean[0]}, {"mean_y_m", res.left_mean[1]}};
  s["locked"] = locked;
  s["boundary_states"] = boundary;
  s["failures"] = res.failures;
  s["failure_details"] = failures;
  if (res.failures > 0) {
    ctx.result.status = res.failures == res.members.size() ? RunStatus::Failure : RunStatus::Partial;
  }
}

inline void sim1d(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto osc = OscillatorParams1D::from_spec(cfg.trap.secular[0], cfg.slowflow_gamma, cfg.anharmonic());
  json runs = json::array();
  std::vector<Series1D> out(cfg.phi_x_values.size());
  parallel_for(out.size(), cfg.workers, [&](std::size_t j) {
    const auto x0 = thermal_sample(cfg.init.temperature, cfg.trap.secular[0], cfg.phi_x_values[j]);
    out[j] = integrate_1d(x0.position, x0.velocity, osc, cfg.drive, cfg.duration, cfg.integrator,
                          cfg.sample_rate);
  });
  for (std::size_t j = 0; j < out.size(); ++j) {
    const auto& s = out[j];
    auto os = ctx.open("sim1d_phi" + std::to_string(j) + ".csv");
    os.precision(17);
    os << "t_s,x_m,v_m_per_s\n";
    for (std::size_t i = 0; i < s.t.size(); ++i) os << s.t[i] << ',' << s.x[i] << ',' << s.v[i] << '\n';
    json r = {{"phi_x", cfg.phi_x_values[j]}, {"samples", s.t.size()}};
    if (s.x.size() >= kMinSpectrumLength) {
      write_spectrum_csv(ctx.path("sim1d_phi" + std::to_string(j) + "_spectrum.csv"),
                         psd(s.x, s.sample_rate));
      r["x_amplitude_at_half_drive_m"] = bin_amplitude(s.x, s.sample_rate, cfg.drive.omega_d / (2.0 * kTwoPi));
    }
    runs.push_back(r);
  }
  ctx.result.summary["runs"] = runs;
}

inline void write_trajectory(Context& ctx, const std::string& stem, const Trajectory3D& tr) {
  if (ctx.cfg.write_trajectories == "binary") {
    write_trajectory_binary(ctx.path(stem + ".traj"), tr);
  } else if (ctx.cfg.write_trajectories == "csv") {
    write_trajectory_csv(ctx.path(stem + ".csv"), tr);
  }
}

inline void sim3d(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const FieldModel field = cfg.field_model();
  const std::vector<double> ramps =
      cfg.ramp_variants.empty() ? std::vector<double>{cfg.drive.ramp_duration} : cfg.ramp_variants;
  const std::size_t np = cfg.phi_x_values.size(), n = ramps.size() * np;
  std::vector<Trajectory3D> trs(n);
  std::vector<std::string> errors(n);
  parallel_for(n, cfg.workers, [&](std::size_t k) {
    DriveSchedule s = cfg.drive;
    s.ramp_duration = ramps[k / np];
    InitCondition init = cfg.init;
    init.phases[0] = cfg.phi_x_values[k % np];
    Sim3DOptions o = cfg.sim_options();
    o.trajectory = k;
    try {
      trs[k] = integrate_3d(init, field, cfg.resonator, s, cfg.duration, cfg.integrator, o);
    } catch (const IntegrationError& e) {
      errors[k] = e.what();
    }
  });
  const double f_half = cfg.drive.omega_d / (2.0 * kTwoPi);
  json runs = json::array();
  std::size_t bad = 0;
  long steps = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::string stem = "sim3d_ramp" + std::to_string(k / np) + "_phi" + std::to_string(k % np);
    json r = {{"ramp_duration_s", ramps[k / np]}, {"phi_x", cfg.phi_x_values[k % np]}};
    if (!errors[k].empty()) {
      ++bad;
      r["failure"] = errors[k];
      runs.push_back(r);
      continue;
    }
    const auto& tr = trs[k];
    steps += tr.stats.accepted;
    write_trajectory(ctx, stem, tr);
    if (tr.escape) {
      ++bad;
      r["escape"] = {{"time_s", tr.escape->time},
                     {"position_m", {tr.escape->position[0], tr.escape->position[1], tr.escape->position[2]}}};
    }
    if (tr.size() >= kMinSpectrumLength) {
      const auto& x = tr.column(Column::x);
      const auto& v = tr.column(Column::V);
      write_spectrum_csv(ctx.path(stem + "_x_spectrum.csv"), psd(x, tr.sample_rate));
      write_spectrum_csv(ctx.path(stem + "_V_spectrum.csv"), psd(v, tr.sample_rate));
      r["x_amplitude_at_half_drive_m"] = bin_amplitude(x, tr.sample_rate, f_half);
      r["V_amplitude_at_half_drive_V"] = bin_amplitude(v, tr.sample_rate, f_half);
    }
    r["accepted_steps"] = tr.stats.accepted;
    runs.push_back(r);
  }
  ctx.metrics["accepted_steps"] = steps;
  ctx.result.summary["runs"] = runs;
  ctx.result.summary["escaped_or_failed"] = bad;
  if (bad > 0) ctx.result.status = bad == n ? RunStatus::Failure : RunStatus::Partial;
}

inline void detuning(Context& ctx) {
  const auto& cfg = ctx.cfg;
  DetuningScanSetup su;
  su.nominal_secular = cfg.trap.secular;
  su.omega_rf = cfg.trap.omega_rf;
  su.calibration = cfg.calibration_options();
  su.anharmonic = cfg.anharmonic();
  su.coupling = CouplingModel::uniform(cfg.trap.d_eff);
  su.resonator = cfg.resonator;
  su.schedule = cfg.drive;
  su.init = cfg.init;
  su.t_end = cfg.duration;
  su.probe_frequency = cfg.drive.omega_d / (2.0 * kTwoPi);
  su.settings = cfg.integrator;
  su.options = cfg.sim_options();
  su.workers = cfg.workers;
  std::vector<double> wx;
  for (double d : cfg.detuning_fractions) wx.push_back(cfg.trap.secular[0] * (1.0 + d));
  const auto res = detuning_scan(wx, cfg.phi_x_values, su);
  auto os = ctx.open("detuning.csv");
  os << "f_x_MHz,detuning_percent,phi_x,V_amplitude_V,escaped\n";
  json rows = json::array();
  std::size_t escaped = 0;
  for (std::size_t i = 0; i < wx.size(); ++i) {
    for (std::size_t j = 0; j < cfg.phi_x_values.size(); ++j) {
      os << wx[i] / kTwoPi / units::MHz << ',' << 100.0 * cfg.detuning_fractions[i] << ','
         << cfg.phi_x_values[j] << ',' << res.amplitude[i][j] << ',' << res.escaped[i][j] << '\n';
      rows.push_back({{"f_x_MHz", wx[i] / kTwoPi / units::MHz},
                      {"phi_x", cfg.phi_x_values[j]},
                      {"V_amplitude_V", res.amplitude[i][j]},
                      {"escaped", static_cast<bool>(res.escaped[i][j])}});
      escaped += res.escaped[i][j];
    }
  }
  ctx.result.summary["scan"] = rows;
  ctx.result.summary["escaped"] = escaped;
  if (escaped > 0) ctx.result.status = RunStatus::Partial;
}

/// Per-trajectory products of a noisy ensemble.
struct NoisyMember {
  SpectrumResult band;               // PSD over the configured band, full record
  std::vector<double> bin_powers;    // resonance-bin power per detection time
  double final_rf_scale = 1.0;
  long accepted_steps = 0;
  std::string failure;
};

inline std::vector<NoisyMember> run_noisy_members(const RunConfig& cfg,
                                                  const std::vector<double>& times) {
  if (cfg.integrator.mode != IntegrationMode::SDE) {
    throw ConfigError({"IntegratorSettings.mode: noisy ensembles need integrator.mode = SDE"});
  }
  const FieldModel field = cfg.field_model();
  const double f_res = cfg.resonator.omega_res() / kTwoPi;
  std::vector<NoisyMember> members(cfg.trajectories);
  parallel_for(cfg.trajectories, cfg.workers, [&](std::size_t i) {
    auto& m = members[i];
    Sim3DOptions o = cfg.sim_options();
    o.trajectory = i;
    o.record = RecordMode::VoltageOnly;
    try {
      const auto tr = integrate_3d(cfg.init, field, cfg.resonator, cfg.drive, cfg.duration,
                                   cfg.integrator, o);
      m.accepted_steps = tr.stats.accepted;
      m.final_rf_scale = tr.final_rf_scale;
      if (tr.escape) {
        m.failure = "escaped the region of interest at t=" + std::to_string(tr.escape->time);
        return;
      }
      const auto& v = tr.column(Column::V);
      m.band = spectrum_band(psd(v, tr.sample_rate), cfg.band_lo, cfg.band_hi);
      m.bin_powers = truncated_bin_powers(v, tr.sample_rate, times, f_res);
    } catch (const IntegrationError& e) {
      m.failure = std::string(e.what()) + " at t=" + std::to_string(e.last_valid_time);
    }
  });
  return members;
}

inline void noisy(Context& ctx, bool curve) {
  const auto& cfg = ctx.cfg;
  const double f_res = cfg.resonator.omega_res() / kTwoPi;
  std::vector<double> times = curve ? cfg.detection_times : std::vector<double>{};
  if (curve && times.empty()) throw ConfigError({"ExperimentSpec.run.detection_times_us: empty"});
  const auto members = run_noisy_members(cfg, times);

  EnsembleSpectrumStats stats(f_res);
  std::vector<std::vector<double>> powers;
  json failures = json::array();
  long steps = 0;
  for (std::size_t i = 0; i < members.size(); ++i) {
    const auto& m = members[i];
    steps += m.accepted_steps;
    if (!m.failure.empty()) {
      failures.push_back({{"trajectory", i}, {"reason", m.failure}});
      continue;
    }
    stats.add(m.band);
    powers.push_back(m.bin_powers);
  }
  ctx.metrics["accepted_steps"] = steps;
  auto& s = ctx.result.summary;
  s["trajectories"] = members.size();
  s["failures"] = failures.size();
  s["failure_details"] = failures;
  s["seed_plan_rows"] = members.size();
  s["johnson_floor_V2_per_Hz"] = cfg.resonator.johnson_floor();
  if (stats.count() == 0) {
    ctx.result.status = RunStatus::Failure;
    return;
  }
  {
    auto os = ctx.open("ensemble_spectrum.csv");
    os << "frequency_Hz,mean_psd_V2_per_Hz,std_psd_V2_per_Hz\n";
    const auto sd = stats.stddev();
    for (std::size_t k = 0; k < stats.mean().size(); ++k) {
      os << stats.frequencies()[k] << ',' << stats.mean()[k] << ',';
      if (std::isfinite(sd[k])) os << sd[k];
      os << '\n';
    }
    auto pr = ctx.open("resonance_powers.csv");
    pr << "index,psd_V2_per_Hz\n";
    for (std::size_t k = 0; k < stats.resonance_powers().size(); ++k) {
      pr << k << ',' << stats.resonance_powers()[k] << '\n';
    }
  }
  const std::size_t rb = stats.resonance_bin();
  const double mean_res = stats.mean()[rb];
  const auto snr_full = snr(mean_res, cfg.resonator);
  s["resonance_frequency_Hz"] = stats.frequencies()[rb];
  s["mean_psd_at_resonance"] = mean_res;
  s["std_psd_at_resonance"] = number_or_null(stats.stddev()[rb]);
  s["snr_dB"] = snr_full.signal_present ? json(snr_full.db) : json(nullptr);
  s["signal_present"] = snr_full.signal_present;
  s["resonance_powers"] = stats.resonance_powers();
  if (curve) {
    const auto c = snr_curve_from_powers(times, powers, cfg.resonator);
    auto os = ctx.open("snr_curve.csv");
    os << "time_s,mean_psd,std_psd,signal_power,snr_dB,signal_present,extrapolated_snr_dB\n";
    json pts = json::array();
    for (const auto& p : c.points) {
      os << p.time << ',' << p.mean_power << ',';
      if (std::isfinite(p.std_power)) os << p.std_power;
      os << ',' << p.signal_power << ',';
      if (p.snr.signal_present) os << p.snr.db;
      os << ',' << p.snr.signal_present << ',';
      if (p.extrapolated.signal_present) os << p.extrapolated.db;
      os << '\n';
      pts.push_back({{"time_s", p.time},
                     {"mean_psd", p.mean_power},
                     {"signal_power", p.signal_power},
                     {"snr_dB", p.snr.signal_present ? json(p.snr.db) : json(nullptr)}});
    }
    s["curve"] = pts;
    s["signal_power_fit"] = {{"slope_V2_per_Hz_per_s", c.signal_fit.slope},
                             {"intercept_V2_per_Hz", c.signal_fit.intercept},
                             {"r_squared", c.signal_fit.r_squared}};
  }
  if (!failures.empty()) {
    ctx.result.status = stats.count() == 0 ? RunStatus::Failure : RunStatus::Partial;
  }
}

inline void bursts(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const double floor = cfg.resonator.johnson_floor();
  json out = json::array();
  for (std::size_t j = 0; j < cfg.burst_snr_db.size(); ++j) {
    const double snr_db = cfg.burst_snr_db[j];
    const NoncentralPowerModel model(std::sqrt(floor * std::pow(10.0, snr_db / 10.0)), floor,
                                     cfg.burst_dof);
    RngStream rng(cfg.seed, j);
    auto samples = model.samples(cfg.burst_samples, rng);
    double mean = 0.0;
    std::size_t below = 0;
    for (double p : samples) {
      mean += p;
      below += p < floor;
    }
    mean /= static_cast<double>(samples.size());
    const double p_max = *std::max_element(samples.begin(), samples.end());
    const double width = p_max / static_cast<double>(cfg.histogram_bins);
    std::vector<double> hist(cfg.histogram_bins, 0.0);
    for (double p : samples) {
      hist[std::min(cfg.histogram_bins - 1, static_cast<std::size_t>(p / width))] += 1.0;
    }
    const std::string tag = "snr" + fixed(snr_db, 1);
    auto os = ctx.open("burst_pdf_" + tag + ".csv");
    os << "power_V2_per_Hz,pdf,histogram_density\n";
    for (std::size_t b = 0; b < hist.size(); ++b) {
      const double centre = (static_cast<double>(b) + 0.5) * width;
      os << centre << ',' << model.pdf(centre) << ','
         << hist[b] / (static_cast<double>(samples.size()) * width) << '\n';
    }
    RngStream series_rng(cfg.seed, 1000 + j);
    const auto series = burst_series(model, cfg.burst_series_length, series_rng);
    auto ss = ctx.open("burst_series_" + tag + ".csv");
    ss << "index,power_V2_per_Hz\n";
    for (std::size_t k = 0; k < series.size(); ++k) ss << k << ',' << series[k] << '\n';
    const auto ks = ks_test(samples, [&](double p) { return model.cdf(p); });
    out.push_back({{"snr_dB", snr_db},
                   {"dof", cfg.burst_dof},
                   {"Vs_V_per_sqrtHz", model.signal_density()},
                   {"expected_mean", model.mean()},
                   {"sample_mean", mean},
                   {"fraction_below_floor", static_cast<double>(below) / static_cast<double>(samples.size())},
                   {"ks_statistic", ks.statistic},
                   {"ks_p_value", ks.p_value}});
  }
  ctx.result.summary["johnson_floor_V2_per_Hz"] = floor;
  ctx.result.summary["models"] = out;
}

}  // namespace experiment_detail

/// Executes the configured experiment into out_dir (created if needed).
inline RunResult run_experiment(const RunConfig& cfg, const fs::path& out_dir) {
  using namespace experiment_detail;
  RunResult result;
  result.out_dir = out_dir;
  fs::create_directories(out_dir);
  Context ctx{cfg, out_dir, result};
  const auto wall0 = std::chrono::steady_clock::now();
  result.summary["experiment"] = to_string(cfg.kind);
  switch (cfg.kind) {
    case ExperimentKind::SlowflowPortrait: slowflow_portrait(ctx); break;
    case ExperimentKind::SlowflowEnsemble: slowflow_ensemble(ctx); break;
    case ExperimentKind::Sim1D: sim1d(ctx); break;
    case ExperimentKind::Sim3D: sim3d(ctx); break;
    case ExperimentKind::DetuningScan: detuning(ctx); break;
    case ExperimentKind::NoisyEnsemble: noisy(ctx, false); break;
    case ExperimentKind::SnrCurve: noisy(ctx, true); break;
    case ExperimentKind::BurstStats: bursts(ctx); break;
  }
  ctx.metrics["wall_seconds_total"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  result.summary["status"] = static_cast<int>(result.status);
  result.summary["artifacts"] = result.artifacts;
  write_json(out_dir / "summary.json", result.summary);

  json& m = result.manifest;
  m["manifest_version"] = 1;
  m["code_version"] = code_version();
  m["experiment"] = to_string(cfg.kind);
  m["config"] = yaml_to_json(cfg.resolved);
  const bool stochastic = cfg.kind == ExperimentKind::NoisyEnsemble || cfg.kind == ExperimentKind::SnrCurve;
  m["seed"] = cfg.seed;
  if (stochastic) m["seed_plan"] = seed_plan_json(seed_plan(cfg.seed, cfg.trajectories));
  m["metrics"] = ctx.metrics;
  m["status"] = static_cast<int>(result.status);
  m["artifacts"] = result.artifacts;
  write_json(out_dir / "manifest.json", m);
  return result;
}

}  // namespace trapsim::app
