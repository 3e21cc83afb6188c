#pragma once

// Time-domain integration of the 1D parametric oscillator and of the full
// 3D electron motion coupled to the parallel RLC resonator:
//
//   r''       = (q/m) [E_dc + R_U E_rf cos(W t + phi_rf)
//                      + R_U E_d eps(t) cos(w_d t + phi_d) + E_n + L I' D(r)]
//   L C I''   = -L I'/R - I - q D(r).r' + I_n
//
// with q = -e. The resonator voltage is V = L I'.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "trapsim/core.hpp"
#include "trapsim/dop853.hpp"
#include "trapsim/field_model.hpp"
#include "trapsim/noise.hpp"
#include "trapsim/parallel.hpp"
#include "trapsim/spectral.hpp"

namespace trapsim {

enum class IntegrationMode { ODE, SDE };

struct IntegratorSettings {
  double abstol = 1e-10;
  double reltol = 1e-10;
  double max_step = std::numeric_limits<double>::infinity();
  IntegrationMode mode = IntegrationMode::ODE;

  static IntegratorSettings defaults(IntegrationMode mode) {
    IntegratorSettings s;
    s.mode = mode;
    if (mode == IntegrationMode::SDE) s.abstol = s.reltol = 1e-9;
    return s;
  }

  void validate() const {
    for (double tol : {abstol, reltol}) {
      if (!(tol > 0.0 && tol <= 1e-3)) {
        throw DomainError("IntegratorSettings: tolerances must lie in (0, 1e-3]");
      }
    }
    if (!(max_step > 0.0)) throw DomainError("IntegratorSettings: max_step must be > 0");
  }

  Dop853Settings dop853() const {
    Dop853Settings d;
    d.abstol = abstol;
    d.reltol = reltol;
    d.max_step = max_step;
    return d;
  }
};

inline constexpr double kDefaultSampleRate = 4.096e9;

// ---------------------------------------------------------------------------
// 1D model
// ---------------------------------------------------------------------------

struct OscillatorParams1D {
  double omega_x = units::angular_MHz(200.0);
  double gamma = 0.0;
  std::array<double, 4> C{};  // C3..C6, potential per mass

  static OscillatorParams1D from_spec(double omega_x, double gamma, const AnharmonicSpec& a,
                                      int axis = 0) {
    return {omega_x, gamma, a.C.at(axis)};
  }
};

struct Series1D {
  double sample_rate = 0.0;
  std::vector<double> t, x, v;
};

/// x'' = -omega_x^2 x (1 + eps(t) cos(w_d t + phi_d)) - sum i C_i x^(i-1) - gamma x'
inline Series1D integrate_1d(double x0, double v0, const OscillatorParams1D& p,
                             const DriveSchedule& schedule, double t_end,
                             const IntegratorSettings& settings = {},
                             double sample_rate = kDefaultSampleRate) {
  if (!std::isfinite(x0) || !std::isfinite(v0) || !std::isfinite(t_end)) {
    throw DomainError("integrate_1d: inputs must be finite");
  }
  settings.validate();
  schedule.validate();
  using State = std::array<double, 2>;
  const double w2 = p.omega_x * p.omega_x;
  auto rhs = [&](double t, const State& y, State& dy) {
    const double x = y[0];
    const double mod = 1.0 + schedule.epsilon(t) * std::cos(schedule.omega_d * t + schedule.phi_d);
    double anh = 0.0, xp = x * x;  // x^(i-1) starting at i = 3
    for (int i = 3; i <= 6; ++i) {
      anh += i * p.C[i - 3] * xp;
      xp *= x;
    }
    dy = {y[1], -w2 * x * mod - anh - p.gamma * y[1]};
  };
  Series1D out;
  out.sample_rate = sample_rate;
  const auto n = static_cast<std::size_t>(std::floor(t_end * sample_rate + 1e-9)) + 1;
  out.t.reserve(n);
  out.x.reserve(n);
  out.v.reserve(n);
  integrate_sampled<2>(
      rhs, settings.dop853(), State{units::um, units::um / units::ns}, 0.0, State{x0, v0}, t_end,
      1.0 / sample_rate,
      [&](double t, const State& y) {
        out.t.push_back(t);
        out.x.push_back(y[0]);
        out.v.push_back(y[1]);
        return true;
      },
      {schedule.start_time, schedule.ramp_end()});
  return out;
}

// ---------------------------------------------------------------------------
// 3D coupled model
// ---------------------------------------------------------------------------

struct InitCondition {
  double temperature = 4.0;
  Vec3 phases{0.0, 0.0, 0.0};
  double phi_rf = 0.0;
  /// Frequencies used for the thermal amplitudes sqrt(kT/(m w_i^2)).
  Vec3 secular{units::angular_MHz(200.0), units::angular_MHz(173.0), units::angular_MHz(70.0)};
  /// Explicit (r, v) overriding the thermal construction.
  std::optional<std::array<double, 6>> explicit_state;

  std::array<double, 6> motional_state() const {
    if (explicit_state) return *explicit_state;
    std::array<double, 6> s{};
    for (int i = 0; i < 3; ++i) {
      const auto p = thermal_sample(temperature, secular[i], phases[i]);
      s[i] = p.position;
      s[3 + i] = p.velocity;
    }
    return s;
  }
};

enum class Column { t, x, y, z, vx, vy, vz, I, dIdt, V };
inline constexpr std::size_t kColumnCount = 10;
inline constexpr const char* kColumnNames[kColumnCount] = {"t",  "x",  "y", "z",    "vx",
                                                           "vy", "vz", "I", "dIdt", "V"};

enum class RecordMode {
  Full,         // every column
  VoltageOnly,  // t and V
};

struct EscapeEvent {
  double time;
  Vec3 position;
};

struct IntegrationStats {
  long accepted = 0;
  long rejected = 0;
  long evaluations = 0;
  double wall_seconds = 0.0;
};

struct Trajectory3D {
  double sample_rate = 0.0;
  std::array<std::vector<double>, kColumnCount> columns;
  std::optional<EscapeEvent> escape;
  IntegrationStats stats;
  double final_rf_scale = 1.0;
  std::uint64_t seed = 0;
  std::uint64_t trajectory = 0;

  const std::vector<double>& column(Column c) const { return columns[static_cast<std::size_t>(c)]; }
  std::vector<double>& column(Column c) { return columns[static_cast<std::size_t>(c)]; }
  std::size_t size() const { return column(Column::t).size(); }
};

struct Sim3DOptions {
  double sample_rate = kDefaultSampleRate;
  RecordMode record = RecordMode::Full;
  /// Electron-resonator coupling; false decouples both directions.
  bool couple = true;
  /// Required in SDE mode.
  std::optional<NoiseConfig> noise;
  std::uint64_t trajectory = 0;
  /// Noise intervals per output sample in SDE mode.
  std::size_t noise_substeps = 1;
  double max_duration = 10.0 * units::ms;
};

namespace dynamics_detail {

using State8 = std::array<double, 8>;

inline constexpr State8 kScale{units::um, units::um, units::um,
                               units::um / units::ns, units::um / units::ns, units::um / units::ns,
                               1e-9, 1e-9 / units::ns};

struct CoupledRhs {
  const FieldModel* field;
  const DriveSchedule* schedule;
  double phi_rf;
  double q_over_m;
  double charge;  // signed
  double L, inv_LC, L_over_R;
  bool couple;
  bool constant_coupling = field->coupling.is_constant();
  // Held noise for the current interval.
  Vec3 noise_field{0.0, 0.0, 0.0};
  double noise_current = 0.0;
  double rf_scale = 1.0;

  void operator()(double t, const State8& y, State8& dy) const {
    const Vec3 r{y[0], y[1], y[2]};
    const double rf_c = std::cos(field->omega_rf * t + phi_rf);
    const double d_c =
        schedule->epsilon(t) * std::cos(schedule->omega_d * t + schedule->phi_d);
    Vec3 a = field->trap_acceleration(r, rf_c, d_c, rf_scale);
    double source = 0.0;
    if (couple) {
      const Vec3 D = constant_coupling ? field->coupling.constant : field->coupling.at(r);
      const double push = q_over_m * L * y[7];
      for (int i = 0; i < 3; ++i) {
        a[i] += push * D[i];
        source += D[i] * y[3 + i];
      }
      source *= charge;
    }
    for (int i = 0; i < 3; ++i) a[i] += q_over_m * noise_field[i];
    dy[0] = y[3];
    dy[1] = y[4];
    dy[2] = y[5];
    dy[3] = a[0];
    dy[4] = a[1];
    dy[5] = a[2];
    dy[6] = y[7];
    dy[7] = inv_LC * (-L_over_R * y[7] - y[6] - source + noise_current);
  }
};

inline void record_row(Trajectory3D& out, RecordMode mode, double t, const State8& y, double L) {
  if (mode == RecordMode::Full) {
    out.column(Column::t).push_back(t);
    for (std::size_t i = 0; i < 8; ++i) out.columns[1 + i].push_back(y[i]);
  } else {
    out.column(Column::t).push_back(t);
  }
  out.column(Column::V).push_back(L * y[7]);
}

}  // namespace dynamics_detail

/// Integrates the coupled electron + resonator system from a thermal (or
/// explicit) initial state with I = I' = 0. In SDE mode the noise sources
/// are drawn once per noise interval and held constant across it; the
/// stepper restarts at every interval boundary, so each interval is an
/// ordinary ODE solve at the configured tolerance.
inline Trajectory3D integrate_3d(const InitCondition& init, const FieldModel& field,
                                 const ResonatorParams& resonator, const DriveSchedule& schedule,
                                 double t_end, const IntegratorSettings& settings,
                                 const Sim3DOptions& opt = {}) {
  using namespace dynamics_detail;
  settings.validate();
  schedule.validate();
  if (!(t_end > 0.0) || t_end > opt.max_duration) {
    throw DomainError("integrate_3d: t_end must lie in (0, max_duration]");
  }
  // Nyquist for the upper micromotion sideband W + w_sec.
  const double f_top =
      (field.omega_rf + *std::max_element(init.secular.begin(), init.secular.end())) / kTwoPi;
  if (!(opt.sample_rate > 2.0 * f_top)) {
    throw DomainError("integrate_3d: sample rate must exceed twice the upper micromotion sideband");
  }
  const bool sde = settings.mode == IntegrationMode::SDE;
  if (sde && !opt.noise) throw DomainError("integrate_3d: SDE mode needs a noise configuration");
  if (opt.noise_substeps == 0) throw DomainError("integrate_3d: noise_substeps must be >= 1");

  const auto wall0 = std::chrono::steady_clock::now();
  CoupledRhs rhs{&field,
                 &schedule,
                 init.phi_rf,
                 PhysicalConstants::electron_charge / PhysicalConstants::electron_mass,
                 PhysicalConstants::electron_charge,
                 resonator.L(),
                 1.0 / (resonator.L() * resonator.C()),
                 resonator.L() / resonator.R(),
                 opt.couple};

  const auto m0 = init.motional_state();
  State8 y0{m0[0], m0[1], m0[2], m0[3], m0[4], m0[5], 0.0, 0.0};
  if (!field.roi.contains({y0[0], y0[1], y0[2]})) {
    throw DomainError("integrate_3d: initial position outside the region of interest");
  }

  Trajectory3D out;
  out.sample_rate = opt.sample_rate;
  out.trajectory = opt.trajectory;
  out.seed = opt.noise ? opt.noise->seed : 0;
  const double dt = 1.0 / opt.sample_rate;
  const auto n_samples = static_cast<std::size_t>(std::floor(t_end * opt.sample_rate + 1e-9)) + 1;
  for (std::size_t c = 0; c < kColumnCount; ++c) {
    const bool keep = opt.record == RecordMode::Full || c == 0 ||
                      c == static_cast<std::size_t>(Column::V);
    if (keep) out.columns[c].reserve(n_samples);
  }
  const double L = resonator.L();

  auto check = [&](double t, const State8& y) {
    const Vec3 r{y[0], y[1], y[2]};
    if (!field.roi.contains(r)) {
      out.escape = EscapeEvent{t, r};
      return false;
    }
    return true;
  };

  if (!sde) {
    auto stepper = integrate_sampled<8>(
        rhs, settings.dop853(), kScale, 0.0, y0, t_end, dt,
        [&](double t, const State8& y) {
          if (!check(t, y)) return false;
          record_row(out, opt.record, t, y, L);
          return true;
        },
        {schedule.start_time, schedule.ramp_end()});
    out.stats = {stepper.accepted_steps(), stepper.rejected_steps(), stepper.evaluations(), 0.0};
  } else {
    const NoiseConfig& nc = *opt.noise;
    RngStream surface_rng(nc.seed, stream_id(opt.trajectory, NoiseSource::Surface));
    RngStream johnson_rng(nc.seed, stream_id(opt.trajectory, NoiseSource::Johnson));
    RngStream walk_rng(nc.seed, stream_id(opt.trajectory, NoiseSource::RfWalk));
    const double S_E = nc.surface ? surface_noise_psd(nc) : 0.0;
    const double h = dt / static_cast<double>(opt.noise_substeps);
    auto draw = [&](CoupledRhs& r) {
      for (int i = 0; i < 3; ++i) {
        r.noise_field[i] =
            nc.surface && nc.surface_axes[i] ? surface_field_increment(S_E, h, surface_rng) : 0.0;
      }
      r.noise_current = nc.johnson ? johnson_current_increment(resonator, h, johnson_rng) : 0.0;
    };
    draw(rhs);
    Dop853<8, CoupledRhs> stepper(rhs, settings.dop853(), kScale);
    stepper.reset(0.0, y0);
    record_row(out, opt.record, 0.0, y0, L);
    const double kinks[2] = {schedule.start_time, schedule.ramp_end()};
    const std::size_t n_intervals = (n_samples - 1) * opt.noise_substeps;
    for (std::size_t k = 1; k <= n_intervals; ++k) {
      const double t1 = static_cast<double>(k) * h;
      const double t0 = t1 - h;
      for (double kink : kinks) {
        if (kink > t0 && kink < t1) {
          while (stepper.time() < kink) stepper.step(kink);
          stepper.reset(kink, stepper.state(), true);
        }
      }
      while (stepper.time() < t1) stepper.step(t1);
      State8 y = stepper.state();
      if (!check(t1, y)) break;
      if (k % opt.noise_substeps == 0) record_row(out, opt.record, t1, y, L);
      // Next interval: fresh noise, rf amplitude walk advanced by one step.
      auto& r = stepper.rhs();
      draw(r);
      if (nc.rf_walk) r.rf_scale = rf_walk_step(r.rf_scale, h, nc, walk_rng);
      stepper.reset(t1, y, true);
    }
    out.final_rf_scale = stepper.rhs().rf_scale;
    out.stats = {stepper.accepted_steps(), stepper.rejected_steps(), stepper.evaluations(), 0.0};
  }
  out.stats.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  return out;
}

// ---------------------------------------------------------------------------
// Detuning scan
// ---------------------------------------------------------------------------

struct DetuningScanSetup {
  Vec3 nominal_secular{units::angular_MHz(200.0), units::angular_MHz(173.0),
                       units::angular_MHz(70.0)};
  double omega_rf = units::angular_MHz(1452.0);
  CalibrationOptions calibration{};
  AnharmonicSpec anharmonic{};
  CouplingModel coupling = CouplingModel::uniform(4.8 * units::mm);
  ResonatorParams resonator{};
  DriveSchedule schedule{};
  InitCondition init{};
  double t_end = 20.0 * units::us;
  double probe_frequency = 200.0 * units::MHz;  // Hz
  IntegratorSettings settings{};
  Sim3DOptions options{};
  unsigned workers = 1;
};

struct DetuningScanResult {
  std::vector<double> omega_x;
  std::vector<double> phi_x;
  /// amplitude[i][j]: voltage amplitude (V) at the probe frequency for
  /// omega_x[i], phi_x[j].
  std::vector<std::vector<double>> amplitude;
  std::vector<std::vector<bool>> escaped;
};

/// Re-calibrates the radial rf for every omega_x while holding the drive
/// electrode curvature, anharmonicity and coupling at their nominal values,
/// then measures the resonator voltage amplitude at the probe frequency.
inline DetuningScanResult detuning_scan(const std::vector<double>& omega_x_values,
                                        const std::vector<double>& phi_x_values,
                                        const DetuningScanSetup& setup) {
  DetuningScanResult res;
  res.omega_x = omega_x_values;
  res.phi_x = phi_x_values;
  const std::size_t nw = omega_x_values.size(), np = phi_x_values.size();
  res.amplitude.assign(nw, std::vector<double>(np, 0.0));
  res.escaped.assign(nw, std::vector<bool>(np, false));

  std::vector<FieldModel> fields(nw);
  for (std::size_t i = 0; i < nw; ++i) {
    Vec3 target = setup.nominal_secular;
    target[0] = omega_x_values[i];
    CalibrationOptions co = setup.calibration;
    if (co.drive_reference_omega <= 0.0) co.drive_reference_omega = setup.nominal_secular[0];
    fields[i] = calibrate(target, setup.omega_rf, co);
    fields[i].anharmonic = setup.anharmonic;
    fields[i].coupling = setup.coupling;
  }
  std::vector<double> flat(nw * np, 0.0);
  std::vector<char> esc(nw * np, 0);
  Sim3DOptions opt = setup.options;
  opt.record = RecordMode::VoltageOnly;
  parallel_for(nw * np, setup.workers, [&](std::size_t k) {
    const std::size_t i = k / np, j = k % np;
    InitCondition init = setup.init;
    init.secular = setup.nominal_secular;
    init.secular[0] = omega_x_values[i];
    init.phases[0] = phi_x_values[j];
    const auto tr = integrate_3d(init, fields[i], setup.resonator, setup.schedule, setup.t_end,
                                 setup.settings, opt);
    esc[k] = tr.escape.has_value();
    flat[k] = bin_amplitude(tr.column(Column::V), tr.sample_rate, setup.probe_frequency);
  });
  for (std::size_t k = 0; k < nw * np; ++k) {
    res.amplitude[k / np][k % np] = flat[k];
    res.escaped[k / np][k % np] = esc[k] != 0;
  }
  return res;
}

}  // namespace trapsim
