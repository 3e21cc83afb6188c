#pragma once

// Run configuration: a YAML document layered as built-in defaults <- preset
// <- user file <- --override key=value. Keys carry their unit in the name
// (secular_MHz, duration_us, ...) and are converted to SI here.

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "trapsim/core.hpp"
#include "trapsim/dynamics.hpp"
#include "trapsim/field_model.hpp"
#include "trapsim/noise.hpp"
#include "trapsim/slow_flow.hpp"

namespace trapsim::app {

enum class ExperimentKind {
  SlowflowPortrait,
  SlowflowEnsemble,
  Sim1D,
  Sim3D,
  DetuningScan,
  NoisyEnsemble,
  SnrCurve,
  BurstStats,
};

inline const std::vector<std::pair<std::string, ExperimentKind>>& experiment_kinds() {
  static const std::vector<std::pair<std::string, ExperimentKind>> k = {
      {"SlowflowPortrait", ExperimentKind::SlowflowPortrait},
      {"SlowflowEnsemble", ExperimentKind::SlowflowEnsemble},
      {"Sim1D", ExperimentKind::Sim1D},
      {"Sim3D", ExperimentKind::Sim3D},
      {"DetuningScan", ExperimentKind::DetuningScan},
      {"NoisyEnsemble", ExperimentKind::NoisyEnsemble},
      {"SnrCurve", ExperimentKind::SnrCurve},
      {"BurstStats", ExperimentKind::BurstStats},
  };
  return k;
}

inline std::string to_string(ExperimentKind kind) {
  for (const auto& [name, k] : experiment_kinds()) {
    if (k == kind) return name;
  }
  return "?";
}

inline std::string allowed_kinds() {
  std::string s;
  for (const auto& [name, k] : experiment_kinds()) s += (s.empty() ? "" : ", ") + name;
  return s;
}

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::vector<std::string>& errors)
      : std::runtime_error(join(errors)), errors(errors) {}
  std::vector<std::string> errors;

 private:
  static std::string join(const std::vector<std::string>& e) {
    std::string s = "invalid configuration:";
    for (const auto& x : e) s += "\n  " + x;
    return s;
  }
};

inline constexpr const char* kDefaultConfig = R"(
experiment:
  kind: Sim3D
  seed: 1
  workers: 1
trap:
  secular_MHz: [200, 173, 70]
  rf_MHz: 1452
  phi_rf: 0
  d_eff_mm: 4.8
  dc_split: 0.5
  calibration: floquet
  anharmonic:
    lambda4_kHz_per_um2: -4.08
    lambda6_kHz_per_um4: 6.78e-6
    kHz_convention: angular
    axes: [x]
    coefficient_file: ""
resonator:
  Q: 1000
  Z0_ohm: 300
  f_res_MHz: 200
  temperature_K: 4
drive:
  f_d_MHz: 400
  phi_d: 0
  epsilon_max: 0.1
  ramp_duration_us: 1
  start_time_us: 0
init:
  temperature_K: 4
  phases: [0, 0, 0]
  phi_rf: 0
integrator:
  mode: ODE
  abstol: 1e-10
  reltol: 1e-10
  max_step_ns: 0
  sample_rate_GHz: 4.096
  noise_substeps: 1
noise:
  surface: true
  johnson: true
  rf_walk: true
  S_E_baseline: 1e-12
  reference_f_MHz: 1
  reference_distance_um: 100
  reference_temperature_K: 4
  electrode_distance_um: 431.8
  temperature_K: 4
  rf_walk_sigma: 1e-3
  rf_walk_horizon_ms: 10
  surface_axes: [x]
run:
  duration_us: 20
  slowflow_gamma: 0
  ensemble_size: 10000
  ensemble_init: thermal
  window_start_us: null
  window_end_us: null
  trajectory_samples: 0
  portrait_points: 1001
  portrait_half_width_um: 120
  phi_x_values: [0, 1.5707963267948966]
  ramp_variants_us: [1, 0]
  detuning_percent: [-2, -1, 0, 1, 2]
  trajectories: 20
  detection_times_us: [50, 100, 150, 200]
  spectrum_band_MHz: [195, 205]
  write_trajectories: binary
  burst_snr_dB: [0, 3]
  burst_samples: 1000000
  burst_series_length: 400
  burst_dof: 1
  histogram_bins: 200
)";

/// Fully resolved, SI-valued run configuration.
struct RunConfig {
  YAML::Node resolved;  // merged document, as used
  ExperimentKind kind = ExperimentKind::Sim3D;
  std::uint64_t seed = 1;
  unsigned workers = 1;

  TrapParams trap;
  double dc_split = 0.5;
  CalibrationMode calibration = CalibrationMode::Floquet;
  KilohertzConvention convention = KilohertzConvention::Angular;
  LambdaPair lambdas{};
  std::array<bool, 3> anharmonic_axes{true, false, false};
  std::string coefficient_file;

  ResonatorParams resonator;
  DriveSchedule drive;
  InitCondition init;
  IntegratorSettings integrator;
  double sample_rate = kDefaultSampleRate;
  std::size_t noise_substeps = 1;
  NoiseConfig noise;

  // run section
  double duration = 20.0 * units::us;
  double slowflow_gamma = 0.0;
  std::size_t ensemble_size = 10000;
  std::string ensemble_init = "thermal";
  std::optional<double> window_start, window_end;
  std::size_t trajectory_samples = 0;
  std::size_t portrait_points = 1001;
  double portrait_half_width = 120.0 * units::um;
  std::vector<double> phi_x_values;
  std::vector<double> ramp_variants;
  std::vector<double> detuning_fractions;
  std::size_t trajectories = 20;
  std::vector<double> detection_times;
  double band_lo = 195e6, band_hi = 205e6;
  std::string write_trajectories = "binary";
  std::vector<double> burst_snr_db;
  std::size_t burst_samples = 1'000'000;
  std::size_t burst_series_length = 400;
  int burst_dof = 1;
  std::size_t histogram_bins = 200;

  std::vector<std::string> warnings;

  SlowFlowParams slowflow_params() const {
    SlowFlowParams p;
    p.gamma = slowflow_gamma;
    p.schedule = drive;
    p.omega_x = trap.secular[0];
    p.lambda4 = lambdas.lambda4;
    p.lambda6 = lambdas.lambda6;
    return p;
  }

  AnharmonicSpec anharmonic() const {
    if (!coefficient_file.empty()) return load_coefficient_file(coefficient_file);
    AnharmonicSpec a;
    const auto base = AnharmonicSpec::from_lambdas(lambdas.lambda4, lambdas.lambda6, trap.secular[0]);
    for (int i = 0; i < 3; ++i) {
      if (anharmonic_axes[i]) a.C[i] = base.C[0];
    }
    return a;
  }

  CalibrationOptions calibration_options() const {
    CalibrationOptions o;
    o.dc_split = dc_split;
    o.mode = calibration;
    o.phi_rf = trap.phi_rf;
    return o;
  }

  FieldModel field_model() const {
    FieldModel f = calibrate(trap.secular, trap.omega_rf, calibration_options());
    f.anharmonic = anharmonic();
    f.coupling = CouplingModel::uniform(trap.d_eff);
    return f;
  }

  Sim3DOptions sim_options() const {
    Sim3DOptions o;
    o.sample_rate = sample_rate;
    o.noise_substeps = noise_substeps;
    if (integrator.mode == IntegrationMode::SDE) {
      o.noise = noise;
      o.noise->seed = seed;
    }
    return o;
  }
};

namespace config_detail {

/// Maps a YAML section to the parameter type named in diagnostics.
inline std::string type_of(const std::string& section) {
  static const std::map<std::string, std::string> m = {
      {"experiment", "ExperimentSpec"}, {"trap", "TrapParams"},
      {"resonator", "ResonatorParams"}, {"drive", "DriveSchedule"},
      {"init", "InitCondition"},        {"integrator", "IntegratorSettings"},
      {"noise", "NoiseConfig"},         {"run", "ExperimentSpec.run"}};
  auto it = m.find(section);
  return it == m.end() ? section : it->second;
}

inline std::string qualified(const std::string& path) {
  const auto dot = path.find('.');
  const std::string section = path.substr(0, dot);
  return type_of(section) + (dot == std::string::npos ? "" : path.substr(dot));
}

/// Recursively overlays `over` onto a copy of `base`. Keys absent from the
/// base are reported as unknown.
inline YAML::Node merge(const YAML::Node& base, const YAML::Node& over, const std::string& prefix,
                        std::vector<std::string>& errors) {
  if (!over.IsDefined() || over.IsNull()) return YAML::Clone(base);
  if (!base.IsMap()) return YAML::Clone(over);
  if (!over.IsMap()) {
    errors.push_back(qualified(prefix) + ": expected a mapping");
    return YAML::Clone(base);
  }
  YAML::Node out = YAML::Clone(base);
  for (auto it = over.begin(); it != over.end(); ++it) {
    const auto key = it->first.as<std::string>();
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base[key]) {
      errors.push_back(qualified(path) + ": unknown key '" + path + "'");
      continue;
    }
    out[key] = merge(base[key], it->second, path, errors);
  }
  return out;
}

inline YAML::Node node_at(YAML::Node root, const std::string& path) {
  std::vector<std::string> parts;
  std::stringstream ss(path);
  for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
  YAML::Node cur = root;
  for (const auto& p : parts) cur.reset(cur[p]);
  return cur;
}

/// Typed reader that accumulates errors instead of throwing on the first.
class Reader {
 public:
  Reader(const YAML::Node& root, std::vector<std::string>& errors) : root_(root), errors_(errors) {}

  template <class T>
  T get(const std::string& path, T fallback = T{}) {
    try {
      const YAML::Node n = node_at(YAML::Clone(root_), path);
      if (!n.IsDefined() || n.IsNull()) {
        errors_.push_back(qualified(path) + ": missing value");
        return fallback;
      }
      return n.as<T>();
    } catch (const YAML::Exception&) {
      errors_.push_back(qualified(path) + ": wrong type");
      return fallback;
    }
  }

  std::optional<double> optional_double(const std::string& path) {
    const YAML::Node n = node_at(YAML::Clone(root_), path);
    if (!n.IsDefined() || n.IsNull()) return std::nullopt;
    return get<double>(path);
  }

  void check(bool ok, const std::string& path, const std::string& message) {
    if (!ok) errors_.push_back(qualified(path) + ": " + message);
  }

 private:
  YAML::Node root_;
  std::vector<std::string>& errors_;
};

inline std::array<bool, 3> axis_mask(Reader& r, const std::string& path) {
  std::array<bool, 3> mask{false, false, false};
  for (const auto& a : r.get<std::vector<std::string>>(path)) {
    if (a == "x") mask[0] = true;
    else if (a == "y") mask[1] = true;
    else if (a == "z") mask[2] = true;
    else r.check(false, path, "axis must be one of x, y, z (got '" + a + "')");
  }
  return mask;
}

}  // namespace config_detail

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

struct Preset {
  std::string name;
  std::string description;
  std::string yaml;
};

inline const std::vector<Preset>& presets() {
  static const std::vector<Preset> p = {
      {"portrait", "Slow-flow phase portrait on the +-120 um grid (1001 x 1001)",
       "experiment: {kind: SlowflowPortrait}\n"},
      {"capture", "10,000-state thermal ensemble, 1 us ramp to eps = 0.1, 20 us",
       "experiment: {kind: SlowflowEnsemble}\nrun: {ensemble_size: 10000, duration_us: 20}\n"},
      {"capture-desk", "1,000-state version of 'capture'",
       "experiment: {kind: SlowflowEnsemble}\nrun: {ensemble_size: 1000, duration_us: 20}\n"},
      {"capture-step", "1,000-state ensemble with an instantaneous drive",
       "experiment: {kind: SlowflowEnsemble}\ndrive: {ramp_duration_us: 0}\n"
       "run: {ensemble_size: 1000, duration_us: 20}\n"},
      {"oscillator-1d", "1D parametric oscillator, 1 us ramp, 5 us",
       "experiment: {kind: Sim1D}\nrun: {duration_us: 5}\n"},
      {"locking", "Noise-free 3D runs, ramp vs step, phi_x in {0, pi/2}, 20 us",
       "experiment: {kind: Sim3D}\nrun: {duration_us: 20, phi_x_values: [0, 1.5707963267948966], "
       "ramp_variants_us: [1, 0]}\n"},
      {"detuning", "omega_x scan over +-2% at three phi_x, 20 us each",
       "experiment: {kind: DetuningScan}\nrun: {duration_us: 20, detuning_percent: [-2, -1, 0, 1, 2], "
       "phi_x_values: [0, 0.7853981633974483, 1.5707963267948966]}\n"},
      {"noise-floor", "Johnson-only resonator noise with the drive off, 4 x 0.25 ms",
       "experiment: {kind: NoisyEnsemble}\ndrive: {epsilon_max: 0}\n"
       "integrator: {mode: SDE, abstol: 1e-9, reltol: 1e-9}\n"
       "noise: {surface: false, rf_walk: false}\n"
       "run: {trajectories: 4, duration_us: 250, spectrum_band_MHz: [198, 202]}\n"},
      {"snr", "200 noisy trajectories of 1 ms, SNR vs detection time",
       "experiment: {kind: SnrCurve}\nintegrator: {mode: SDE, abstol: 1e-9, reltol: 1e-9}\n"
       "run: {trajectories: 200, duration_us: 1000, "
       "detection_times_us: [100, 200, 300, 400, 500, 600, 700, 800, 900, 1000]}\n"},
      {"snr-desk", "20 noisy trajectories of 0.2 ms, SNR vs detection time",
       "experiment: {kind: SnrCurve}\nintegrator: {mode: SDE, abstol: 1e-9, reltol: 1e-9}\n"
       "run: {trajectories: 20, duration_us: 200, detection_times_us: [50, 100, 150, 200]}\n"},
      {"bursts", "Single-bin power statistics at SNR 0 dB and 3 dB",
       "experiment: {kind: BurstStats}\n"},
  };
  return p;
}

inline const Preset& find_preset(const std::string& name) {
  for (const auto& p : presets()) {
    if (p.name == name) return p;
  }
  std::string names;
  for (const auto& p : presets()) names += (names.empty() ? "" : ", ") + p.name;
  throw ConfigError({"unknown preset '" + name + "' (available: " + names + ")"});
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

/// Reads a YAML (or JSON) document. A run manifest is accepted as well; its
/// embedded resolved configuration is used.
inline YAML::Node load_document(const std::string& path) {
  std::ifstream probe(path);
  if (!probe) throw ConfigError({"cannot read '" + path + "'"});
  YAML::Node doc;
  try {
    doc = YAML::LoadFile(path);
  } catch (const YAML::ParserException& e) {
    std::ostringstream os;
    os << path << ":" << e.mark.line + 1 << ":" << e.mark.column + 1 << ": parse error: " << e.msg;
    throw ConfigError({os.str()});
  }
  if (doc.IsMap() && doc["manifest_version"] && doc["config"]) return doc["config"];
  return doc;
}

inline YAML::Node parse_override_value(const std::string& text) {
  try {
    return YAML::Load(text);
  } catch (const YAML::Exception&) {
    return YAML::Node(text);
  }
}

/// Applies "a.b.c=value" overrides to a document.
inline void apply_overrides(YAML::Node& doc, const std::vector<std::string>& overrides,
                            std::vector<std::string>& errors) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) {
      errors.push_back("override '" + o + "': expected key=value");
      continue;
    }
    const std::string key = o.substr(0, eq);
    std::vector<std::string> parts;
    std::stringstream ss(key);
    for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
    YAML::Node patch = parse_override_value(o.substr(eq + 1));
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
      YAML::Node wrap(YAML::NodeType::Map);
      wrap[*it] = patch;
      patch = wrap;
    }
    doc = config_detail::merge(doc, patch, "", errors);
  }
}

/// Converts a merged document into typed values and runs schema and
/// physics checks. Throws ConfigError listing every offending key.
inline RunConfig interpret(const YAML::Node& doc, std::vector<std::string> errors = {}) {
  using config_detail::Reader;
  Reader r(doc, errors);
  RunConfig c;
  c.resolved = YAML::Clone(doc);

  const auto kind = r.get<std::string>("experiment.kind");
  bool found = false;
  for (const auto& [name, k] : experiment_kinds()) {
    if (name == kind) {
      c.kind = k;
      found = true;
    }
  }
  r.check(found, "experiment.kind",
          "unknown experiment kind '" + kind + "' (allowed: " + allowed_kinds() + ")");
  c.seed = r.get<std::uint64_t>("experiment.seed", 1);
  const int workers = r.get<int>("experiment.workers", 1);
  r.check(workers >= 0, "experiment.workers", "must be >= 0 (0 = all cores)");
  c.workers = static_cast<unsigned>(std::max(0, workers));

  // Trap
  const auto sec = r.get<std::vector<double>>("trap.secular_MHz");
  r.check(sec.size() == 3, "trap.secular_MHz", "needs three values (x, y, z)");
  for (std::size_t i = 0; i < std::min<std::size_t>(3, sec.size()); ++i) {
    r.check(sec[i] > 0.0, "trap.secular_MHz", "secular frequencies must be positive");
    c.trap.secular[i] = units::angular_MHz(sec[i]);
  }
  c.trap.omega_rf = units::angular_MHz(r.get<double>("trap.rf_MHz"));
  c.trap.phi_rf = r.get<double>("trap.phi_rf");
  c.trap.d_eff = r.get<double>("trap.d_eff_mm") * units::mm;
  r.check(c.trap.d_eff > 0.0, "trap.d_eff_mm", "must be positive");
  if (sec.size() == 3) {
    r.check(c.trap.omega_rf > 2.0 * std::max(c.trap.secular[0], c.trap.secular[1]), "trap.rf_MHz",
            "omega_rf must exceed 2*max(omega_x, omega_y)");
    if (sec[0] == sec[1]) {
      c.warnings.push_back(
          "TrapParams.secular_MHz: omega_y equals omega_x; the intentional detuning of omega_y "
          "prevents y-axis excitation by the parametric drive");
    }
  }
  c.dc_split = r.get<double>("trap.dc_split");
  r.check(c.dc_split >= 0.0 && c.dc_split <= 1.0, "trap.dc_split", "must lie in [0, 1]");
  const auto cal = r.get<std::string>("trap.calibration");
  r.check(cal == "floquet" || cal == "pseudopotential", "trap.calibration",
          "must be 'floquet' or 'pseudopotential'");
  c.calibration = cal == "pseudopotential" ? CalibrationMode::Pseudopotential : CalibrationMode::Floquet;
  const auto conv = r.get<std::string>("trap.anharmonic.kHz_convention");
  r.check(conv == "angular" || conv == "plain", "trap.anharmonic.kHz_convention",
          "must be 'angular' (2 pi x 1e3 rad/s) or 'plain' (1e3 rad/s)");
  c.convention = conv == "plain" ? KilohertzConvention::Plain : KilohertzConvention::Angular;
  c.lambdas = {kilohertz_to_rad_per_s(r.get<double>("trap.anharmonic.lambda4_kHz_per_um2"), c.convention) /
                   (units::um * units::um),
               kilohertz_to_rad_per_s(r.get<double>("trap.anharmonic.lambda6_kHz_per_um4"), c.convention) /
                   std::pow(units::um, 4)};
  c.anharmonic_axes = config_detail::axis_mask(r, "trap.anharmonic.axes");
  c.coefficient_file = r.get<std::string>("trap.anharmonic.coefficient_file");

  // Resonator
  const double Q = r.get<double>("resonator.Q");
  const double Z0 = r.get<double>("resonator.Z0_ohm");
  const double fres = r.get<double>("resonator.f_res_MHz");
  const double Tres = r.get<double>("resonator.temperature_K");
  r.check(Q > 0.0, "resonator.Q", "must be positive");
  r.check(Z0 > 0.0, "resonator.Z0_ohm", "must be positive");
  r.check(fres > 0.0, "resonator.f_res_MHz", "must be positive");
  r.check(Tres >= 0.0, "resonator.temperature_K", "must be >= 0");
  if (Q > 0.0 && Z0 > 0.0 && fres > 0.0 && Tres >= 0.0) {
    c.resonator = ResonatorParams(Q, Z0, units::angular_MHz(fres), Tres);
  }

  // Drive
  c.drive.omega_d = units::angular_MHz(r.get<double>("drive.f_d_MHz"));
  c.drive.phi_d = r.get<double>("drive.phi_d");
  c.drive.epsilon_max = r.get<double>("drive.epsilon_max");
  c.drive.ramp_duration = r.get<double>("drive.ramp_duration_us") * units::us;
  c.drive.start_time = r.get<double>("drive.start_time_us") * units::us;
  r.check(c.drive.omega_d > 0.0, "drive.f_d_MHz", "must be positive");
  r.check(c.drive.epsilon_max >= 0.0 && c.drive.epsilon_max < 1.0, "drive.epsilon_max",
          "must lie in [0, 1)");
  r.check(c.drive.ramp_duration >= 0.0, "drive.ramp_duration_us", "must be >= 0");
  r.check(c.drive.start_time >= 0.0, "drive.start_time_us", "must be >= 0");

  // Initial condition
  c.init.temperature = r.get<double>("init.temperature_K");
  r.check(c.init.temperature >= 0.0, "init.temperature_K", "must be >= 0");
  const auto ph = r.get<std::vector<double>>("init.phases");
  r.check(ph.size() == 3, "init.phases", "needs three values (phi_x, phi_y, phi_z)");
  for (std::size_t i = 0; i < std::min<std::size_t>(3, ph.size()); ++i) c.init.phases[i] = ph[i];
  c.init.phi_rf = r.get<double>("init.phi_rf");
  c.init.secular = c.trap.secular;

  // Integrator
  const auto mode = r.get<std::string>("integrator.mode");
  r.check(mode == "ODE" || mode == "SDE", "integrator.mode", "must be 'ODE' or 'SDE'");
  c.integrator.mode = mode == "SDE" ? IntegrationMode::SDE : IntegrationMode::ODE;
  c.integrator.abstol = r.get<double>("integrator.abstol");
  c.integrator.reltol = r.get<double>("integrator.reltol");
  for (const char* k : {"integrator.abstol", "integrator.reltol"}) {
    const double v = r.get<double>(k);
    r.check(v > 0.0 && v <= 1e-3, k, "tolerance must lie in (0, 1e-3]");
  }
  const double max_step = r.get<double>("integrator.max_step_ns");
  r.check(max_step >= 0.0, "integrator.max_step_ns", "must be >= 0 (0 = unlimited)");
  if (max_step > 0.0) c.integrator.max_step = max_step * units::ns;
  c.sample_rate = r.get<double>("integrator.sample_rate_GHz") * units::GHz;
  if (sec.size() == 3) {
    const double f_top = (c.trap.omega_rf + *std::max_element(c.trap.secular.begin(), c.trap.secular.end())) / kTwoPi;
    r.check(c.sample_rate > 2.0 * f_top, "integrator.sample_rate_GHz",
            "must exceed twice the upper micromotion sideband");
  }
  const int subs = r.get<int>("integrator.noise_substeps", 1);
  r.check(subs >= 1, "integrator.noise_substeps", "must be >= 1");
  c.noise_substeps = static_cast<std::size_t>(std::max(1, subs));

  // Noise
  c.noise.surface = r.get<bool>("noise.surface");
  c.noise.johnson = r.get<bool>("noise.johnson");
  c.noise.rf_walk = r.get<bool>("noise.rf_walk");
  c.noise.surface_baseline = r.get<double>("noise.S_E_baseline");
  c.noise.reference_omega = units::angular_MHz(r.get<double>("noise.reference_f_MHz"));
  c.noise.reference_distance = r.get<double>("noise.reference_distance_um") * units::um;
  c.noise.reference_temperature = r.get<double>("noise.reference_temperature_K");
  c.noise.electrode_distance = r.get<double>("noise.electrode_distance_um") * units::um;
  c.noise.temperature = r.get<double>("noise.temperature_K");
  c.noise.rf_walk_sigma = r.get<double>("noise.rf_walk_sigma");
  c.noise.rf_walk_horizon = r.get<double>("noise.rf_walk_horizon_ms") * units::ms;
  c.noise.surface_axes = config_detail::axis_mask(r, "noise.surface_axes");
  c.noise.detection_omega = c.resonator.omega_res();
  c.noise.seed = c.seed;
  r.check(c.noise.surface_baseline >= 0.0, "noise.S_E_baseline", "must be >= 0");
  r.check(c.noise.reference_omega > 0.0, "noise.reference_f_MHz", "must be positive");
  r.check(c.noise.reference_distance > 0.0, "noise.reference_distance_um", "must be positive");
  r.check(c.noise.reference_temperature > 0.0, "noise.reference_temperature_K", "must be positive");
  r.check(c.noise.electrode_distance > 0.0, "noise.electrode_distance_um", "must be positive");
  r.check(c.noise.temperature > 0.0, "noise.temperature_K", "must be positive");
  r.check(c.noise.rf_walk_sigma >= 0.0, "noise.rf_walk_sigma", "must be >= 0");
  r.check(c.noise.rf_walk_horizon > 0.0, "noise.rf_walk_horizon_ms", "must be positive");

  // Run
  c.duration = r.get<double>("run.duration_us") * units::us;
  r.check(c.duration > 0.0, "run.duration_us", "must be positive");
  r.check(c.duration <= 10.0 * units::ms, "run.duration_us", "must not exceed 10000 us");
  c.slowflow_gamma = r.get<double>("run.slowflow_gamma");
  r.check(c.slowflow_gamma >= 0.0, "run.slowflow_gamma", "must be >= 0");
  const int n_ens = r.get<int>("run.ensemble_size");
  r.check(n_ens >= 1, "run.ensemble_size", "must be >= 1");
  c.ensemble_size = static_cast<std::size_t>(std::max(1, n_ens));
  c.ensemble_init = r.get<std::string>("run.ensemble_init");
  r.check(c.ensemble_init == "thermal" || c.ensemble_init == "ring", "run.ensemble_init",
          "must be 'thermal' or 'ring'");
  if (auto w = r.optional_double("run.window_start_us")) c.window_start = *w * units::us;
  if (auto w = r.optional_double("run.window_end_us")) c.window_end = *w * units::us;
  c.trajectory_samples = static_cast<std::size_t>(std::max(0, r.get<int>("run.trajectory_samples")));
  const int pp = r.get<int>("run.portrait_points");
  r.check(pp >= 2, "run.portrait_points", "must be >= 2");
  c.portrait_points = static_cast<std::size_t>(std::max(2, pp));
  c.portrait_half_width = r.get<double>("run.portrait_half_width_um") * units::um;
  r.check(c.portrait_half_width > 0.0, "run.portrait_half_width_um", "must be positive");
  c.phi_x_values = r.get<std::vector<double>>("run.phi_x_values");
  r.check(!c.phi_x_values.empty(), "run.phi_x_values", "needs at least one value");
  for (double v : r.get<std::vector<double>>("run.ramp_variants_us")) {
    r.check(v >= 0.0, "run.ramp_variants_us", "ramp durations must be >= 0");
    c.ramp_variants.push_back(v * units::us);
  }
  for (double v : r.get<std::vector<double>>("run.detuning_percent")) {
    r.check(v > -50.0 && v < 50.0, "run.detuning_percent", "must lie in (-50, 50)");
    c.detuning_fractions.push_back(v / 100.0);
  }
  const int ntraj = r.get<int>("run.trajectories");
  r.check(ntraj >= 1, "run.trajectories", "must be >= 1");
  c.trajectories = static_cast<std::size_t>(std::max(1, ntraj));
  bool times_ok = true;
  for (double v : r.get<std::vector<double>>("run.detection_times_us")) {
    times_ok = times_ok && v > 0.0 && v * units::us <= c.duration * (1.0 + 1e-12);
    c.detection_times.push_back(v * units::us);
  }
  if (c.kind == ExperimentKind::SnrCurve) {
    r.check(times_ok && !c.detection_times.empty(), "run.detection_times_us",
            "detection times must lie in (0, duration_us]");
  }
  const auto band = r.get<std::vector<double>>("run.spectrum_band_MHz");
  r.check(band.size() == 2 && band[0] < band[1], "run.spectrum_band_MHz", "needs [low, high]");
  if (band.size() == 2) {
    c.band_lo = band[0] * units::MHz;
    c.band_hi = band[1] * units::MHz;
  }
  c.write_trajectories = r.get<std::string>("run.write_trajectories");
  r.check(c.write_trajectories == "binary" || c.write_trajectories == "csv" ||
              c.write_trajectories == "none",
          "run.write_trajectories", "must be 'binary', 'csv' or 'none'");
  c.burst_snr_db = r.get<std::vector<double>>("run.burst_snr_dB");
  const int bs = r.get<int>("run.burst_samples");
  r.check(bs >= 1, "run.burst_samples", "must be >= 1");
  c.burst_samples = static_cast<std::size_t>(std::max(1, bs));
  c.burst_series_length = static_cast<std::size_t>(std::max(1, r.get<int>("run.burst_series_length")));
  c.burst_dof = r.get<int>("run.burst_dof");
  r.check(c.burst_dof >= 1, "run.burst_dof", "must be >= 1");
  const int hb = r.get<int>("run.histogram_bins");
  r.check(hb >= 1, "run.histogram_bins", "must be >= 1");
  c.histogram_bins = static_cast<std::size_t>(std::max(1, hb));

  if (!errors.empty()) throw ConfigError(errors);
  return c;
}

/// Builds the merged document: defaults <- preset <- file <- overrides.
/// Merge problems (unknown keys, malformed overrides) are appended to
/// errors when given, thrown otherwise.
inline YAML::Node build_document(const std::optional<std::string>& config_path,
                                 const std::optional<std::string>& preset,
                                 const std::vector<std::string>& overrides,
                                 std::vector<std::string>* collect = nullptr) {
  std::vector<std::string> local;
  std::vector<std::string>& errors = collect ? *collect : local;
  YAML::Node doc = YAML::Load(kDefaultConfig);
  if (preset) doc = config_detail::merge(doc, YAML::Load(find_preset(*preset).yaml), "", errors);
  if (config_path) doc = config_detail::merge(doc, load_document(*config_path), "", errors);
  apply_overrides(doc, overrides, errors);
  if (!collect && !errors.empty()) throw ConfigError(errors);
  return doc;
}

inline RunConfig load_config(const std::optional<std::string>& config_path,
                             const std::optional<std::string>& preset = std::nullopt,
                             const std::vector<std::string>& overrides = {}) {
  std::vector<std::string> errors;
  const auto doc = build_document(config_path, preset, overrides, &errors);
  return interpret(doc, std::move(errors));
}

}  // namespace trapsim::app
