#pragma once

// Physical constants, parameter containers and closed-form calibration
// helpers shared by every other part of the library. Everything in here is
// strict SI; unit conversion happens at configuration ingestion.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace trapsim {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(const std::string& what, double last_time)
      : std::runtime_error(what), last_valid_time(last_time) {}
  double last_valid_time;
};

// ---------------------------------------------------------------------------
// Units
// ---------------------------------------------------------------------------

namespace units {
inline constexpr double um = 1e-6;
inline constexpr double mm = 1e-3;
inline constexpr double ns = 1e-9;
inline constexpr double us = 1e-6;
inline constexpr double ms = 1e-3;
inline constexpr double MHz = 1e6;
inline constexpr double GHz = 1e9;

/// 2π·f for f given in MHz.
constexpr double angular_MHz(double f_MHz) { return kTwoPi * f_MHz * MHz; }
}  // namespace units

/// How a frequency quoted in "kHz" is turned into rad/s. Anharmonic
/// coefficients are quoted as kHz/µm² and kHz/µm⁴ and the source does not
/// say which one is meant.
enum class KilohertzConvention {
  Angular,  // 1 kHz -> 2π·10³ rad/s
  Plain,    // 1 kHz -> 10³ rad/s
};

constexpr double kilohertz_to_rad_per_s(double value_kHz, KilohertzConvention c) {
  return c == KilohertzConvention::Angular ? value_kHz * kTwoPi * 1e3 : value_kHz * 1e3;
}

// ---------------------------------------------------------------------------
// Parameter containers
// ---------------------------------------------------------------------------

/// CODATA 2018 values. q is the charge magnitude; force terms apply the
/// electron's negative sign explicitly.
struct PhysicalConstants {
  static constexpr double electron_mass = 9.1093837015e-31;      // kg
  static constexpr double elementary_charge = 1.602176634e-19;  // C
  static constexpr double boltzmann = 1.380649e-23;             // J/K
  /// Signed electron charge.
  static constexpr double electron_charge = -elementary_charge;
};

struct TrapParams {
  std::array<double, 3> secular{units::angular_MHz(200.0), units::angular_MHz(173.0),
                                units::angular_MHz(70.0)};
  double omega_rf = units::angular_MHz(1452.0);
  double phi_rf = 0.0;
  /// Potential-per-mass polynomial coefficients along x (rad²/s² per m^(i-2)).
  double C4 = 0.0;
  double C6 = 0.0;
  double d_eff = 4.8 * units::mm;

  double omega_x() const { return secular[0]; }

  void validate() const {
    for (double w : secular) {
      if (!(w > 0.0)) throw DomainError("TrapParams: secular frequencies must be positive");
    }
    if (!(omega_rf > 2.0 * std::max(secular[0], secular[1]))) {
      throw DomainError("TrapParams: omega_rf must exceed 2*max(omega_x, omega_y)");
    }
    if (!(d_eff > 0.0)) throw DomainError("TrapParams: d_eff must be positive");
  }
};

/// Parallel RLC resonator described by quality factor, characteristic
/// impedance and resonance. R, L and C are derived.
class ResonatorParams {
 public:
  ResonatorParams() = default;
  ResonatorParams(double Q, double Z0, double omega_res, double temperature)
      : Q_(Q), Z0_(Z0), omega_res_(omega_res), temperature_(temperature) {
    if (!(Q > 0.0)) throw DomainError("ResonatorParams.Q must be positive");
    if (!(Z0 > 0.0)) throw DomainError("ResonatorParams.Z0 must be positive");
    if (!(omega_res > 0.0)) throw DomainError("ResonatorParams.omega_res must be positive");
    if (!(temperature >= 0.0)) throw DomainError("ResonatorParams.temperature must be >= 0");
  }

  double Q() const { return Q_; }
  double Z0() const { return Z0_; }
  double omega_res() const { return omega_res_; }
  double temperature() const { return temperature_; }

  double R() const { return Q_ * Z0_; }
  double L() const { return Z0_ / omega_res_; }
  double C() const { return 1.0 / (Z0_ * omega_res_); }

  /// One-sided Johnson voltage PSD across R, 4·k_B·T·R in V²/Hz.
  double johnson_floor() const { return 4.0 * PhysicalConstants::boltzmann * temperature_ * R(); }

 private:
  double Q_ = 1000.0;
  double Z0_ = 300.0;
  double omega_res_ = units::angular_MHz(200.0);
  double temperature_ = 4.0;
};

/// Parametric drive with a piecewise-linear strength envelope:
/// zero before start_time, linear ramp over ramp_duration, then flat.
struct DriveSchedule {
  double omega_d = units::angular_MHz(400.0);
  double phi_d = 0.0;
  double epsilon_max = 0.1;
  double ramp_duration = 1.0 * units::us;  // 0 -> step at start_time
  double start_time = 0.0;

  double ramp_end() const { return start_time + ramp_duration; }

  double epsilon(double t) const {
    if (t < start_time) return 0.0;
    if (ramp_duration <= 0.0 || t >= start_time + ramp_duration) return epsilon_max;
    return epsilon_max * (t - start_time) / ramp_duration;
  }

  void validate() const {
    if (!(epsilon_max >= 0.0 && epsilon_max < 1.0)) {
      throw DomainError("DriveSchedule: epsilon_max must lie in [0, 1)");
    }
    if (!(ramp_duration >= 0.0)) throw DomainError("DriveSchedule: ramp_duration must be >= 0");
    if (!(omega_d > 0.0)) throw DomainError("DriveSchedule: omega_d must be positive");
  }
};

// ---------------------------------------------------------------------------
// Closed-form helpers
// ---------------------------------------------------------------------------

/// Resonator-induced damping rate γ = q²R / (m d_eff²). R = 0 gives 0.
inline double damping_rate(double mass, double d_eff, double charge, double R) {
  if (!(mass > 0.0) || !(d_eff > 0.0) || !(charge > 0.0) || !(R >= 0.0)) {
    throw DomainError("damping_rate: inputs must be positive");
  }
  return charge * charge * R / (mass * d_eff * d_eff);
}

inline double damping_rate(const TrapParams& trap, const ResonatorParams& res) {
  return damping_rate(PhysicalConstants::electron_mass, trap.d_eff,
                      PhysicalConstants::elementary_charge, res.R());
}

/// Amplitude ratio V_rf / V_d between the trapping rf and a parametric drive
/// of relative strength epsilon applied on the same electrodes.
inline double drive_voltage_ratio(double epsilon, double omega_rf, double omega_x) {
  if (!(epsilon > 0.0)) throw DomainError("drive_voltage_ratio: epsilon must be > 0");
  if (!(omega_rf > 0.0) || !(omega_x > 0.0)) {
    throw DomainError("drive_voltage_ratio: frequencies must be > 0");
  }
  return std::sqrt(2.0) * omega_rf / (omega_x * epsilon);
}

inline double drive_voltage_ratio_db(double epsilon, double omega_rf, double omega_x) {
  return 20.0 * std::log10(drive_voltage_ratio(epsilon, omega_rf, omega_x));
}

struct PhaseSpacePoint {
  double position;  // m
  double velocity;  // m/s
};

/// Thermal initial condition at a given oscillation phase:
/// r = sqrt(kT/(mω²)) cos(phase), v = -sqrt(kT/m) sin(phase).
inline PhaseSpacePoint thermal_sample(double temperature, double omega, double phase,
                                      double mass = PhysicalConstants::electron_mass) {
  if (!(temperature >= 0.0)) throw DomainError("thermal_sample: T must be >= 0");
  if (!(omega > 0.0)) throw DomainError("thermal_sample: omega must be > 0");
  const double v_scale = std::sqrt(PhysicalConstants::boltzmann * temperature / mass);
  return {v_scale / omega * std::cos(phase), -v_scale * std::sin(phase)};
}

}  // namespace trapsim
