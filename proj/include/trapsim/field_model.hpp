#pragma once

// Analytic stand-in for the trap's electrode fields. Every field is written as
// the acceleration it imparts on the electron, a = (q/m) E, which keeps the
// calibration in frequency units; fields_at() converts back to V/m.
//
//   dc:     a_i = -c_i r_i - sum_{k=3..6} k C_{i,k} r_i^{k-1}
//   rf:     a_i = -kappa_i r_i cos(omega_rf t + phi_rf)
//   drive:  a_i = -eps(t) d_i r_i cos(omega_d t + phi_d)
//
// with c_x + c_y + c_z = 0, kappa_x + kappa_y + kappa_z = 0 (both Laplace)
// and d_x + d_y = 0, d_z = 0.

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "trapsim/core.hpp"
#include "trapsim/dop853.hpp"

namespace trapsim {

using Vec3 = std::array<double, 3>;

inline constexpr const char* kAxisNames[3] = {"x", "y", "z"};

/// Axis-aligned box in which the field expansion is trusted.
struct RegionOfInterest {
  Vec3 half_width{150.0 * units::um, 150.0 * units::um, 25.0 * units::um};

  bool contains(const Vec3& r) const {
    for (int i = 0; i < 3; ++i) {
      if (!(std::abs(r[i]) <= half_width[i])) return false;
    }
    return true;
  }
};

class OutOfRegion : public std::out_of_range {
 public:
  explicit OutOfRegion(const Vec3& r)
      : std::out_of_range("position outside the field region of interest"), position(r) {}
  Vec3 position;
};

/// Per-axis anharmonic terms of the potential per unit mass, sum_k C_k r^k
/// for k = 3..6. Units: s^-2 m^(2-k).
struct AnharmonicSpec {
  std::array<std::array<double, 4>, 3> C{};  // C[axis][k-3]

  double coefficient(int axis, int order) const { return C.at(axis).at(order - 3); }
  void set(int axis, int order, double value) { C.at(axis).at(order - 3) = value; }

  /// Amplitude-dependent frequency shift coefficients of the averaged
  /// motion along x: lambda4 = 3 C4 / (2 omega), lambda6 = 15 C6 / (8 omega).
  double lambda4(double omega) const { return 3.0 * C[0][1] / (2.0 * omega); }
  double lambda6(double omega) const { return 15.0 * C[0][3] / (8.0 * omega); }

  static AnharmonicSpec from_lambdas(double lambda4, double lambda6, double omega, int axis = 0) {
    AnharmonicSpec spec;
    spec.C.at(axis)[1] = 2.0 * omega * lambda4 / 3.0;
    spec.C.at(axis)[3] = 8.0 * omega * lambda6 / 15.0;
    return spec;
  }

  bool empty() const {
    for (const auto& row : C) {
      for (double c : row) {
        if (c != 0.0) return false;
      }
    }
    return true;
  }

  /// -dU/dr along one axis (acceleration).
  double acceleration(int axis, double r) const {
    const auto& c = C[axis];
    // -(3 C3 r^2 + 4 C4 r^3 + 5 C5 r^4 + 6 C6 r^5), Horner in r
    return -r * r * (3.0 * c[0] + r * (4.0 * c[1] + r * (5.0 * c[2] + r * 6.0 * c[3])));
  }

  double potential(int axis, double r) const {
    const auto& c = C[axis];
    const double r3 = r * r * r;
    return r3 * (c[0] + r * (c[1] + r * (c[2] + r * c[3])));
  }
};

/// Reads a plain-text coefficient table. One row per axis:
///
///   # units: si | um
///   # axis  C3  C4  C5  C6
///   x  0  -2.147e25  0  2.855e31
///
/// With "units: um" the coefficients are in s^-2 um^(2-k) and are converted
/// to SI on load. Axes not listed keep zero coefficients.
inline AnharmonicSpec load_coefficient_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open coefficient file '" + path + "'");
  AnharmonicSpec spec;
  bool micrometres = false;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto pos = line.find("units:"); pos != std::string::npos && line.find('#') < pos) {
      std::istringstream us(line.substr(pos + 6));
      std::string u;
      us >> u;
      if (u == "um") {
        micrometres = true;
      } else if (u != "si") {
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": unknown units '" + u +
                                 "'");
      }
      continue;
    }
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string axis;
    if (!(ls >> axis)) continue;
    int a = axis == "x" ? 0 : axis == "y" ? 1 : axis == "z" ? 2 : -1;
    if (a < 0) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad axis '" + axis + "'");
    }
    for (int k = 3; k <= 6; ++k) {
      double v = 0.0;
      if (!(ls >> v)) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": expected 4 coefficients (C3..C6)");
      }
      if (micrometres) v *= std::pow(units::um, 2 - k);
      spec.set(a, k, v);
    }
  }
  return spec;
}

/// Inverse effective electrode distance D_inv(r) in 1/m. Constant by
/// default; optional separable polynomial corrections
/// D_i(r) = D0_i + sum_j sum_{k=1..3} poly[i][j][k-1] r_j^k.
struct CouplingModel {
  Vec3 constant{1.0 / (4.8 * units::mm), 0.0, 0.0};
  std::array<std::array<std::array<double, 3>, 3>, 3> poly{};

  static CouplingModel uniform(double d_eff) {
    CouplingModel m;
    m.constant = {1.0 / d_eff, 0.0, 0.0};
    return m;
  }

  bool is_constant() const {
    for (const auto& a : poly)
      for (const auto& b : a)
        for (double c : b)
          if (c != 0.0) return false;
    return true;
  }

  Vec3 at(const Vec3& r) const {
    Vec3 d = constant;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        const auto& p = poly[i][j];
        d[i] += r[j] * (p[0] + r[j] * (p[1] + r[j] * p[2]));
      }
    }
    return d;
  }
};

struct FieldSet {
  Vec3 dc{};     // V/m
  Vec3 rf{};     // V/m, instantaneous
  Vec3 drive{};  // V/m, instantaneous, includes eps(t)
};

class FieldModel {
 public:
  Vec3 dc_curvature{};     // c_i, s^-2
  Vec3 rf_curvature{};     // kappa_i, s^-2
  Vec3 drive_curvature{};  // d_i per unit eps, s^-2
  double omega_rf = units::angular_MHz(1452.0);
  double phi_rf = 0.0;
  AnharmonicSpec anharmonic;
  CouplingModel coupling;
  RegionOfInterest roi;

  /// Static (dc + anharmonic) acceleration.
  Vec3 static_acceleration(const Vec3& r) const {
    Vec3 a;
    for (int i = 0; i < 3; ++i) a[i] = -dc_curvature[i] * r[i] + anharmonic.acceleration(i, r[i]);
    return a;
  }

  /// Total trap acceleration given the already-evaluated carrier terms.
  /// rf_scale multiplies both rf and drive amplitudes (they share the rf
  /// electrodes).
  Vec3 trap_acceleration(const Vec3& r, double rf_carrier, double drive_carrier,
                         double rf_scale = 1.0) const {
    Vec3 a = static_acceleration(r);
    for (int i = 0; i < 3; ++i) {
      a[i] -= rf_scale * (rf_curvature[i] * rf_carrier + drive_curvature[i] * drive_carrier) * r[i];
    }
    return a;
  }

  /// Electric fields in V/m at r and t. Throws OutOfRegion outside the ROI.
  FieldSet fields_at(const Vec3& r, double t, const DriveSchedule& schedule,
                     double rf_scale = 1.0) const {
    if (!roi.contains(r)) throw OutOfRegion(r);
    constexpr double m_over_q =
        PhysicalConstants::electron_mass / PhysicalConstants::electron_charge;
    const double rf_c = rf_scale * std::cos(omega_rf * t + phi_rf);
    const double d_c =
        rf_scale * schedule.epsilon(t) * std::cos(schedule.omega_d * t + schedule.phi_d);
    FieldSet f;
    const Vec3 a_static = static_acceleration(r);
    for (int i = 0; i < 3; ++i) {
      f.dc[i] = m_over_q * a_static[i];
      f.rf[i] = m_over_q * (-rf_curvature[i] * r[i]) * rf_c;
      f.drive[i] = m_over_q * (-drive_curvature[i] * r[i]) * d_c;
    }
    return f;
  }

  Vec3 coupling_vector(const Vec3& r) const {
    if (!roi.contains(r)) throw OutOfRegion(r);
    return coupling.at(r);
  }

  /// Lowest-order secular frequencies sqrt(c_i + kappa_i^2 / (2 omega_rf^2)).
  Vec3 pseudopotential_frequencies() const {
    Vec3 w;
    for (int i = 0; i < 3; ++i) {
      const double w2 =
          dc_curvature[i] + rf_curvature[i] * rf_curvature[i] / (2.0 * omega_rf * omega_rf);
      w[i] = w2 > 0.0 ? std::sqrt(w2) : std::nan("");
    }
    return w;
  }
};

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

/// Exact secular frequency of x'' = -(c + kappa cos(Omega t)) x from the
/// monodromy matrix over one rf period: trace = 2 cos(omega_sec T). Returns
/// NaN when the motion is unstable.
inline double floquet_secular_frequency(double c, double kappa, double omega_rf) {
  const double period = kTwoPi / omega_rf;
  auto rhs = [&](double t, const std::array<double, 4>& y, std::array<double, 4>& dy) {
    const double k = c + kappa * std::cos(omega_rf * t);
    dy[0] = y[1];
    dy[1] = -k * y[0];
    dy[2] = y[3];
    dy[3] = -k * y[2];
  };
  Dop853Settings s;
  s.abstol = 1e-14;
  s.reltol = 1e-14;
  Dop853<4, decltype(rhs)> stepper(rhs, s, {1.0, omega_rf, 1.0 / omega_rf, 1.0});
  stepper.reset(0.0, {1.0, 0.0, 0.0, 1.0});
  while (stepper.time() < period) stepper.step(period);
  const auto& y = stepper.state();
  const double half_trace = 0.5 * (y[0] + y[3]);
  if (!(std::abs(half_trace) <= 1.0)) return std::nan("");
  return std::acos(half_trace) / period;
}

enum class CalibrationMode {
  Pseudopotential,  // c_i + kappa_i^2/(2 Omega^2) = omega_i^2
  Floquet,          // exact secular frequencies of the linear Mathieu motion
};

struct CalibrationOptions {
  double dc_split = 0.5;  // share of the axial dc curvature taken from x
  CalibrationMode mode = CalibrationMode::Floquet;
  bool rf_enabled = true;
  double phi_rf = 0.0;
  /// Drive x-curvature per unit eps is omega_ref^2; 0 -> use target omega_x.
  double drive_reference_omega = 0.0;
};

namespace calibration_detail {

struct Unknowns {
  double kappa_x, kappa_y, c_z;
};

inline void apply(FieldModel& m, const Unknowns& u, double split) {
  m.dc_curvature = {-split * u.c_z, -(1.0 - split) * u.c_z, u.c_z};
  m.rf_curvature = {u.kappa_x, u.kappa_y, -(u.kappa_x + u.kappa_y)};
}

inline Vec3 floquet_frequencies(const FieldModel& m) {
  Vec3 w;
  for (int i = 0; i < 3; ++i) {
    w[i] = floquet_secular_frequency(m.dc_curvature[i], m.rf_curvature[i], m.omega_rf);
  }
  return w;
}

// Solve the lowest-order conditions for c_z by bisection; kappa_x > 0,
// kappa_y < 0 (a radial quadrupole), kappa_z = -(kappa_x + kappa_y).
inline Unknowns pseudopotential_solution(const Vec3& w, double omega_rf, double s) {
  const double two_o2 = 2.0 * omega_rf * omega_rf;
  auto kappas = [&](double cz, double& kx, double& ky) {
    const double ax = w[0] * w[0] + s * cz;
    const double ay = w[1] * w[1] + (1.0 - s) * cz;
    if (ax < 0.0 || ay < 0.0) return false;
    kx = std::sqrt(two_o2 * ax);
    ky = -std::sqrt(two_o2 * ay);
    return true;
  };
  auto residual = [&](double cz) {
    double kx = 0, ky = 0;
    kappas(cz, kx, ky);
    const double kz = -(kx + ky);
    return kz * kz / two_o2 + cz - w[2] * w[2];
  };
  double hi = w[2] * w[2];
  double lo = -std::min(s > 0.0 ? w[0] * w[0] / s : INFINITY,
                        s < 1.0 ? w[1] * w[1] / (1.0 - s) : INFINITY);
  if (!std::isfinite(lo)) lo = -hi;
  double f_lo = residual(lo), f_hi = residual(hi);
  if (f_lo > 0.0 || f_hi < 0.0) {
    throw CalibrationError("calibrate: no real rf/dc solution for the requested frequencies");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (residual(mid) > 0.0) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  Unknowns u{};
  u.c_z = 0.5 * (lo + hi);
  if (!kappas(u.c_z, u.kappa_x, u.kappa_y)) {
    throw CalibrationError("calibrate: negative rf curvature required");
  }
  return u;
}

// 3x3 linear solve by Cramer's rule.
inline std::array<double, 3> solve3(const std::array<std::array<double, 3>, 3>& a,
                                    const std::array<double, 3>& b) {
  auto det = [](const std::array<std::array<double, 3>, 3>& m) {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  };
  const double d = det(a);
  if (d == 0.0 || !std::isfinite(d)) throw CalibrationError("calibrate: singular Jacobian");
  std::array<double, 3> x{};
  for (int c = 0; c < 3; ++c) {
    auto m = a;
    for (int r = 0; r < 3; ++r) m[r][c] = b[r];
    x[c] = det(m) / d;
  }
  return x;
}

}  // namespace calibration_detail

/// Builds a FieldModel whose secular frequencies match `target` (rad/s).
/// Throws CalibrationError when no rf/dc combination exists.
inline FieldModel calibrate(const Vec3& target, double omega_rf,
                            const CalibrationOptions& opt = {}) {
  using namespace calibration_detail;
  for (double w : target) {
    if (!(w > 0.0)) throw CalibrationError("calibrate: target frequencies must be positive");
  }
  if (!(omega_rf > 2.0 * std::max(target[0], target[1]))) {
    throw CalibrationError("calibrate: omega_rf must exceed twice the radial frequencies");
  }
  if (!(opt.dc_split >= 0.0 && opt.dc_split <= 1.0)) {
    throw CalibrationError("calibrate: dc_split must lie in [0, 1]");
  }
  if (!opt.rf_enabled) {
    // Laplace forbids a static field that confines along all three axes.
    throw CalibrationError("calibrate: rf amplitude is required for radial confinement");
  }

  FieldModel m;
  m.omega_rf = omega_rf;
  m.phi_rf = opt.phi_rf;
  const double w_ref = opt.drive_reference_omega > 0.0 ? opt.drive_reference_omega : target[0];
  m.drive_curvature = {w_ref * w_ref, -w_ref * w_ref, 0.0};

  Unknowns u = pseudopotential_solution(target, omega_rf, opt.dc_split);
  apply(m, u, opt.dc_split);
  if (opt.mode == CalibrationMode::Pseudopotential) return m;

  // Newton refinement on the exact (Floquet) secular frequencies.
  auto residual = [&](const Unknowns& x) {
    FieldModel trial = m;
    apply(trial, x, opt.dc_split);
    const Vec3 w = floquet_frequencies(trial);
    std::array<double, 3> r{};
    for (int i = 0; i < 3; ++i) {
      if (!std::isfinite(w[i])) throw CalibrationError("calibrate: unstable Mathieu motion");
      r[i] = (w[i] - target[i]) / target[i];
    }
    return r;
  };
  for (int iter = 0; iter < 30; ++iter) {
    const auto r = residual(u);
    if (std::max({std::abs(r[0]), std::abs(r[1]), std::abs(r[2])}) < 1e-12) break;
    std::array<std::array<double, 3>, 3> jac{};
    const std::array<double, 3> x0{u.kappa_x, u.kappa_y, u.c_z};
    const std::array<double, 3> steps{1e-7 * std::abs(u.kappa_x), 1e-7 * std::abs(u.kappa_y),
                                      1e-7 * std::max(std::abs(u.c_z), target[2] * target[2])};
    for (int c = 0; c < 3; ++c) {
      auto xp = x0;
      xp[c] += steps[c];
      const auto rp = residual({xp[0], xp[1], xp[2]});
      for (int row = 0; row < 3; ++row) jac[row][c] = (rp[row] - r[row]) / steps[c];
    }
    const auto dx = solve3(jac, {-r[0], -r[1], -r[2]});
    u.kappa_x += dx[0];
    u.kappa_y += dx[1];
    u.c_z += dx[2];
  }
  apply(m, u, opt.dc_split);
  const auto r = residual(u);
  if (std::max({std::abs(r[0]), std::abs(r[1]), std::abs(r[2])}) > 1e-9) {
    throw CalibrationError("calibrate: Floquet refinement did not converge");
  }
  return m;
}

}  // namespace trapsim
