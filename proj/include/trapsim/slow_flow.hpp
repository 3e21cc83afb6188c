#pragma once

// Averaged amplitude/phase equations of the parametrically driven anharmonic
// oscillator x = A cos(omega_d t / 2 + phi):
//
//   dA/dt   = -(gamma/2) A + (eps omega_x / 4) A sin 2phi
//   dphi/dt =  (eps omega_x / 4) cos 2phi + lambda4 A^2 + lambda6 A^4
//
// For gamma = 0 the flow is Hamiltonian in (phi, J = A^2/2) and its H = 0
// level is the figure-eight separatrix through the origin.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "trapsim/core.hpp"
#include "trapsim/dop853.hpp"
#include "trapsim/noise.hpp"
#include "trapsim/parallel.hpp"

namespace trapsim {

struct SlowState {
  double A = 0.0;    // m
  double phi = 0.0;  // rad

  double x() const { return A * std::cos(phi); }
  double y() const { return A * std::sin(phi); }

  static SlowState from_cartesian(double x, double y) { return {std::hypot(x, y), std::atan2(y, x)}; }
};

/// Reduces an angle to [0, 2pi).
inline double wrap_two_pi(double phi) {
  double r = std::fmod(phi, kTwoPi);
  return r < 0.0 ? r + kTwoPi : r;
}

/// Anharmonic shifts as quoted in kHz/um^2 and kHz/um^4, converted to SI.
struct LambdaPair {
  double lambda4;  // rad/s/m^2
  double lambda6;  // rad/s/m^4
};

inline LambdaPair reference_lambdas(KilohertzConvention c = KilohertzConvention::Angular) {
  return {kilohertz_to_rad_per_s(-4.08, c) / (units::um * units::um),
          kilohertz_to_rad_per_s(6.78e-6, c) / std::pow(units::um, 4)};
}

struct SlowFlowParams {
  double gamma = 0.0;
  DriveSchedule schedule{};
  double omega_x = units::angular_MHz(200.0);
  double lambda4 = reference_lambdas().lambda4;
  double lambda6 = reference_lambdas().lambda6;

  void validate() const {
    if (!(gamma >= 0.0)) throw DomainError("SlowFlowParams: gamma must be >= 0");
    if (!(omega_x > 0.0)) throw DomainError("SlowFlowParams: omega_x must be > 0");
    schedule.validate();
  }
};

struct SlowRate {
  double dA = 0.0;    // m/s
  double dphi = 0.0;  // rad/s
};

inline SlowRate slowflow_rate(const SlowState& s, double epsilon, const SlowFlowParams& p) {
  const double a = 0.25 * epsilon * p.omega_x;
  const double A2 = s.A * s.A;
  return {-0.5 * p.gamma * s.A + a * s.A * std::sin(2.0 * s.phi),
          a * std::cos(2.0 * s.phi) + p.lambda4 * A2 + p.lambda6 * A2 * A2};
}

inline SlowRate slowflow_rhs(const SlowState& s, double t, const SlowFlowParams& p) {
  if (!(s.A >= 0.0)) throw DomainError("slowflow_rhs: A must be >= 0");
  return slowflow_rate(s, p.schedule.epsilon(t), p);
}

/// Conserved quantity of the gamma = 0 flow at fixed epsilon, J = A^2/2:
/// H = (eps omega_x/4) J cos 2phi + lambda4 J^2 + (4/3) lambda6 J^3.
inline double slow_hamiltonian(const SlowState& s, const SlowFlowParams& p, double epsilon) {
  const double J = 0.5 * s.A * s.A;
  return 0.25 * epsilon * p.omega_x * J * std::cos(2.0 * s.phi) + p.lambda4 * J * J +
         (4.0 / 3.0) * p.lambda6 * J * J * J;
}

enum class Stability { Center, Saddle, Stable, Unstable };

inline const char* to_string(Stability s) {
  switch (s) {
    case Stability::Center: return "center";
    case Stability::Saddle: return "saddle";
    case Stability::Stable: return "stable";
    case Stability::Unstable: return "unstable";
  }
  return "?";
}

struct FixedPoint {
  double A;
  double phi;  // in [0, 2pi)
  Stability stability;
};

namespace slowflow_detail {

/// Positive roots u = A^2 of lambda6 u^2 + lambda4 u + c = 0.
inline std::vector<double> positive_square_roots(double lambda6, double lambda4, double c) {
  std::vector<double> u;
  if (lambda6 == 0.0) {
    if (lambda4 != 0.0 && -c / lambda4 > 0.0) u.push_back(-c / lambda4);
    return u;
  }
  const double disc = lambda4 * lambda4 - 4.0 * lambda6 * c;
  if (disc < 0.0) return u;
  const double sq = std::sqrt(disc);
  // Numerically stable pair.
  const double q = -0.5 * (lambda4 + std::copysign(sq, lambda4));
  for (double r : {q / lambda6, q != 0.0 ? c / q : 0.0}) {
    if (r > 0.0 && std::isfinite(r)) u.push_back(r);
  }
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  return u;
}

inline Stability classify(double trace, double det) {
  if (det < 0.0) return Stability::Saddle;
  if (trace == 0.0) return Stability::Center;
  return trace < 0.0 ? Stability::Stable : Stability::Unstable;
}

}  // namespace slowflow_detail

/// All fixed points at constant epsilon, origin first. Non-origin points are
/// ordered by phase.
inline std::vector<FixedPoint> fixed_points(const SlowFlowParams& p, double epsilon) {
  if (!(epsilon >= 0.0)) throw DomainError("fixed_points: epsilon must be >= 0");
  const double a = 0.25 * epsilon * p.omega_x;
  std::vector<FixedPoint> out;
  // Origin: linearization in Cartesian coordinates has eigenvalues
  // -gamma/2 +- a.
  {
    const double lo = -0.5 * p.gamma - a, hi = -0.5 * p.gamma + a;
    Stability st = lo * hi < 0.0 ? Stability::Saddle
                   : (hi < 0.0) ? Stability::Stable
                   : (lo > 0.0) ? Stability::Unstable
                                : Stability::Center;
    if (a == 0.0 && p.gamma == 0.0) st = Stability::Center;
    out.push_back({0.0, 0.0, st});
  }
  if (a == 0.0) {
    // Free precession: fixed points only where lambda4 A^2 + lambda6 A^4 = 0,
    // which are rings, not isolated points; report none.
    return out;
  }
  const double s = p.gamma / (2.0 * a);  // required sin 2phi
  if (s > 1.0) return out;
  std::vector<double> two_phis;
  const double base = std::asin(s);
  two_phis = {base, kPi - base};
  std::vector<FixedPoint> pts;
  for (double tp : two_phis) {
    const double c2 = std::cos(tp);
    for (double u : slowflow_detail::positive_square_roots(p.lambda6, p.lambda4, a * c2)) {
      const double A = std::sqrt(u);
      // Jacobian in (A, phi).
      const double j12 = 2.0 * a * A * c2;
      const double j21 = 2.0 * p.lambda4 * A + 4.0 * p.lambda6 * A * A * A;
      const double trace = -p.gamma;  // j11 = 0 and j22 = -gamma at the fixed point
      const double det = -j12 * j21;
      const Stability st = slowflow_detail::classify(trace, det);
      for (double shift : {0.0, kPi}) {
        pts.push_back({A, wrap_two_pi(0.5 * tp + shift), st});
      }
    }
  }
  std::sort(pts.begin(), pts.end(), [](const FixedPoint& l, const FixedPoint& r) {
    return l.phi < r.phi || (l.phi == r.phi && l.A < r.A);
  });
  out.insert(out.end(), pts.begin(), pts.end());
  return out;
}

/// The two lobe attractors (non-origin centers or stable points of smallest
/// amplitude), right one first. The right attractor has cos(phi) > 0, or
/// sin(phi) < 0 when the attractors sit on the phi = +-pi/2 axis.
inline std::optional<std::array<FixedPoint, 2>> attractors(const SlowFlowParams& p,
                                                           double epsilon) {
  std::vector<FixedPoint> c;
  for (const auto& f : fixed_points(p, epsilon)) {
    if (f.A > 0.0 && (f.stability == Stability::Center || f.stability == Stability::Stable)) {
      c.push_back(f);
    }
  }
  if (c.size() < 2) return std::nullopt;
  std::sort(c.begin(), c.end(), [](const FixedPoint& l, const FixedPoint& r) { return l.A < r.A; });
  std::array<FixedPoint, 2> pair{c[0], c[1]};
  auto right_score = [](const FixedPoint& f) {
    return std::abs(std::cos(f.phi)) > 1e-9 ? std::cos(f.phi) : -std::sin(f.phi);
  };
  if (right_score(pair[0]) < right_score(pair[1])) std::swap(pair[0], pair[1]);
  return pair;
}

enum class Basin { LeftLobe, RightLobe, Outside, Boundary };

inline const char* to_string(Basin b) {
  switch (b) {
    case Basin::LeftLobe: return "left";
    case Basin::RightLobe: return "right";
    case Basin::Outside: return "outside";
    case Basin::Boundary: return "boundary";
  }
  return "?";
}

/// Which lobe of the gamma = 0 separatrix contains state0 at fixed epsilon.
/// States with |H| < 1e-9 (eps omega_x / 4) A*^2 are reported as Boundary.
inline Basin classify_basin(const SlowState& s0, const SlowFlowParams& p, double epsilon) {
  SlowFlowParams hp = p;
  hp.gamma = 0.0;
  const auto att = attractors(hp, epsilon);
  if (!att) return Basin::Outside;
  const double a = 0.25 * epsilon * p.omega_x;
  const auto& right = (*att)[0];
  const double h_star = slow_hamiltonian({right.A, right.phi}, hp, epsilon);
  const double h0 = slow_hamiltonian(s0, hp, epsilon);
  const double tol = 1e-9 * a * right.A * right.A;
  if (std::abs(h0) < tol) return Basin::Boundary;
  if ((h0 > 0.0) != (h_star > 0.0)) return Basin::Outside;
  // H = J g(J); inside a lobe means J lies below the first positive root of g
  // at this phase, where g(0) = a cos 2phi has the sign of H*.
  const double g0 = a * std::cos(2.0 * s0.phi);
  if ((g0 > 0.0) != (h_star > 0.0)) return Basin::Outside;
  const auto roots =
      slowflow_detail::positive_square_roots((4.0 / 3.0) * p.lambda6, p.lambda4, g0);
  const double J = 0.5 * s0.A * s0.A;
  if (!roots.empty() && J > roots.front()) return Basin::Outside;
  const double dot = s0.x() * right.A * std::cos(right.phi) + s0.y() * right.A * std::sin(right.phi);
  return dot >= 0.0 ? Basin::RightLobe : Basin::LeftLobe;
}

// ---------------------------------------------------------------------------
// Integration
// ---------------------------------------------------------------------------

struct SlowIntegratorSettings {
  double abstol = 1e-12;
  double reltol = 1e-12;
  double amplitude_scale = units::um;  // abstol on A is abstol * amplitude_scale
};

/// Integrates a single state from t0 to t1 and returns the final state.
/// `sink(t, state)` is called at n_samples uniformly spaced times if given.
template <class Sink>
SlowState integrate_slowflow(const SlowState& s0, const SlowFlowParams& p, double t0, double t1,
                             const SlowIntegratorSettings& settings, std::size_t n_samples,
                             Sink&& sink) {
  using State = std::array<double, 2>;
  auto rhs = [&p](double t, const State& y, State& dy) {
    const auto r = slowflow_rate({y[0], y[1]}, p.schedule.epsilon(t), p);
    dy = {r.dA, r.dphi};
  };
  Dop853Settings ds;
  ds.abstol = settings.abstol;
  ds.reltol = settings.reltol;
  const double dt = n_samples > 1 ? (t1 - t0) / static_cast<double>(n_samples - 1) : (t1 - t0);
  State last{s0.A, s0.phi};
  integrate_sampled<2>(
      rhs, ds, State{settings.amplitude_scale, 1.0}, t0, State{s0.A, s0.phi}, t1, dt,
      [&](double t, const State& y) {
        last = y;
        if (n_samples > 0) sink(t, SlowState{y[0], y[1]});
        return true;
      },
      {p.schedule.start_time, p.schedule.ramp_end()});
  return {last[0], last[1]};
}

inline SlowState integrate_slowflow(const SlowState& s0, const SlowFlowParams& p, double t0,
                                    double t1, const SlowIntegratorSettings& settings = {}) {
  return integrate_slowflow(s0, p, t0, t1, settings, 0, [](double, const SlowState&) {});
}

struct EnsembleOptions {
  std::optional<double> window_start;  // default: ramp end
  std::optional<double> window_end;    // default: t_end
  unsigned workers = 1;
  std::size_t trajectory_samples = 0;  // >0 stores each trajectory at this many times
  SlowIntegratorSettings integrator{};
};

struct EnsembleMember {
  SlowState initial;
  SlowState final_state;
  double mean_x = 0.0;  // time average of A cos phi over the window
  double mean_y = 0.0;  // time average of A sin phi over the window
  double h0 = 0.0;      // H of the initial state at epsilon_max
  int side = 0;         // sign of mean_x; 0 for failures
  bool failed = false;
  std::string failure;
  std::vector<SlowState> samples;
};

struct EnsembleResult {
  std::vector<EnsembleMember> members;
  std::array<double, 2> right_mean{0.0, 0.0};  // cluster mean (x, y) of side > 0
  std::array<double, 2> left_mean{0.0, 0.0};
  std::size_t right_count = 0;
  std::size_t left_count = 0;
  std::size_t failures = 0;
  double window_start = 0.0;
  double window_end = 0.0;
};

/// Integrates every initial state to t_end and reports time-averaged
/// Cartesian positions over the averaging window. Averages are integrated
/// as extra ODE components, so they carry the integrator's accuracy.
inline EnsembleResult evolve_ensemble(const std::vector<SlowState>& initials,
                                      const SlowFlowParams& p, double t_end,
                                      const EnsembleOptions& opt = {}) {
  p.validate();
  if (!(t_end >= p.schedule.ramp_end())) {
    throw DomainError("evolve_ensemble: t_end must not precede the end of the ramp");
  }
  EnsembleResult res;
  res.window_start = opt.window_start.value_or(p.schedule.ramp_end());
  res.window_end = opt.window_end.value_or(t_end);
  if (!(res.window_end > res.window_start) || res.window_start < 0.0 || res.window_end > t_end) {
    throw DomainError("evolve_ensemble: averaging window must be a non-empty part of [0, t_end]");
  }
  res.members.resize(initials.size());

  using State = std::array<double, 4>;  // A, phi, int x dt, int y dt
  const double w0 = res.window_start, w1 = res.window_end;
  const double eps_max = p.schedule.epsilon_max;

  parallel_for(initials.size(), opt.workers, [&](std::size_t i) {
    EnsembleMember& m = res.members[i];
    m.initial = initials[i];
    m.h0 = slow_hamiltonian(m.initial, p, eps_max);
    auto rhs = [&p, w0, w1](double t, const State& y, State& dy) {
      const auto r = slowflow_rate({y[0], y[1]}, p.schedule.epsilon(t), p);
      const bool in = t >= w0 && t < w1;
      dy = {r.dA, r.dphi, in ? y[0] * std::cos(y[1]) : 0.0, in ? y[0] * std::sin(y[1]) : 0.0};
    };
    Dop853Settings ds;
    ds.abstol = opt.integrator.abstol;
    ds.reltol = opt.integrator.reltol;
    const double as = opt.integrator.amplitude_scale;
    const double dt = opt.trajectory_samples > 1
                          ? t_end / static_cast<double>(opt.trajectory_samples - 1)
                          : t_end;
    State last{};
    try {
      integrate_sampled<4>(
          rhs, ds, State{as, 1.0, as * units::us, as * units::us}, 0.0,
          State{m.initial.A, m.initial.phi, 0.0, 0.0}, t_end, dt,
          [&](double, const State& y) {
            last = y;
            if (opt.trajectory_samples > 0) m.samples.push_back({y[0], wrap_two_pi(y[1])});
            return true;
          },
          {p.schedule.start_time, p.schedule.ramp_end(), w0, w1});
      m.final_state = {last[0], wrap_two_pi(last[1])};
      m.mean_x = last[2] / (w1 - w0);
      m.mean_y = last[3] / (w1 - w0);
      if (!std::isfinite(m.mean_x) || !std::isfinite(m.mean_y)) {
        throw IntegrationError("non-finite time average", t_end);
      }
      m.side = m.mean_x > 0.0 ? 1 : (m.mean_x < 0.0 ? -1 : 0);
    } catch (const IntegrationError& e) {
      m.failed = true;
      m.failure = std::string(e.what()) + " at t=" + std::to_string(e.last_valid_time);
      m.side = 0;
    }
  });

  for (const auto& m : res.members) {
    if (m.failed) {
      ++res.failures;
      continue;
    }
    if (m.side > 0) {
      res.right_mean[0] += m.mean_x;
      res.right_mean[1] += m.mean_y;
      ++res.right_count;
    } else if (m.side < 0) {
      res.left_mean[0] += m.mean_x;
      res.left_mean[1] += m.mean_y;
      ++res.left_count;
    }
  }
  if (res.right_count) {
    res.right_mean[0] /= static_cast<double>(res.right_count);
    res.right_mean[1] /= static_cast<double>(res.right_count);
  }
  if (res.left_count) {
    res.left_mean[0] /= static_cast<double>(res.left_count);
    res.left_mean[1] /= static_cast<double>(res.left_count);
  }
  return res;
}

/// Maps a 1D phase-space point to the slow envelope at t = 0 using the
/// locking frequency omega_d/2.
inline SlowState slow_state_from_phase_space(double x, double v, double omega_d) {
  const double half = 0.5 * omega_d;
  const double A = std::hypot(x, v / half);
  return {A, A > 0.0 ? wrap_two_pi(std::atan2(-v / half, x)) : 0.0};
}

/// Thermal ensemble: x ~ N(0, kT/(m omega_x^2)), v ~ N(0, kT/m).
inline std::vector<SlowState> thermal_slow_ensemble(std::size_t n, double temperature,
                                                    double omega_x, double omega_d,
                                                    RngStream& rng) {
  if (!(temperature >= 0.0)) throw DomainError("thermal ensemble: T must be >= 0");
  const double sv = std::sqrt(PhysicalConstants::boltzmann * temperature /
                              PhysicalConstants::electron_mass);
  const double sx = sv / omega_x;
  std::vector<SlowState> out(n);
  for (auto& s : out) {
    const double x = sx * rng.normal();
    const double v = sv * rng.normal();
    s = slow_state_from_phase_space(x, v, omega_d);
  }
  return out;
}

/// Thermal-energy ring: every state has the same amplitude sqrt(kT/(m
/// omega_x^2)) and uniformly spread phases.
inline std::vector<SlowState> ring_slow_ensemble(std::size_t n, double temperature,
                                                 double omega_x) {
  const double A = thermal_sample(temperature, omega_x, 0.0).position;
  std::vector<SlowState> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = {A, kTwoPi * (static_cast<double>(i) + 0.5) / static_cast<double>(n)};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

struct PortraitPoint {
  double x, y, dx, dy, h;
};

/// Cartesian vector field of the flow at fixed epsilon on an n x n grid
/// spanning [-half_width, half_width] on both axes. Row-major in y then x.
inline std::vector<PortraitPoint> phase_portrait(const SlowFlowParams& p, double epsilon,
                                                 double half_width = 120.0 * units::um,
                                                 std::size_t n = 1001) {
  if (n < 2) throw DomainError("phase_portrait: need at least 2 points per axis");
  std::vector<PortraitPoint> out;
  out.reserve(n * n);
  const double step = 2.0 * half_width / static_cast<double>(n - 1);
  for (std::size_t iy = 0; iy < n; ++iy) {
    const double y = -half_width + step * static_cast<double>(iy);
    for (std::size_t ix = 0; ix < n; ++ix) {
      const double x = -half_width + step * static_cast<double>(ix);
      const auto s = SlowState::from_cartesian(x, y);
      const auto r = slowflow_rate(s, epsilon, p);
      const double c = std::cos(s.phi), sn = std::sin(s.phi);
      out.push_back({x, y, r.dA * c - s.A * r.dphi * sn, r.dA * sn + s.A * r.dphi * c,
                     slow_hamiltonian(s, p, epsilon)});
    }
  }
  return out;
}

inline void write_portrait_csv(const std::string& path, const std::vector<PortraitPoint>& pts) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f.precision(10);
  f << "X_m,Y_m,dXdt_m_per_s,dYdt_m_per_s,H\n";
  for (const auto& q : pts) f << q.x << ',' << q.y << ',' << q.dx << ',' << q.dy << ',' << q.h << '\n';
}

inline void write_ensemble_csv(const std::string& path, const EnsembleResult& r) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f.precision(12);
  f << "index,A0,phi0,side,mean_Acos,mean_Asin,H0\n";
  for (std::size_t i = 0; i < r.members.size(); ++i) {
    const auto& m = r.members[i];
    f << i << ',' << m.initial.A << ',' << m.initial.phi << ',' << m.side << ',' << m.mean_x << ','
      << m.mean_y << ',' << m.h0 << '\n';
  }
}

}  // namespace trapsim
