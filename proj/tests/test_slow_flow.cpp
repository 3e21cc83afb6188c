#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "trapsim/dynamics.hpp"
#include "trapsim/slow_flow.hpp"

using namespace trapsim;
using Catch::Matchers::WithinRel;
using Catch::Matchers::WithinAbs;

namespace {
SlowFlowParams held(double eps) {
  SlowFlowParams p;
  p.schedule.epsilon_max = eps;
  p.schedule.ramp_duration = 0.0;
  return p;
}
}  // namespace

TEST_CASE("slow flow rates") {
  SlowFlowParams p;
  CHECK(slowflow_rate({10e-6, 0.0}, 0.1, p).dA == 0.0);
  CHECK_THAT(slowflow_rate({0.0, 0.0}, 0.1, p).dphi, WithinRel(3.1416e7, 1e-4));
  CHECK_THAT(slowflow_rate({0.0, 0.0}, 0.1, p).dphi, WithinRel(0.1 * kTwoPi * 200e6 / 4, 1e-15));
  const double A = 10e-6;
  const auto free = slowflow_rate({A, 0.7}, 0.0, p);
  CHECK(free.dA == 0.0);
  CHECK_THAT(free.dphi, WithinRel(p.lambda4 * A * A + p.lambda6 * std::pow(A, 4), 1e-15));
  p.gamma = 100.0;
  CHECK_THAT(slowflow_rate({A, 0.0}, 0.0, p).dA, WithinRel(-50.0 * A, 1e-15));
  CHECK_THROWS_AS(slowflow_rhs({-1e-6, 0.0}, 0.0, p), DomainError);
}

TEST_CASE("fixed points against a brute-force root scan") {
  for (auto conv : {KilohertzConvention::Angular, KilohertzConvention::Plain}) {
    SlowFlowParams p;
    p.lambda4 = reference_lambdas(conv).lambda4;
    p.lambda6 = reference_lambdas(conv).lambda6;
    const double a = 0.025 * p.omega_x;
    // phi = 0 branch: a + lambda4 A^2 + lambda6 A^4 = 0
    const auto roots = oracle::scan_roots(
        [&](double A) { return a + p.lambda4 * A * A + p.lambda6 * std::pow(A, 4); }, 1e-3);
    REQUIRE(!roots.empty());
    const auto att = attractors(p, 0.1);
    REQUIRE(att);
    CHECK_THAT((*att)[0].A, WithinRel(roots.front(), 1e-9));
    CHECK_THAT((*att)[1].A, WithinRel(roots.front(), 1e-12));
    CHECK(std::sin(2 * (*att)[0].phi) == Catch::Approx(0.0).margin(1e-12));
    CHECK_THAT((*att)[1].phi - (*att)[0].phi, WithinAbs(kPi, 1e-12));
    CHECK((*att)[0].stability == Stability::Center);
    if (conv == KilohertzConvention::Angular) {
      CHECK_THAT((*att)[0].A, WithinRel(35.0e-6, 0.005));
    } else {
      CHECK_THAT((*att)[0].A, WithinRel(88.3e-6, 0.005));
    }
  }
}

TEST_CASE("fixed point structure") {
  SlowFlowParams p;
  const auto fps = fixed_points(p, 0.1);
  REQUIRE(!fps.empty());
  CHECK(fps.front().A == 0.0);
  CHECK(fps.front().stability == Stability::Saddle);
  // drive off: only the origin inside the region of interest
  for (const auto& f : fixed_points(p, 0.0)) CHECK((f.A == 0.0 || f.A > 150e-6));
  // damping turns the centres into stable foci
  p.gamma = 1e4;
  const auto att = attractors(p, 0.1);
  REQUIRE(att);
  CHECK((*att)[0].stability == Stability::Stable);
  const auto r = slowflow_rate({(*att)[0].A, (*att)[0].phi}, 0.1, p);
  CHECK(std::abs(r.dA) < 1e-9 * (*att)[0].A * 0.025 * p.omega_x);
  CHECK(std::abs(r.dphi) < 1e-9 * 0.025 * p.omega_x);
}

TEST_CASE("flipping the quartic sign moves the attractors to quadrature") {
  SlowFlowParams p;
  p.lambda4 = -p.lambda4;
  const double a = 0.025 * p.omega_x;
  const auto roots = oracle::scan_roots(
      [&](double A) { return -a + p.lambda4 * A * A + p.lambda6 * std::pow(A, 4); }, 1e-3);
  const auto att = attractors(p, 0.1);
  REQUIRE(att);
  REQUIRE(!roots.empty());
  CHECK_THAT((*att)[0].A, WithinRel(roots.front(), 1e-9));
  std::array<double, 2> ph{(*att)[0].phi, (*att)[1].phi};
  std::sort(ph.begin(), ph.end());
  CHECK_THAT(ph[0], WithinAbs(kPi / 2, 1e-12));
  CHECK_THAT(ph[1], WithinAbs(3 * kPi / 2, 1e-12));
}

TEST_CASE("Hamiltonian is conserved along undamped orbits") {
  const auto p = held(0.1);
  CHECK(slow_hamiltonian({0.0, 1.0}, p, 0.1) == 0.0);
  const double Astar = (*attractors(p, 0.1))[0].A;
  const double floor = 1e-12 * 0.025 * p.omega_x * Astar * Astar;
  for (const SlowState s0 : {SlowState{6e-6, 0.3}, SlowState{30e-6, 1.2}, SlowState{50e-6, 2.0},
                             SlowState{0.7 * Astar, 4.0}}) {
    const double h0 = slow_hamiltonian(s0, p, 0.1);
    double worst = 0.0;
    integrate_slowflow(s0, p, 0.0, 20e-6, {}, 2001, [&](double, const SlowState& s) {
      worst = std::max(worst, std::abs(slow_hamiltonian(s, p, 0.1) - h0));
    });
    INFO("A0 = " << s0.A << " phi0 = " << s0.phi);
    CHECK(worst <= 1e-6 * std::abs(h0) + floor);
  }
}

TEST_CASE("flow commutes with a phase shift of pi") {
  SlowFlowParams p;  // ramped drive
  for (const SlowState s0 : {SlowState{6e-6, 0.4}, SlowState{3e-6, 2.5}}) {
    const auto a = integrate_slowflow(s0, p, 0.0, 10e-6);
    const auto b = integrate_slowflow({s0.A, s0.phi + kPi}, p, 0.0, 10e-6);
    const double tol = 1e-7 * a.A + 1e-12;
    CHECK_THAT(b.x(), WithinAbs(-a.x(), tol));
    CHECK_THAT(b.y(), WithinAbs(-a.y(), tol));
  }
}

TEST_CASE("basin classification") {
  const SlowFlowParams p;
  const auto att = *attractors(p, 0.1);
  const double As = att[0].A;
  CHECK(classify_basin({As, 0.0}, p, 0.1) == Basin::RightLobe);
  CHECK(classify_basin({As, kPi}, p, 0.1) == Basin::LeftLobe);
  CHECK(classify_basin({2 * As, kPi / 2}, p, 0.1) == Basin::Outside);
  CHECK(classify_basin({0.0, 0.0}, p, 0.1) == Basin::Boundary);
  // the winding oracle agrees
  const std::array<double, 2> R{att[0].A * std::cos(att[0].phi), att[0].A * std::sin(att[0].phi)};
  const std::array<double, 2> L{att[1].A * std::cos(att[1].phi), att[1].A * std::sin(att[1].phi)};
  const auto out = oracle::orbit_winding({2 * As, kPi / 2}, p, 0.1, R, L);
  CHECK(std::abs(out.around_right) >= 1.0);
  CHECK(std::abs(out.around_left) >= 1.0);
  const auto in = oracle::orbit_winding({0.5 * As, 0.2}, p, 0.1, R, L);
  CHECK(std::abs(in.around_right) >= 1.0);
  CHECK(std::abs(in.around_left) < 0.5);
}

TEST_CASE("ensemble capture with a ramped drive") {
  const SlowFlowParams p;
  RngStream rng(1, 0);
  const auto init = thermal_slow_ensemble(200, 4.0, p.omega_x, p.schedule.omega_d, rng);
  const auto r = evolve_ensemble(init, p, 20e-6);
  const double As = (*attractors(p, 0.1))[0].A;
  CHECK(r.failures == 0);
  CHECK(r.right_count + r.left_count == 200);
  CHECK(r.right_count > 50);
  CHECK(r.left_count > 50);
  CHECK(r.right_mean[0] > 0.8 * As);
  CHECK(r.left_mean[0] < -0.8 * As);
  CHECK(r.window_start == p.schedule.ramp_end());
  CHECK(r.window_end == 20e-6);
}

TEST_CASE("no drive means no capture") {
  auto p = held(0.0);
  RngStream rng(2, 0);
  const auto init = thermal_slow_ensemble(200, 4.0, p.omega_x, p.schedule.omega_d, rng);
  EnsembleOptions o;
  o.window_start = 1e-6;
  const auto r = evolve_ensemble(init, p, 20e-6, o);
  const double As = (*attractors(SlowFlowParams{}, 0.1))[0].A;
  CHECK(std::hypot(r.right_mean[0], r.right_mean[1]) < 0.1 * As);
  CHECK(std::hypot(r.left_mean[0], r.left_mean[1]) < 0.1 * As);
}

TEST_CASE("in-phase states all land in one lobe") {
  const SlowFlowParams p;
  std::vector<SlowState> init;
  for (int i = 1; i <= 20; ++i) init.push_back({0.5e-6 * i, 0.0});
  const auto r = evolve_ensemble(init, p, 20e-6);
  CHECK(r.right_count == 20);
  for (std::size_t i = 0; i < init.size(); ++i) {
    // single-trajectory oracle: same side as the final state of a lone run
    const auto f = integrate_slowflow(init[i], p, 0.0, 20e-6);
    CHECK(r.members[i].side == 1);
    CHECK(f.x() > 0.0);
  }
}

TEST_CASE("ensemble is independent of the worker count") {
  const SlowFlowParams p;
  const auto init = ring_slow_ensemble(64, 4.0, p.omega_x);
  EnsembleOptions o1, o4;
  o4.workers = 4;
  const auto a = evolve_ensemble(init, p, 5e-6, o1), b = evolve_ensemble(init, p, 5e-6, o4);
  for (std::size_t i = 0; i < init.size(); ++i) {
    CHECK(a.members[i].mean_x == b.members[i].mean_x);
    CHECK(a.members[i].final_state.phi == b.members[i].final_state.phi);
  }
}

TEST_CASE("phase-space mapping of thermal samples") {
  const double wd = units::angular_MHz(400.0), half = wd / 2;
  const auto s = slow_state_from_phase_space(3e-6, -2 * half * 1e-6, wd);
  CHECK_THAT(s.x(), WithinRel(3e-6, 1e-14));
  CHECK_THAT(-half * s.y(), WithinRel(-2 * half * 1e-6, 1e-14));
  RngStream rng(4, 0);
  const auto ens = thermal_slow_ensemble(200000, 4.0, units::angular_MHz(200.0), wd, rng);
  double m2 = 0.0;
  for (const auto& e : ens) m2 += e.x() * e.x();
  const double sx = thermal_sample(4.0, units::angular_MHz(200.0), 0.0).position;
  CHECK_THAT(m2 / ens.size(), WithinRel(sx * sx, 0.01));
}

TEST_CASE("slow flow tracks the envelope of the 1D oscillator", "[envelope]") {
  for (double eps : {0.02, 0.05, 0.1}) {
    SlowFlowParams p;  // 1 us ramp, gamma = 0
    p.schedule.epsilon_max = eps;
    const auto osc = OscillatorParams1D::from_spec(
        p.omega_x, 0.0, AnharmonicSpec::from_lambdas(p.lambda4, p.lambda6, p.omega_x));
    for (double phase : {0.0, 0.5, kPi / 2, 2.0}) {
      const auto x0 = thermal_sample(4.0, p.omega_x, phase);
      const auto s1 = integrate_1d(x0.position, x0.velocity, osc, p.schedule, 5e-6);
      const auto env = oracle::envelope(s1.x, s1.v, p.schedule.omega_d / 2);
      const auto s0 = slow_state_from_phase_space(x0.position, x0.velocity, p.schedule.omega_d);
      std::vector<double> slow;
      integrate_slowflow(s0, p, 0.0, 5e-6, {}, 501, [&](double, const SlowState& s) { slow.push_back(s.A); });
      double num = 0.0, den = 0.0;
      for (std::size_t k = 0; k < slow.size(); ++k) {
        const double e = env[k * (env.size() - 1) / (slow.size() - 1)];
        num += (e - slow[k]) * (e - slow[k]);
        den += slow[k] * slow[k];
      }
      INFO("eps " << eps << " phase " << phase << " relative rms " << std::sqrt(num / den));
      CHECK(std::sqrt(num / den) < 0.10);
    }
  }
}

TEST_CASE("phase portrait export") {
  const SlowFlowParams p;
  const auto g = phase_portrait(p, 0.1, 120e-6, 11);
  REQUIRE(g.size() == 121);
  CHECK_THAT(g.front().x, WithinRel(-120e-6, 1e-14));
  CHECK_THAT(g.back().y, WithinRel(120e-6, 1e-14));
  for (const auto& q : g) {
    const auto s = SlowState::from_cartesian(q.x, q.y);
    CHECK_THAT(q.h, WithinAbs(slow_hamiltonian(s, p, 0.1), 1e-9 * std::abs(q.h) + 1e-30));
    const auto r = slowflow_rate(s, 0.1, p);
    const double dx = r.dA * std::cos(s.phi) - s.A * r.dphi * std::sin(s.phi);
    CHECK_THAT(q.dx, WithinAbs(dx, 1e-9 * std::abs(dx) + 1e-12));
  }
  const auto path = std::filesystem::temp_directory_path() / "trapsim_portrait.csv";
  write_portrait_csv(path.string(), g);
  std::ifstream in(path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  CHECK(n == 122);
  std::filesystem::remove(path);
}
