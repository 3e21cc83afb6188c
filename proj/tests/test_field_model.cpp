#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "trapsim/dynamics.hpp"
#include "trapsim/slow_flow.hpp"
#include "trapsim/spectral.hpp"

using namespace trapsim;
using Catch::Matchers::WithinRel;
using Catch::Matchers::WithinAbs;

namespace {

const Vec3 kTargets{units::angular_MHz(200.0), units::angular_MHz(173.0), units::angular_MHz(70.0)};
const double kRf = units::angular_MHz(1452.0);

// Frequency (rad/s) of the largest PSD bin within +-20% of a guess.
double peak_near(const SpectrumResult& s, double guess) {
  const double f0 = guess / kTwoPi;
  double best = -1.0, fb = 0.0;
  for (std::size_t k = 0; k < s.psd.size(); ++k) {
    if (s.frequencies[k] < 0.8 * f0 || s.frequencies[k] > 1.2 * f0) continue;
    if (s.psd[k] > best) {
      best = s.psd[k];
      fb = s.frequencies[k];
    }
  }
  return kTwoPi * fb;
}

Trajectory3D free_run(const FieldModel& f, double t_end, double amp) {
  InitCondition init;
  init.explicit_state = std::array<double, 6>{amp, amp, amp, 0.0, 0.0, 0.0};
  DriveSchedule off;
  off.epsilon_max = 0.0;
  Sim3DOptions o;
  o.couple = false;
  IntegratorSettings s;
  s.abstol = s.reltol = 1e-11;
  return integrate_3d(init, f, ResonatorParams{}, off, t_end, s, o);
}

}  // namespace

TEST_CASE("calibrated secular frequencies match the FFT of a free trajectory") {
  const auto f = calibrate(kTargets, kRf);
  const auto tr = free_run(f, 10e-6, 0.5e-6);
  for (int axis = 0; axis < 3; ++axis) {
    const auto s = psd(tr.column(static_cast<Column>(1 + axis)), tr.sample_rate);
    const double w = peak_near(s, kTargets[axis]);
    INFO("axis " << kAxisNames[axis] << " measured " << w / kTwoPi / 1e6 << " MHz");
    CHECK_THAT(w, WithinRel(kTargets[axis], 0.005));
  }
}

TEST_CASE("Floquet and pseudopotential calibrations bracket the same trap") {
  CalibrationOptions o;
  o.mode = CalibrationMode::Pseudopotential;
  const auto pp = calibrate(kTargets, kRf, o);
  const auto w = pp.pseudopotential_frequencies();
  for (int i = 0; i < 3; ++i) CHECK_THAT(w[i], WithinRel(kTargets[i], 1e-9));
  const auto fl = calibrate(kTargets, kRf);
  for (int i = 0; i < 3; ++i) {
    CHECK_THAT(floquet_secular_frequency(fl.dc_curvature[i], fl.rf_curvature[i], kRf),
               WithinRel(kTargets[i], 1e-9));
  }
}

TEST_CASE("Mathieu secular frequency in the small-q limit") {
  // a = 0, q small: omega ~ q Omega / (2 sqrt 2) with q = 2 kappa / Omega^2
  const double Om = 1.0, q = 0.02, kappa = q * Om * Om / 2.0;
  CHECK_THAT(floquet_secular_frequency(0.0, kappa, Om), WithinRel(q * Om / (2.0 * std::sqrt(2.0)), 1e-3));
  CHECK(std::isnan(floquet_secular_frequency(0.0, 1.0, Om)));  // q = 2, unstable
}

TEST_CASE("linear trap: radial rf confinement without dc") {
  const Vec3 t{units::angular_MHz(200.0), units::angular_MHz(200.0), units::angular_MHz(0.5)};
  const auto f = calibrate(t, kRf);
  CHECK(std::abs(f.dc_curvature[2]) < 1e-4 * t[0] * t[0]);
  const auto tr = free_run(f, 10e-6, 0.5e-6);
  const auto s = psd(tr.column(Column::x), tr.sample_rate);
  CHECK_THAT(peak_near(s, t[0]), WithinRel(t[0], 0.005));
}

TEST_CASE("calibration errors") {
  CalibrationOptions o;
  o.rf_enabled = false;
  CHECK_THROWS_AS(calibrate(kTargets, kRf, o), CalibrationError);
  CHECK_THROWS_AS(calibrate(kTargets, units::angular_MHz(300.0)), CalibrationError);
  CHECK_THROWS_AS(calibrate({0.0, 1e9, 1e8}, kRf), CalibrationError);
}

TEST_CASE("fields vanish at the trap centre") {
  auto f = calibrate(kTargets, kRf);
  DriveSchedule s;
  for (double t : {0.0, 0.3e-9, 1.7e-6}) {
    const auto fs = f.fields_at({0.0, 0.0, 0.0}, t, s);
    for (int i = 0; i < 3; ++i) {
      CHECK(fs.dc[i] == 0.0);
      CHECK(fs.rf[i] == 0.0);
      CHECK(fs.drive[i] == 0.0);
    }
  }
}

TEST_CASE("dc field is restoring for a confining curvature") {
  FieldModel f;
  f.dc_curvature = {1e18, 0.0, 0.0};
  const auto fs = f.fields_at({1e-6, 0.0, 0.0}, 0.0, DriveSchedule{});
  const double m_over_q = 9.1093837015e-31 / -1.602176634e-19;
  CHECK_THAT(fs.dc[0], WithinRel(-1e18 * m_over_q * 1e-6, 1e-14));
  // force q E points back to the centre
  CHECK(-1.602176634e-19 * fs.dc[0] < 0.0);
}

TEST_CASE("drive field at the ramp midpoint is half the full value") {
  const auto f = calibrate(kTargets, kRf);
  DriveSchedule ramp;
  ramp.ramp_duration = 1e-6;
  DriveSchedule step = ramp;
  step.ramp_duration = 0.0;
  const Vec3 r{3e-6, -2e-6, 1e-6};
  const double t = 0.5e-6;
  const auto a = f.fields_at(r, t, ramp), b = f.fields_at(r, t, step);
  for (int i = 0; i < 2; ++i) {
    CHECK(b.drive[i] != 0.0);
    CHECK_THAT(a.drive[i], WithinRel(0.5 * b.drive[i], 1e-12));
  }
  CHECK_THAT(b.drive[0] / r[0], WithinRel(-b.drive[1] / r[1], 1e-12));  // d_x = -d_y
}

TEST_CASE("quadrupole fields satisfy Laplace") {
  const auto f = calibrate(kTargets, kRf);
  DriveSchedule s;
  const double h = 1e-6;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int n = 0; n < 50; ++n) {
    const Vec3 r{100e-6 * u(rng), 100e-6 * u(rng), 20e-6 * u(rng)};
    const double t = 1e-6 * (u(rng) + 1.0);
    double div_dc = 0.0, div_rf = 0.0, scale_dc = 0.0, scale_rf = 0.0;
    for (int i = 0; i < 3; ++i) {
      Vec3 p = r, m = r;
      p[i] += h;
      m[i] -= h;
      const auto fp = f.fields_at(p, t, s), fm = f.fields_at(m, t, s);
      div_dc += (fp.dc[i] - fm.dc[i]) / (2 * h);
      div_rf += (fp.rf[i] + fp.drive[i] - fm.rf[i] - fm.drive[i]) / (2 * h);
      scale_dc = std::max(scale_dc, std::abs(fp.dc[i] - fm.dc[i]) / (2 * h));
      scale_rf = std::max(scale_rf, std::abs(fp.rf[i] - fm.rf[i]) / (2 * h));
    }
    CHECK(std::abs(div_dc) <= 1e-6 * scale_dc);
    CHECK(std::abs(div_rf) <= 1e-6 * scale_rf);
  }
}

TEST_CASE("fields outside the region of interest are refused") {
  const auto f = calibrate(kTargets, kRf);
  CHECK_THROWS_AS(f.fields_at({151e-6, 0.0, 0.0}, 0.0, DriveSchedule{}), OutOfRegion);
  CHECK_THROWS_AS(f.fields_at({0.0, 0.0, 26e-6}, 0.0, DriveSchedule{}), OutOfRegion);
  CHECK_NOTHROW(f.fields_at({149.999e-6, -149.999e-6, 24.999e-6}, 0.0, DriveSchedule{}));
}

TEST_CASE("coupling vector") {
  const auto c = CouplingModel::uniform(4.8e-3);
  FieldModel f;
  f.coupling = c;
  CHECK_THAT(f.coupling_vector({0.0, 0.0, 0.0})[0], WithinRel(208.333, 1e-5));
  CHECK(f.coupling_vector({0.0, 0.0, 0.0})[1] == 0.0);
  CHECK(f.coupling_vector({1e-4, -5e-5, 2e-5}) == f.coupling_vector({0.0, 0.0, 0.0}));
  CHECK(c.is_constant());
  CouplingModel p = c;
  p.poly[0][0] = {0.0, 0.0, 0.0};
  CHECK(p.is_constant());
  CHECK(p.at({1e-5, 0, 0}) == c.at({1e-5, 0, 0}));
  p.poly[0][0][1] = 1e6;
  CHECK_FALSE(p.is_constant());
  CHECK_THAT(p.at({1e-5, 0, 0})[0], WithinRel(1.0 / 4.8e-3 + 1e6 * 1e-10, 1e-12));
  CHECK_THROWS_AS(f.coupling_vector({0.0, 200e-6, 0.0}), OutOfRegion);
}

TEST_CASE("anharmonic coefficients reproduce the configured lambdas") {
  const double w = units::angular_MHz(200.0);
  for (auto conv : {KilohertzConvention::Angular, KilohertzConvention::Plain}) {
    const auto l = reference_lambdas(conv);
    const auto a = AnharmonicSpec::from_lambdas(l.lambda4, l.lambda6, w);
    CHECK_THAT(a.lambda4(w), WithinRel(l.lambda4, 1e-15));
    CHECK_THAT(a.lambda6(w), WithinRel(l.lambda6, 1e-15));
  }
  const auto l = reference_lambdas(KilohertzConvention::Angular);
  CHECK_THAT(l.lambda4, WithinRel(-4.08 * kTwoPi * 1e3 / 1e-12, 1e-14));
  CHECK_THAT(l.lambda6, WithinRel(6.78e-6 * kTwoPi * 1e3 / 1e-24, 1e-14));
}

TEST_CASE("anharmonic force is minus the potential gradient") {
  AnharmonicSpec a;
  a.C[0] = {1e12, -2e25, 3e27, 2.8e31};
  for (double x : {-3e-5, 1e-6, 4e-5}) {
    const double h = 1e-9;
    const double grad = (a.potential(0, x + h) - a.potential(0, x - h)) / (2 * h);
    CHECK_THAT(a.acceleration(0, x), WithinRel(-grad, 1e-6));
  }
}

TEST_CASE("coefficient files") {
  const auto dir = std::filesystem::temp_directory_path();
  const auto p = dir / "trapsim_coeffs.txt";
  {
    std::ofstream os(p);
    os << "# units: um\n# axis C3 C4 C5 C6\nx 0 -2.0 0 3.0\nz 1.5 0 0 0\n";
  }
  const auto a = load_coefficient_file(p.string());
  CHECK_THAT(a.coefficient(0, 4), WithinRel(-2.0 * 1e12, 1e-14));
  CHECK_THAT(a.coefficient(0, 6), WithinRel(3.0 * 1e24, 1e-14));
  CHECK_THAT(a.coefficient(2, 3), WithinRel(1.5 * 1e6, 1e-14));
  CHECK(a.coefficient(1, 4) == 0.0);
  {
    std::ofstream os(p);
    os << "q 1 2 3 4\n";
  }
  CHECK_THROWS(load_coefficient_file(p.string()));
  CHECK_THROWS(load_coefficient_file((dir / "does_not_exist_trapsim.txt").string()));
  std::filesystem::remove(p);
}
