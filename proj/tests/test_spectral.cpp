#include <catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "trapsim/noise.hpp"
#include "trapsim/spectral.hpp"

using namespace trapsim;
using Catch::Matchers::WithinRel;
using Catch::Matchers::WithinAbs;

namespace {

std::vector<double> sine(std::size_t n, double fs, double f, double amp, double phase = 0.3) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(kTwoPi * f * i / fs + phase);
  return x;
}

}  // namespace

TEST_CASE("sine power lands in its bin") {
  const double fs = 4.096e9, f = 200e6;
  for (std::size_t n : {4096u, 8192u, 40960u}) {
    const auto x = sine(n, fs, f, 1e-6);
    const auto s = psd(x, fs);
    const auto k = bin_index(f, s.bin_width);
    CHECK_THAT(s.psd[k] * s.bin_width, WithinRel(0.5e-12, 1e-3));
    CHECK_THAT(s.integrated_power(), WithinRel(0.5e-12, 1e-3));
    CHECK_THAT(bin_power(x, fs, f), WithinRel(s.psd[k], 1e-9));
    CHECK_THAT(bin_amplitude(x, fs, f), WithinRel(1e-6, 1e-9));
  }
}

TEST_CASE("Parseval") {
  RngStream rng(7, 0);
  std::vector<double> x(5000);
  for (auto& v : x) v = rng.normal();
  const double fs = 1e3;
  const auto s = psd(x, fs);
  const double mean_sq = std::inner_product(x.begin(), x.end(), x.begin(), 0.0) / x.size();
  CHECK_THAT(s.integrated_power(), WithinRel(mean_sq, 1e-9));
}

TEST_CASE("white noise reads its one-sided density") {
  const ResonatorParams res;
  const double fs = 4.096e9;
  const double S = res.johnson_floor();
  RngStream rng(3, 1);
  std::vector<double> x(1 << 18);
  const double sigma = std::sqrt(S * fs / 2);
  for (auto& v : x) v = sigma * rng.normal();
  const auto s = psd(x, fs);
  const double mean = std::accumulate(s.psd.begin() + 1, s.psd.end() - 1, 0.0) / (s.psd.size() - 2);
  CHECK_THAT(mean, WithinRel(S, 0.1));
  CHECK_THAT(S, WithinRel(6.63e-17, 0.01));
}

TEST_CASE("Hann window keeps the density of white noise") {
  RngStream rng(3, 2);
  std::vector<double> x(1 << 16);
  for (auto& v : x) v = rng.normal();
  const auto s = psd(x, 2.0, Window::Hann);
  const double mean = std::accumulate(s.psd.begin() + 1, s.psd.end() - 1, 0.0) / (s.psd.size() - 2);
  CHECK_THAT(mean, WithinRel(1.0, 0.02));
}

TEST_CASE("psd edge cases") {
  const std::vector<double> zero(2048, 0.0);
  const auto s = psd(zero, 1e9);
  CHECK(std::all_of(s.psd.begin(), s.psd.end(), [](double p) { return p == 0.0; }));
  CHECK_THROWS_AS(psd(std::vector<double>(1023, 1.0), 1e9), DomainError);
  std::vector<double> t(2048), y(2048, 0.0);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = i * 1e-9;
  CHECK_NOTHROW(psd(t, y));
  t[1000] += 0.3e-9;
  CHECK_THROWS_WITH(psd(t, y), Catch::Matchers::ContainsSubstring("non-uniform"));
}

TEST_CASE("snr against the Johnson floor") {
  const ResonatorParams res;
  const double f = res.johnson_floor();
  CHECK_THAT(snr(2 * f, res).db, WithinAbs(0.0, 1e-12));
  CHECK_THAT(snr(11 * f, res).db, WithinAbs(10.0, 1e-12));
  CHECK(snr(2 * f, res).signal_present);
  CHECK_FALSE(snr(f, res).signal_present);
  CHECK_FALSE(snr(0.5 * f, res).signal_present);
  CHECK_THROWS_AS(snr(-1.0, res), DomainError);
}

TEST_CASE("snr curve") {
  const ResonatorParams res;
  const double f = res.johnson_floor();
  const std::vector<double> times{0.25e-3, 0.5e-3, 1e-3};
  SECTION("signal linear in detection time") {
    std::vector<std::vector<double>> p;
    for (double jitter : {0.9, 1.0, 1.1}) {
      std::vector<double> row;
      for (double t : times) row.push_back(f + jitter * f * t / 0.25e-3);
      p.push_back(row);
    }
    const auto c = snr_curve_from_powers(times, p, res);
    CHECK_THAT(c.points[1].signal_power, WithinRel(2 * c.points[0].signal_power, 1e-9));
    CHECK_THAT(c.points[2].snr.db - c.points[1].snr.db, WithinAbs(10 * std::log10(2.0), 1e-9));
    CHECK_THAT(c.signal_fit.r_squared, WithinAbs(1.0, 1e-12));
    CHECK(c.points[0].std_power > 0.0);
    CHECK_THAT(c.points[0].extrapolated.db, WithinAbs(c.points[0].snr.db, 1e-9));
  }
  SECTION("noise only") {
    const std::vector<std::vector<double>> p{{f, f, f}, {f, f, f}};
    const auto c = snr_curve_from_powers(times, p, res);
    for (const auto& pt : c.points) CHECK_FALSE(pt.snr.signal_present);
  }
  SECTION("single trajectory") {
    const std::vector<std::vector<double>> p{{2 * f, 3 * f, 5 * f}};
    const auto c = snr_curve_from_powers(times, p, res);
    CHECK(std::isnan(c.points[0].std_power));
  }
  SECTION("truncated records") {
    const double fs = 4.096e9;
    const auto x = sine(8192, fs, 200e6, 1e-6);
    const std::vector<double> tt{4096 / fs, 8192 / fs};
    const auto pw = truncated_bin_powers(x, fs, tt, 200e6);
    CHECK_THAT(pw[1], WithinRel(2 * pw[0], 1e-3));
    CHECK_THROWS_AS(truncated_bin_powers(x, fs, std::vector<double>{3e-6}, 200e6), DomainError);
    CHECK_THROWS_AS(truncated_bin_powers(x, fs, std::vector<double>{100 / fs}, 200e6), DomainError);
  }
}

TEST_CASE("ensemble spectrum statistics") {
  EnsembleSpectrumStats st(200e6);
  const double fs = 4.096e9;
  for (double a : {1.0, 2.0, 3.0}) st.add(psd(sine(4096, fs, 200e6, a), fs));
  const auto k = st.resonance_bin();
  CHECK_THAT(st.frequencies()[k], WithinAbs(200e6, 1.0));
  CHECK_THAT(st.mean()[k] * st.bin_width(), WithinRel((0.5 + 2 + 4.5) / 3, 1e-3));
  CHECK(st.resonance_powers().size() == 3);
  CHECK(st.stddev()[k] > 0.0);
  CHECK_THROWS_AS(st.add(psd(sine(2048, fs, 200e6, 1.0), fs)), DomainError);
}

TEST_CASE("noncentral power model") {
  const double floor = 6.63e-17;
  RngStream rng(11, 0);
  for (int dof : {1, 2}) {
    const NoncentralPowerModel none(0.0, floor, dof);
    const auto a = none.samples(200000, rng);
    CHECK_THAT(std::accumulate(a.begin(), a.end(), 0.0) / a.size(), WithinRel(floor, 0.01));
    const NoncentralPowerModel big(std::sqrt(1e6 * floor), floor, dof);
    const auto b = big.samples(200000, rng);
    CHECK_THAT(std::accumulate(b.begin(), b.end(), 0.0) / b.size(), WithinRel(big.mean(), 0.01));
    const NoncentralPowerModel three(std::sqrt(std::pow(10.0, 0.3) * floor), floor, dof);
    CHECK_THAT(three.snr_db(), WithinAbs(3.0, 1e-12));
    const auto c = three.samples(200000, rng);
    const double below = std::count_if(c.begin(), c.end(), [&](double p) { return p < floor; }) / 2e5;
    CHECK_THAT(below, WithinAbs(three.cdf(floor), 0.005));
    CHECK(three.cdf(floor) > 0.05);
    CHECK(three.cdf(floor) < 0.5);
  }
  // dof 2: exponential with mean floor when Vs = 0
  const NoncentralPowerModel exp2(0.0, floor, 2);
  CHECK_THAT(exp2.cdf(floor), WithinRel(1 - std::exp(-1.0), 1e-9));
  CHECK_THROWS_AS(NoncentralPowerModel(-1.0, floor), DomainError);
  CHECK_THROWS_AS(NoncentralPowerModel(1.0, 0.0), DomainError);
}

TEST_CASE("Kolmogorov-Smirnov test") {
  RngStream rng(5, 0);
  const NoncentralPowerModel m(2e-8, 6.63e-17, 2);
  const auto s = m.samples(2000, rng);
  const auto good = ks_test(s, [&](double p) { return m.cdf(p); });
  CHECK(good.p_value > 0.01);
  const NoncentralPowerModel wrong(2e-8, 6.63e-17, 1);
  const auto bad = ks_test(s, [&](double p) { return wrong.cdf(p); });
  CHECK(bad.p_value < 1e-6);
  // uniform sanity: statistic of a perfect grid is 1/(2n)
  std::vector<double> u(100);
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = (i + 0.5) / 100;
  CHECK_THAT(ks_test(u, [](double x) { return x; }).statistic, WithinAbs(0.005, 1e-12));
}

TEST_CASE("line fit") {
  const std::vector<double> x{0, 1, 2, 3}, y{1, 3, 5, 7};
  const auto f = fit_line(x, y);
  CHECK_THAT(f.slope, WithinAbs(2.0, 1e-12));
  CHECK_THAT(f.intercept, WithinAbs(1.0, 1e-12));
  CHECK_THAT(f.r_squared, WithinAbs(1.0, 1e-12));
  CHECK_THROWS_AS(fit_line(std::vector<double>{1.0}, std::vector<double>{1.0}), DomainError);
}
