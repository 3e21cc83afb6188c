#pragma once

// One-sided power spectral densities of uniformly sampled voltage records,
// the resonance-bin SNR statistic, and the non-central chi-squared model of
// single-bin power fluctuations.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <mutex>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include <boost/math/distributions/non_central_chi_squared.hpp>

#include "trapsim/core.hpp"
#include "trapsim/noise.hpp"

namespace trapsim {

enum class Window { Rectangular, Hann };

inline constexpr std::size_t kMinSpectrumLength = 1024;

struct SpectrumResult {
  std::vector<double> frequencies;  // Hz
  std::vector<double> psd;          // V^2/Hz, one-sided
  double bin_width = 0.0;           // Hz
  double record_length = 0.0;       // s
  Window window = Window::Rectangular;

  /// Sum of psd * bin_width; equals the mean-square of the record for a
  /// rectangular window.
  double integrated_power() const {
    return std::accumulate(psd.begin(), psd.end(), 0.0) * bin_width;
  }
};

namespace spectral_detail {

inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

inline std::vector<double> window_weights(std::size_t n, Window w) {
  std::vector<double> out(n, 1.0);
  if (w == Window::Hann) {
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = 0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(i) / static_cast<double>(n));
    }
  }
  return out;
}

}  // namespace spectral_detail

/// Real-to-complex DFT, bins 0..N/2, unnormalized (FFTW convention).
inline std::vector<std::complex<double>> real_fft(std::span<const double> x) {
  const int n = static_cast<int>(x.size());
  double* in = fftw_alloc_real(x.size());
  fftw_complex* out = fftw_alloc_complex(x.size() / 2 + 1);
  fftw_plan plan;
  {
    // Only the planner is not thread-safe.
    std::lock_guard<std::mutex> lock(spectral_detail::planner_mutex());
    plan = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
  }
  std::copy(x.begin(), x.end(), in);
  fftw_execute(plan);
  std::vector<std::complex<double>> result(x.size() / 2 + 1);
  for (std::size_t k = 0; k < result.size(); ++k) result[k] = {out[k][0], out[k][1]};
  {
    std::lock_guard<std::mutex> lock(spectral_detail::planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(out);
  return result;
}

/// One-sided PSD with |X_k|^2 scaled by 1/(fs * sum w^2) and doubled away
/// from DC and Nyquist, so white noise of one-sided density S reads S.
inline SpectrumResult psd(std::span<const double> series, double sample_rate,
                          Window window = Window::Rectangular) {
  if (series.size() < kMinSpectrumLength) {
    throw DomainError("psd: record shorter than 1024 samples");
  }
  if (!(sample_rate > 0.0)) throw DomainError("psd: sample rate must be positive");
  const std::size_t n = series.size();
  const auto w = spectral_detail::window_weights(n, window);
  std::vector<double> xw(n);
  double w2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    xw[i] = series[i] * w[i];
    w2 += w[i] * w[i];
  }
  const auto X = real_fft(xw);
  SpectrumResult r;
  r.window = window;
  r.bin_width = sample_rate / static_cast<double>(n);
  r.record_length = static_cast<double>(n) / sample_rate;
  r.frequencies.resize(X.size());
  r.psd.resize(X.size());
  const double norm = 1.0 / (sample_rate * w2);
  for (std::size_t k = 0; k < X.size(); ++k) {
    const bool edge = k == 0 || (n % 2 == 0 && k == n / 2);
    r.frequencies[k] = static_cast<double>(k) * r.bin_width;
    r.psd[k] = (edge ? 1.0 : 2.0) * std::norm(X[k]) * norm;
  }
  return r;
}

/// PSD of a record given with explicit sample times; rejects non-uniform
/// sampling.
inline SpectrumResult psd(std::span<const double> times, std::span<const double> series,
                          Window window = Window::Rectangular) {
  if (times.size() != series.size()) throw DomainError("psd: time/value length mismatch");
  if (times.size() < 2) throw DomainError("psd: record shorter than 1024 samples");
  const double dt = (times.back() - times.front()) / static_cast<double>(times.size() - 1);
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (std::abs((times[i] - times[i - 1]) - dt) > 1e-6 * dt) {
      throw DomainError("psd: non-uniform sampling");
    }
  }
  return psd(series, 1.0 / dt, window);
}

/// Bins of `s` with frequencies in [f_lo, f_hi].
inline SpectrumResult spectrum_band(const SpectrumResult& s, double f_lo, double f_hi) {
  SpectrumResult out = s;
  out.frequencies.clear();
  out.psd.clear();
  for (std::size_t k = 0; k < s.psd.size(); ++k) {
    if (s.frequencies[k] >= f_lo && s.frequencies[k] <= f_hi) {
      out.frequencies.push_back(s.frequencies[k]);
      out.psd.push_back(s.psd[k]);
    }
  }
  return out;
}

/// Index of the bin whose centre is nearest to f.
inline std::size_t bin_index(double f, double bin_width) {
  return static_cast<std::size_t>(std::llround(f / bin_width));
}

/// Single DFT coefficient X_k by direct summation with exactly reduced
/// twiddle phases.
inline std::complex<double> dft_bin(std::span<const double> x, std::size_t k) {
  const std::size_t n = x.size();
  std::complex<double> acc{0.0, 0.0};
  const double base = -kTwoPi / static_cast<double>(n);
  std::uint64_t phase = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ang = base * static_cast<double>(phase);
    acc += x[i] * std::complex<double>(std::cos(ang), std::sin(ang));
    phase += k;
    if (phase >= n) phase -= n;
  }
  return acc;
}

/// One-sided PSD value (V^2/Hz, rectangular window) of the bin containing f.
inline double bin_power(std::span<const double> x, double sample_rate, double f) {
  const std::size_t n = x.size();
  const std::size_t k = bin_index(f, sample_rate / static_cast<double>(n));
  const bool edge = k == 0 || (n % 2 == 0 && k == n / 2);
  return (edge ? 1.0 : 2.0) * std::norm(dft_bin(x, k)) / (sample_rate * static_cast<double>(n));
}

/// Single-sided amplitude 2|X_k|/N of the bin containing f; a sinusoid of
/// amplitude V0 on a bin centre reads V0.
inline double bin_amplitude(std::span<const double> x, double sample_rate, double f) {
  const std::size_t n = x.size();
  const std::size_t k = bin_index(f, sample_rate / static_cast<double>(n));
  return 2.0 * std::abs(dft_bin(x, k)) / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// SNR
// ---------------------------------------------------------------------------

struct SnrValue {
  double db = -std::numeric_limits<double>::infinity();
  bool signal_present = false;
};

/// 10 log10((P - 4kTR) / 4kTR); flagged absent when P <= 4kTR.
inline SnrValue snr(double mean_psd, const ResonatorParams& res) {
  if (!(mean_psd >= 0.0)) throw DomainError("snr: mean psd must be >= 0");
  const double floor = res.johnson_floor();
  SnrValue v;
  if (mean_psd <= floor) return v;
  v.signal_present = true;
  v.db = 10.0 * std::log10((mean_psd - floor) / floor);
  return v;
}

/// Per-bin mean and standard deviation over an ensemble of equal-length
/// spectra, accumulated in insertion order.
class EnsembleSpectrumStats {
 public:
  EnsembleSpectrumStats(double resonance_frequency) : f_res_(resonance_frequency) {}

  void add(const SpectrumResult& s) {
    if (count_ == 0) {
      frequencies_ = s.frequencies;
      bin_width_ = s.bin_width;
      mean_.assign(s.psd.size(), 0.0);
      m2_.assign(s.psd.size(), 0.0);
    } else if (s.psd.size() != mean_.size()) {
      throw DomainError("EnsembleSpectrumStats: spectra of different lengths");
    }
    ++count_;
    if (count_ == 1) resonance_bin();
    const double inv = 1.0 / static_cast<double>(count_);
    for (std::size_t k = 0; k < mean_.size(); ++k) {
      const double d = s.psd[k] - mean_[k];
      mean_[k] += d * inv;
      m2_[k] += d * (s.psd[k] - mean_[k]);
    }
    resonance_powers_.push_back(s.psd[resonance_bin()]);
  }

  std::size_t count() const { return count_; }
  const std::vector<double>& frequencies() const { return frequencies_; }
  const std::vector<double>& mean() const { return mean_; }
  double bin_width() const { return bin_width_; }
  /// Index into mean()/stddev() of the bin containing the resonance.
  std::size_t resonance_bin() const {
    const double f0 = frequencies_.empty() ? 0.0 : frequencies_.front();
    const auto k = bin_index(f_res_ - f0, bin_width_);
    if (k >= mean_.size()) throw DomainError("EnsembleSpectrumStats: resonance outside the spectrum");
    return k;
  }
  const std::vector<double>& resonance_powers() const { return resonance_powers_; }

  /// Sample standard deviation; NaN for fewer than two spectra.
  std::vector<double> stddev() const {
    std::vector<double> s(mean_.size(), std::nan(""));
    if (count_ < 2) return s;
    for (std::size_t k = 0; k < s.size(); ++k) {
      s[k] = std::sqrt(m2_[k] / static_cast<double>(count_ - 1));
    }
    return s;
  }

 private:
  double f_res_;
  double bin_width_ = 0.0;
  std::size_t count_ = 0;
  std::vector<double> frequencies_, mean_, m2_, resonance_powers_;
};

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

inline LinearFit fit_line(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw DomainError("fit_line: need at least two points");
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return f;
}

struct SnrCurvePoint {
  double time = 0.0;          // s
  double mean_power = 0.0;    // V^2/Hz at the resonance bin
  double std_power = 0.0;     // NaN for a single trajectory
  double signal_power = 0.0;  // mean_power - 4kTR
  SnrValue snr;
  SnrValue extrapolated;  // signal power scaled linearly from the longest time
};

struct SnrCurve {
  std::vector<SnrCurvePoint> points;
  LinearFit signal_fit;  // signal_power vs time
  std::size_t trajectories = 0;
};

/// Builds the SNR-versus-detection-time curve from resonance-bin powers
/// already computed per trajectory: powers[trajectory][time_index].
inline SnrCurve snr_curve_from_powers(std::span<const double> times,
                                      const std::vector<std::vector<double>>& powers,
                                      const ResonatorParams& res) {
  if (times.empty()) throw DomainError("snr_vs_time: no detection times");
  if (powers.empty()) throw DomainError("snr_vs_time: empty ensemble");
  SnrCurve curve;
  curve.trajectories = powers.size();
  const double floor = res.johnson_floor();
  for (std::size_t j = 0; j < times.size(); ++j) {
    SnrCurvePoint p;
    p.time = times[j];
    double mean = 0.0;
    for (const auto& row : powers) mean += row.at(j);
    mean /= static_cast<double>(powers.size());
    double var = 0.0;
    for (const auto& row : powers) var += (row[j] - mean) * (row[j] - mean);
    p.mean_power = mean;
    p.std_power = powers.size() > 1 ? std::sqrt(var / static_cast<double>(powers.size() - 1))
                                    : std::nan("");
    p.signal_power = mean - floor;
    p.snr = snr(mean, res);
    curve.points.push_back(p);
  }
  const std::size_t longest = static_cast<std::size_t>(
      std::max_element(times.begin(), times.end()) - times.begin());
  const double anchor = curve.points[longest].signal_power / times[longest];
  std::vector<double> t(times.begin(), times.end()), s;
  for (auto& p : curve.points) {
    p.extrapolated = snr(std::max(0.0, anchor * p.time + floor), res);
    s.push_back(p.signal_power);
  }
  if (times.size() >= 2) curve.signal_fit = fit_line(t, s);
  return curve;
}

/// Resonance-bin powers of each record truncated to each detection time.
inline std::vector<double> truncated_bin_powers(std::span<const double> record, double sample_rate,
                                                std::span<const double> times, double f_res) {
  std::vector<double> out;
  out.reserve(times.size());
  for (double t : times) {
    const auto n = static_cast<std::size_t>(std::llround(t * sample_rate));
    if (n > record.size()) throw DomainError("snr_vs_time: detection time exceeds record");
    if (n < kMinSpectrumLength) throw DomainError("snr_vs_time: detection time too short");
    out.push_back(bin_power(record.first(n), sample_rate, f_res));
  }
  return out;
}

inline SnrCurve snr_vs_time(const std::vector<std::vector<double>>& records, double sample_rate,
                            std::span<const double> times, const ResonatorParams& res,
                            double f_res) {
  std::vector<std::vector<double>> powers;
  powers.reserve(records.size());
  for (const auto& r : records) powers.push_back(truncated_bin_powers(r, sample_rate, times, f_res));
  return snr_curve_from_powers(times, powers, res);
}

// ---------------------------------------------------------------------------
// Single-bin power statistics
// ---------------------------------------------------------------------------

/// P = sum_{j<k} (s_j + n_j)^2 with n_j ~ N(0, floor/k) and sum s_j^2 = Vs^2,
/// i.e. (k/floor) P is non-central chi-squared with k degrees of freedom and
/// non-centrality k Vs^2 / floor. Mean Vs^2 + floor for every k. k = 1 is the
/// real-amplitude model; k = 2 is a periodogram bin of a real record.
class NoncentralPowerModel {
 public:
  NoncentralPowerModel(double signal_density, double floor, int dof = 1)
      : vs_(signal_density), floor_(floor), dof_(dof) {
    if (!(signal_density >= 0.0)) throw DomainError("noncentral_power_stats: Vs must be >= 0");
    if (!(floor > 0.0)) throw DomainError("noncentral_power_stats: floor must be > 0");
    if (dof < 1) throw DomainError("noncentral_power_stats: dof must be >= 1");
  }

  double signal_density() const { return vs_; }
  double floor() const { return floor_; }
  int dof() const { return dof_; }
  double scale() const { return floor_ / dof_; }
  double noncentrality() const { return vs_ * vs_ / scale(); }
  double mean() const { return vs_ * vs_ + floor_; }
  /// Power SNR in dB as used by snr(): 10 log10(Vs^2 / floor).
  double snr_db() const { return 10.0 * std::log10(vs_ * vs_ / floor_); }

  double sample(RngStream& rng) const {
    const double sigma = std::sqrt(scale());
    double p = 0.0;
    for (int j = 0; j < dof_; ++j) {
      const double s = j == 0 ? vs_ : 0.0;
      const double v = s + sigma * rng.normal();
      p += v * v;
    }
    return p;
  }

  std::vector<double> samples(std::size_t n, RngStream& rng) const {
    std::vector<double> out(n);
    for (auto& p : out) p = sample(rng);
    return out;
  }

  double pdf(double p) const {
    if (p <= 0.0) return 0.0;
    const double s = scale();
    return boost::math::pdf(dist(), p / s) / s;
  }

  double cdf(double p) const {
    if (p <= 0.0) return 0.0;
    return boost::math::cdf(dist(), p / scale());
  }

 private:
  boost::math::non_central_chi_squared_distribution<double> dist() const {
    return {static_cast<double>(dof_), noncentrality()};
  }

  double vs_, floor_;
  int dof_;
};

/// Sample sequence of independent single-bin powers, one per time point
/// (burst time series).
inline std::vector<double> burst_series(const NoncentralPowerModel& model, std::size_t n,
                                        RngStream& rng) {
  return model.samples(n, rng);
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 0.0;
};

/// One-sample Kolmogorov-Smirnov test against a continuous CDF, using the
/// asymptotic Kolmogorov distribution with Stephens' small-n correction.
template <class Cdf>
KsResult ks_test(std::vector<double> samples, Cdf&& cdf) {
  if (samples.empty()) throw DomainError("ks_test: no samples");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  const double sn = std::sqrt(n);
  const double lambda = (sn + 0.12 + 0.11 / sn) * d;
  double q = 0.0;
  if (lambda < 0.2) {
    q = 1.0;
  } else {
    double sign = 1.0;
    for (int j = 1; j <= 100; ++j) {
      const double term = sign * std::exp(-2.0 * j * j * lambda * lambda);
      q += term;
      if (std::abs(term) < 1e-12) break;
      sign = -sign;
    }
    q = std::clamp(2.0 * q, 0.0, 1.0);
  }
  return {d, q};
}

}  // namespace trapsim
