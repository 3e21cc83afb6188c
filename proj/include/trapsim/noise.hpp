#pragma once

// Stochastic sources for the noisy 3D runs: electrode surface field noise,
// resonator Johnson current noise and a random walk of the rf amplitude.
// Increments are drawn once per noise interval dt and held constant across
// it, so a white source of one-sided PSD S has per-interval variance
// S / (2 dt).

#include <array>
#include <cmath>
#include <cstdint>
#include <random>

#include "trapsim/core.hpp"

namespace trapsim {

enum class NoiseSource : std::uint64_t { Surface = 0, Johnson = 1, RfWalk = 2 };
inline constexpr std::uint64_t kNoiseSourceCount = 3;

/// Independent, reproducible Gaussian stream identified by (seed, stream).
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream),
                      static_cast<std::uint32_t>(stream >> 32), 0x5eedu};
    engine_.seed(seq);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Stream id of one noise source of one trajectory. Distinct for every
/// (trajectory, source) pair.
constexpr std::uint64_t stream_id(std::uint64_t trajectory, NoiseSource source) {
  return trajectory * kNoiseSourceCount + static_cast<std::uint64_t>(source);
}

struct NoiseConfig {
  double surface_baseline = 1e-12;  // V^2 m^-2 Hz^-1 at the reference point
  double reference_omega = units::angular_MHz(1.0);
  double reference_distance = 100.0 * units::um;
  double reference_temperature = 4.0;

  double electrode_distance = 431.8 * units::um;
  double temperature = 4.0;
  double detection_omega = units::angular_MHz(200.0);  // where S_E is evaluated

  double rf_walk_sigma = 1e-3;
  double rf_walk_horizon = 10.0 * units::ms;

  bool surface = true;
  bool johnson = true;
  bool rf_walk = true;
  std::array<bool, 3> surface_axes{true, false, false};

  std::uint64_t seed = 1;

  bool any() const { return surface || johnson || rf_walk; }
  double rf_walk_diffusion() const { return rf_walk_sigma * rf_walk_sigma / rf_walk_horizon; }
};

/// S_E(omega, d, T) = S_ref (omega_ref/omega) (d_ref/d)^2 (T/T_ref)^0.5.
inline double surface_noise_psd(double omega, double d, double T, const NoiseConfig& cfg) {
  if (!(omega > 0.0) || !(d > 0.0) || !(T > 0.0)) {
    throw DomainError("surface_noise_psd: inputs must be positive");
  }
  const double dr = cfg.reference_distance / d;
  return cfg.surface_baseline * (cfg.reference_omega / omega) * dr * dr *
         std::sqrt(T / cfg.reference_temperature);
}

inline double surface_noise_psd(const NoiseConfig& cfg) {
  return surface_noise_psd(cfg.detection_omega, cfg.electrode_distance, cfg.temperature, cfg);
}

/// Field increment (V/m) for one interval: sqrt(S_E/2) * N(0, 1/dt).
inline double surface_field_increment(double S_E, double dt, RngStream& rng) {
  if (!(dt > 0.0)) throw DomainError("surface_field_increment: dt must be > 0");
  return std::sqrt(S_E / (2.0 * dt)) * rng.normal();
}

/// Johnson current (A) for one interval: sqrt(2 k_B T / R) * N(0, 1/dt).
inline double johnson_current_increment(const ResonatorParams& res, double dt, RngStream& rng) {
  if (!(dt > 0.0)) throw DomainError("johnson_current_increment: dt must be > 0");
  const double T = res.temperature();
  if (T == 0.0) {
    rng.normal();  // keep the stream aligned with the T > 0 case
    return 0.0;
  }
  return std::sqrt(2.0 * PhysicalConstants::boltzmann * T / (res.R() * dt)) * rng.normal();
}

/// One Wiener step of the relative rf amplitude R_U with diffusion
/// sigma^2 / horizon.
inline double rf_walk_step(double R_U, double dt, const NoiseConfig& cfg, RngStream& rng) {
  if (!(dt > 0.0)) throw DomainError("rf_walk_step: dt must be > 0");
  return R_U + std::sqrt(cfg.rf_walk_diffusion() * dt) * rng.normal();
}

}  // namespace trapsim
