#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ctxrnn/panel.hpp"

namespace ctxrnn {

/// target_t receives coefficient · driver_{t−lag}.
struct Coupling {
  std::size_t driver = 0;
  std::size_t target = 0;
  double coefficient = 1.0;
  std::size_t lag = 1;
};

struct SynthSpec {
  std::size_t n = 4;
  std::size_t T = 2000;
  std::size_t period = 24;
  double noise = 0.1;
  std::vector<Coupling> couplings;
  /// Base level of driver series before the positivity shift.
  double level = 20.0;
  /// Innovation scale of the persistent AR(1) component of drivers.
  double innovation = 1.0;
  double ar = 0.95;
  /// Amplitude of each series' own period-p sinusoid.
  double seasonal_amplitude = 3.0;
  /// First timestamp (seconds since epoch); 2015-01-01 00:00 by default.
  std::int64_t start = 1420070400;
  std::int64_t step_seconds = 3600;
};

/// Drivers (series that are not a coupling target) are positive mixtures of
/// sinusoids, a persistent AR(1) component and white noise. Driven series
/// are Σ coefficient · driver_{t−lag} plus their own seasonal sinusoid and
/// noise. Each series is finally shifted so its minimum is at least 1.
/// Deterministic for a given seed. Throws ShapeError on an inconsistent spec.
SeriesPanel synth_generate(const SynthSpec& spec, std::uint64_t seed);

/// Parses "driver>target:coef[@lag]" edges separated by ';' or whitespace.
/// Edges without "@lag" use `default_lag`.
std::vector<Coupling> parse_couplings(const std::string& text, std::size_t default_lag);
std::string format_couplings(const std::vector<Coupling>& couplings);

/// Two drivers (series 0 and 1); every other series follows one of them
/// with a coefficient between 0.5 and 1.5.
std::vector<Coupling> two_driver_couplings(std::size_t n, std::size_t lag);

}  // namespace ctxrnn
