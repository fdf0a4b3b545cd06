#include "ctxrnn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "ctxrnn/errors.hpp"

namespace ctxrnn {

namespace {

void shift_to_floor(std::vector<double>& v, double floor) {
  const double lo = *std::min_element(v.begin(), v.end());
  if (lo < floor)
    for (double& x : v) x += floor - lo;
}

}  // namespace

SeriesPanel synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.n == 0 || spec.T < 2 || spec.period == 0) throw ShapeError("synth: n ≥ 1, T ≥ 2, period ≥ 1 required");
  if (spec.noise < 0.0 || spec.innovation < 0.0) throw ShapeError("synth: negative noise scale");
  std::vector<bool> driven(spec.n, false);
  std::size_t max_lag = 0;
  for (const auto& c : spec.couplings) {
    if (c.driver >= spec.n || c.target >= spec.n || c.driver == c.target)
      throw ShapeError("synth: coupling references an invalid series");
    driven[c.target] = true;
    max_lag = std::max(max_lag, c.lag);
  }
  for (const auto& c : spec.couplings)
    if (driven[c.driver]) throw ShapeError("synth: a driven series cannot drive another series");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double two_pi = 2.0 * std::numbers::pi;
  const std::size_t total = spec.T + max_lag;
  const double p = static_cast<double>(spec.period);

  // Drivers are generated over [−max_lag, T) so driven series are exact
  // lagged copies from the first timestep on.
  std::vector<std::vector<double>> ext(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    if (driven[i]) continue;
    const double phase0 = two_pi * unit(rng);
    const double slow_period = p * (3.0 + 5.0 * unit(rng));
    const double slow_amp = 0.5 * spec.seasonal_amplitude * (0.5 + unit(rng));
    const double phase1 = two_pi * unit(rng);
    auto& v = ext[i];
    v.resize(total);
    double ar = 0.0;
    for (std::size_t k = 0; k < total; ++k) {
      const double t = static_cast<double>(k);
      ar = spec.ar * ar + spec.innovation * gauss(rng);
      v[k] = spec.level + spec.seasonal_amplitude * std::sin(two_pi * t / p + phase0) +
             slow_amp * std::sin(two_pi * t / slow_period + phase1) + ar + spec.noise * gauss(rng);
    }
    shift_to_floor(v, 1.0);
  }
  std::vector<std::vector<double>> rows(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    if (!driven[i]) {
      rows[i].assign(ext[i].begin() + static_cast<std::ptrdiff_t>(max_lag), ext[i].end());
      continue;
    }
    const double phase = two_pi * unit(rng);
    auto& v = rows[i];
    v.resize(spec.T);
    for (std::size_t t = 0; t < spec.T; ++t) {
      double z = spec.seasonal_amplitude * std::sin(two_pi * static_cast<double>(t) / p + phase);
      for (const auto& c : spec.couplings)
        if (c.target == i) z += c.coefficient * ext[c.driver][t + max_lag - c.lag];
      v[t] = z + spec.noise * gauss(rng);
    }
    shift_to_floor(v, 1.0);
  }
  return make_panel(std::move(rows), spec.start, spec.step_seconds);
}

std::vector<Coupling> parse_couplings(const std::string& text, std::size_t default_lag) {
  std::vector<Coupling> out;
  std::string normalized = text;
  std::replace(normalized.begin(), normalized.end(), ';', ' ');
  std::istringstream in(normalized);
  std::string edge;
  while (in >> edge) {
    Coupling c;
    c.lag = default_lag;
    unsigned long d = 0, t = 0, lag = 0;
    double coef = 0;
    int used = 0;
    if (std::sscanf(edge.c_str(), "%lu>%lu:%lf%n", &d, &t, &coef, &used) != 3)
      throw DataError("bad coupling edge '" + edge + "' (expected driver>target:coef[@lag])");
    if (static_cast<std::size_t>(used) != edge.size()) {
      int rest = 0;
      if (std::sscanf(edge.c_str() + used, "@%lu%n", &lag, &rest) != 1 ||
          static_cast<std::size_t>(used + rest) != edge.size())
        throw DataError("bad coupling edge '" + edge + "'");
      c.lag = lag;
    }
    c.driver = d;
    c.target = t;
    c.coefficient = coef;
    out.push_back(c);
  }
  return out;
}

std::string format_couplings(const std::vector<Coupling>& couplings) {
  std::ostringstream out;
  out.precision(17);
  for (std::size_t k = 0; k < couplings.size(); ++k) {
    const auto& c = couplings[k];
    if (k) out << ';';
    out << c.driver << '>' << c.target << ':' << c.coefficient << '@' << c.lag;
  }
  return out.str();
}

std::vector<Coupling> two_driver_couplings(std::size_t n, std::size_t lag) {
  std::vector<Coupling> out;
  for (std::size_t i = 2; i < n; ++i) {
    const double coef = 0.5 + static_cast<double>((i * 7) % 11) / 10.0;
    out.push_back({i % 2, i, coef, lag});
  }
  return out;
}

}  // namespace ctxrnn
