#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ctxrnn/tape.hpp"

namespace ctxrnn {

inline constexpr double kInitialSmoothingLogit = -2.0;

/// Multiplicative level + seasonal state. `seasonal` is a ring of p factors;
/// seasonal[head] is s_t, the factor for the next observation.
struct ESState {
  double level = 1.0;
  std::vector<double> seasonal{1.0};
  std::size_t head = 0;
  double alpha_logit = kInitialSmoothingLogit;
  double beta_logit = kInitialSmoothingLogit;

  std::size_t period() const { return seasonal.size(); }
};

/// level = mean of the first p values; seasonal[i] = mean(z_i, z_{i+p}) /
/// level, renormalized to average 1. Needs 2p positive values.
ESState es_init(std::span<const double> prefix, std::size_t period);

struct EsStepResult {
  double level;
  double seasonal;
};

/// α = σ(Iα + Δα), β = σ(Iβ + Δβ); l_t = α z + (1−α) l_{t−1};
/// s_{t+p} = β z / l_t + (1−β) s_t. s_t is consumed and s_{t+p} takes its
/// slot. Throws DomainError for z ≤ 0 and leaves the state unchanged.
EsStepResult es_step(ESState& state, double z, double delta_alpha, double delta_beta);

/// Step for a missing observation: level kept, s_{t+p} = s_t.
void es_skip(ESState& state);

/// Factor for phase offset ∈ [0, p): offset 0 is s_t.
double seasonal_lookup(const ESState& state, std::size_t offset);

/// Tape-tracked mirror of ESState used inside training graphs.
struct EsVars {
  Var level;
  std::vector<Var> seasonal;
  std::size_t head = 0;

  std::size_t period() const { return seasonal.size(); }
  Var lookup(std::size_t offset) const;
};

/// Binds level and factors as constants (the recursion's history is cut).
EsVars es_bind(Tape& tape, const ESState& state);
/// Writes the current values back; logits are left untouched.
void es_store(const EsVars& vars, ESState& state);

/// Tape version of es_step; `delta_alpha`/`delta_beta` may be invalid Vars,
/// meaning zero. Returns s_t, the factor consumed by this step.
Var es_step(EsVars& vars, double z, Var alpha_logit, Var beta_logit, Var delta_alpha, Var delta_beta);
/// Tape version of es_skip. Returns the consumed s_t.
Var es_skip(EsVars& vars);

}  // namespace ctxrnn
