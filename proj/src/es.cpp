#include "ctxrnn/es.hpp"

#include <cmath>

#include "ctxrnn/errors.hpp"

namespace ctxrnn {

namespace {

double logistic(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

ESState es_init(std::span<const double> prefix, std::size_t period) {
  if (period == 0) throw ShapeError("es_init: period must be positive");
  if (prefix.size() < 2 * period) throw ShapeError("es_init: needs 2p observations");
  for (std::size_t i = 0; i < 2 * period; ++i)
    if (!(prefix[i] > 0.0)) throw DomainError("es_init: values must be positive");
  ESState s;
  double level = 0.0;
  for (std::size_t i = 0; i < period; ++i) level += prefix[i];
  level /= static_cast<double>(period);
  s.level = level;
  s.seasonal.resize(period);
  double total = 0.0;
  for (std::size_t i = 0; i < period; ++i) {
    s.seasonal[i] = 0.5 * (prefix[i] + prefix[i + period]) / level;
    total += s.seasonal[i];
  }
  const double mean = total / static_cast<double>(period);
  for (double& f : s.seasonal) f /= mean;
  return s;
}

EsStepResult es_step(ESState& state, double z, double delta_alpha, double delta_beta) {
  if (!(z > 0.0) || !std::isfinite(z)) throw DomainError("es_step: observation must be positive");
  const double alpha = logistic(state.alpha_logit + delta_alpha);
  const double beta = logistic(state.beta_logit + delta_beta);
  const double level = alpha * z + (1.0 - alpha) * state.level;
  double& slot = state.seasonal[state.head];
  const double next = beta * (z / level) + (1.0 - beta) * slot;
  state.level = level;
  slot = next;
  state.head = (state.head + 1) % state.seasonal.size();
  return {level, next};
}

void es_skip(ESState& state) { state.head = (state.head + 1) % state.seasonal.size(); }

double seasonal_lookup(const ESState& state, std::size_t offset) {
  if (offset >= state.seasonal.size()) throw ShapeError("seasonal_lookup: offset out of range");
  return state.seasonal[(state.head + offset) % state.seasonal.size()];
}

Var EsVars::lookup(std::size_t offset) const {
  if (offset >= seasonal.size()) throw ShapeError("seasonal lookup offset out of range");
  return seasonal[(head + offset) % seasonal.size()];
}

EsVars es_bind(Tape& tape, const ESState& state) {
  EsVars v;
  v.level = tape.scalar(state.level);
  v.head = state.head;
  v.seasonal.reserve(state.seasonal.size());
  for (double f : state.seasonal) v.seasonal.push_back(tape.scalar(f));
  return v;
}

void es_store(const EsVars& vars, ESState& state) {
  state.level = vars.level.value();
  state.head = vars.head;
  state.seasonal.resize(vars.seasonal.size());
  for (std::size_t i = 0; i < vars.seasonal.size(); ++i) state.seasonal[i] = vars.seasonal[i].value();
}

Var es_step(EsVars& vars, double z, Var alpha_logit, Var beta_logit, Var delta_alpha, Var delta_beta) {
  if (!(z > 0.0) || !std::isfinite(z)) throw DomainError("es_step: observation must be positive");
  Tape& tape = vars.level.tape();
  const Var a_pre = delta_alpha.valid() ? add(alpha_logit, delta_alpha) : alpha_logit;
  const Var b_pre = delta_beta.valid() ? add(beta_logit, delta_beta) : beta_logit;
  const Var alpha = sigmoid(a_pre);
  const Var beta = sigmoid(b_pre);
  const Var zv = tape.scalar(z);
  const Var level = add(mul(alpha, zv), mul(one_minus(alpha), vars.level));
  const Var consumed = vars.seasonal[vars.head];
  const Var ratio = div(zv, level);
  const Var next = add(mul(beta, ratio), mul(one_minus(beta), consumed));
  vars.level = level;
  vars.seasonal[vars.head] = next;
  vars.head = (vars.head + 1) % vars.seasonal.size();
  return consumed;
}

Var es_skip(EsVars& vars) {
  const Var consumed = vars.seasonal[vars.head];
  vars.head = (vars.head + 1) % vars.seasonal.size();
  return consumed;
}

}  // namespace ctxrnn
