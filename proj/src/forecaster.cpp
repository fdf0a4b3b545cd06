#include "ctxrnn/forecaster.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "ctxrnn/context_track.hpp"
#include "ctxrnn/errors.hpp"
#include "ctxrnn/preprocess.hpp"
#include "ctxrnn/wdrnn.hpp"

namespace ctxrnn {

double pinball(double actual, double predicted, double q) {
  if (!(q > 0.0 && q < 1.0)) throw DomainError("pinball: quantile must lie in (0, 1)");
  const double diff = actual - predicted;
  return diff >= 0.0 ? q * diff : (1.0 - q) * -diff;
}

double total_loss(std::span<const double> actual, std::span<const double> median, std::span<const double> lower,
                  std::span<const double> upper, double gamma, Quantiles q) {
  const std::size_t n = actual.size();
  if (median.size() != n || lower.size() != n || upper.size() != n) throw ShapeError("total_loss: length mismatch");
  if (n == 0) throw ShapeError("total_loss: empty window");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    total += pinball(actual[i], median[i], q.median) +
             gamma * (pinball(actual[i], lower[i], q.lower) + pinball(actual[i], upper[i], q.upper));
  return total / static_cast<double>(n);
}

Var total_loss(Var actual, Var median, Var lower, Var upper, double gamma, Quantiles q, Var mask) {
  if (median.size() != actual.size() || lower.size() != actual.size() || upper.size() != actual.size())
    throw ShapeError("total_loss: length mismatch");
  Var terms = add(pinball(actual, median, q.median),
                  scale(add(pinball(actual, lower, q.lower), pinball(actual, upper, q.upper)), gamma));
  if (!mask.valid()) return mean(terms);
  double count = 0.0;
  for (double m : mask.values()) count += m;
  if (count == 0.0) throw ShapeError("total_loss: every position is masked");
  return scale(sum(mul(terms, mask)), 1.0 / count);
}

Var assemble_input(Var x_in, Var seasonal, double z_bar, Var calendar, Var context) {
  if (!x_in.valid() || !seasonal.valid() || !calendar.valid()) throw ShapeError("assemble_input: missing part");
  if (!(z_bar > 0.0)) throw DomainError("assemble_input: window mean must be positive");
  std::vector<Var> parts = {x_in, seasonal, x_in.tape().scalar(std::log10(z_bar)), calendar};
  if (context.valid()) parts.push_back(context);
  return concat(parts);
}

void adam_step(Tensor& param, AdamSlot& slot, std::span<const double> grad, double lr, double beta1, double beta2,
               double eps) {
  if (grad.size() != param.size()) throw ShapeError("adam_step: gradient shape mismatch");
  if (slot.m.empty()) {
    slot.m.assign(param.size(), 0.0);
    slot.v.assign(param.size(), 0.0);
  }
  ++slot.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(slot.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(slot.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * grad[i];
    slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * grad[i] * grad[i];
    param.values[i] -= lr * (slot.m[i] / c1) / (std::sqrt(slot.v[i] / c2) + eps);
  }
}

Model make_model(const Config& config, const std::vector<std::string>& series_names,
                 std::vector<std::size_t> global_batch) {
  config.validate();
  Model model;
  model.config = config;
  model.series_names = series_names;
  if (config.variant == Variant::no_context) {
    global_batch.clear();
  } else {
    if (global_batch.size() != config.context_batch)
      throw DataError("context batch has " + std::to_string(global_batch.size()) + " series but context_batch = " +
                      std::to_string(config.context_batch));
    for (std::size_t id : global_batch)
      if (id >= series_names.size()) throw DataError("context batch references an unknown series");
  }
  model.global_batch = std::move(global_batch);
  for (std::size_t m = 0; m < config.ensemble; ++m)
    model.members.push_back(init_params(config, series_names.size(), config.seed + m));
  return model;
}

void check_panel(const Model& model, const SeriesPanel& panel) {
  if (panel.names != model.series_names)
    throw DataError("panel series do not match the model (expected " + std::to_string(model.series_count()) +
                    " series with the trained names)");
  if (panel.T < 2 * model.config.period) throw DataError("panel shorter than two seasonal periods");
}

namespace {

ESState init_track_es(const SeriesPanel& panel, std::size_t series, std::size_t period) {
  const std::size_t len = 2 * period;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < len; ++t)
    if (panel.observed(series, t)) {
      sum += panel.value(series, t);
      ++count;
    }
  if (count == 0)
    for (std::size_t t = 0; t < panel.T; ++t)
      if (panel.observed(series, t)) {
        sum += panel.value(series, t);
        ++count;
      }
  const double fill = count ? sum / static_cast<double>(count) : 1.0;
  std::vector<double> prefix(len);
  for (std::size_t t = 0; t < len; ++t) prefix[t] = panel.observed(series, t) ? panel.value(series, t) : fill;
  return es_init(prefix, period);
}

std::int64_t timestamp_at(const SeriesPanel& panel, std::size_t t) {
  if (t < panel.T) return panel.timestamps[t];
  return panel.timestamps.back() + static_cast<std::int64_t>(t - panel.T + 1) * panel.step_seconds;
}

struct BoundTrack {
  EsVars es;
  std::deque<Var> history;
  Var alpha_logit, beta_logit;
};

BoundTrack bind_track(Tape& tape, ParamBinder& binder, const ESState& es, const std::deque<double>& history,
                      const std::string& logits_name) {
  BoundTrack b;
  b.es = es_bind(tape, es);
  for (double f : history) b.history.push_back(tape.scalar(f));
  const Var logits = binder.get(logits_name);
  b.alpha_logit = slice(logits, 0, 1);
  b.beta_logit = slice(logits, 1, 1);
  return b;
}

void advance(BoundTrack& b, const SeriesPanel& panel, std::size_t series, std::size_t t, std::size_t window,
             Var delta_alpha, Var delta_beta) {
  const Var consumed = panel.observed(series, t)
                           ? es_step(b.es, panel.value(series, t), b.alpha_logit, b.beta_logit, delta_alpha, delta_beta)
                           : es_skip(b.es);
  b.history.push_back(consumed);
  if (b.history.size() > window) b.history.pop_front();
}

struct WindowInput {
  Var x_in;
  double z_bar = 0.0;
  bool skip = false;
};

// x_in[τ] = log(z_τ / z̄) − log ŝ_τ over observed cells, 0 elsewhere.
WindowInput window_input(Tape& tape, const SeriesPanel& panel, std::size_t series, std::size_t t,
                         std::size_t window, const BoundTrack& b) {
  const WindowStats stats = window_stats(panel, series, t - window, window);
  WindowInput w;
  w.skip = stats.skip;
  w.z_bar = stats.observed ? stats.z_bar : b.es.level.value();
  std::vector<double> data(window), mask(window, 1.0);
  bool any_missing = false;
  for (std::size_t k = 0; k < window; ++k) {
    const std::size_t tau = t - window + k;
    if (panel.observed(series, tau)) {
      data[k] = std::log(panel.value(series, tau) / w.z_bar);
    } else {
      mask[k] = 0.0;
      any_missing = true;
    }
  }
  const std::vector<Var> factors(b.history.begin(), b.history.end());
  Var x = sub(tape.constant(Shape::vector(window), data), log(concat(factors)));
  if (any_missing) x = mul(x, tape.constant(Shape::vector(window), mask));
  w.x_in = x;
  return w;
}

}  // namespace

Engine::Engine(const Model& model, const SeriesPanel& panel, std::vector<std::size_t> batch, Options options)
    : model_(model), config_(model.config), panel_(panel), options_(options) {
  check_panel(model, panel);
  for (std::size_t id : batch) {
    if (id >= panel.n) throw DataError("batch references an unknown series");
    MainTrack m;
    m.series = id;
    m.slot = id;
    main_.push_back(std::move(m));
  }
  for (std::size_t id : model.global_batch) {
    Track c;
    c.series = id;
    context_.push_back(std::move(c));
  }
  reset();
}

void Engine::reset() {
  const auto shapes = layer_shapes(config_);
  for (auto& m : main_) {
    m.es = init_track_es(panel_, m.series, config_.period);
    m.history.clear();
    m.bottom.clear();
    m.top.clear();
    for (const auto& [bottom, top] : shapes) {
      m.bottom.push_back(zero_memory(bottom));
      m.top.push_back(zero_memory(top));
    }
  }
  for (auto& c : context_) {
    c.es = init_track_es(panel_, c.series, config_.period);
    c.history.clear();
  }
}

std::size_t Engine::horizon_end() const {
  std::size_t end = 0;
  if (options_.loss_end >= config_.horizon && options_.loss_end - config_.horizon + 1 > options_.loss_begin)
    end = options_.loss_end - config_.horizon + 1;
  if (options_.forecast_end > options_.forecast_begin) end = std::max(end, options_.forecast_end);
  return end;
}

Engine::ChunkResult Engine::run_chunk(Tape& tape, ParamBinder& binder, std::size_t t0, std::size_t t1,
                                      std::vector<Forecast>* forecasts) {
  const std::size_t W = config_.window, fh = config_.horizon, p = config_.period;
  const std::size_t K = context_.size(), u = config_.context_size;
  const double clamp_at = config_.delta_clamp;
  const Quantiles q{config_.q_median, config_.q_lower, config_.q_upper};
  const bool use_context = config_.variant != Variant::no_context;
  if (t1 > panel_.T + 1) throw ShapeError("run_chunk: range runs past the panel");

  std::vector<BoundTrack> main_bound, ctx_bound;
  std::vector<StackHistory> stacks(main_.size());
  for (std::size_t j = 0; j < main_.size(); ++j) {
    const MainTrack& m = main_[j];
    main_bound.push_back(bind_track(tape, binder, m.es, m.history, param_names::main_es(m.slot)));
    for (std::size_t l = 0; l < m.bottom.size(); ++l) {
      stacks[j].bottom.push_back(bind_memory(tape, m.bottom[l]));
      stacks[j].top.push_back(bind_memory(tape, m.top[l]));
    }
  }
  for (std::size_t k = 0; k < K; ++k)
    ctx_bound.push_back(bind_track(tape, binder, context_[k].es, context_[k].history, param_names::context_es(k)));

  std::optional<SharedWeights> shared;
  std::vector<Var> losses;
  ChunkResult result;

  for (std::size_t t = t0; t < t1; ++t) {
    const bool anchor = t >= W;
    std::vector<Var> ctx_da(K), ctx_db(K);
    std::vector<Var> main_da(main_.size()), main_db(main_.size());

    if (anchor) {
      if (!shared) shared = bind_shared(binder, config_);
      Var context;
      if (use_context) {
        std::vector<Var> parts;
        for (std::size_t k = 0; k < K; ++k) {
          const WindowInput in = window_input(tape, panel_, context_[k].series, t, W, ctx_bound[k]);
          const ContextOutput out = context_conv_forward(spectral_features(in.x_in), shared->conv, u);
          parts.push_back(out.r);
          ctx_da[k] = clamp(out.delta_alpha, -clamp_at, clamp_at);
          ctx_db[k] = clamp(out.delta_beta, -clamp_at, clamp_at);
        }
        context = assemble_context(parts, K);
      }
      const Var calendar = embed_calendar(calendar_features(timestamp_at(panel_, t)), shared->embedding);
      const bool want_loss = t >= options_.loss_begin && t + fh <= options_.loss_end && t + fh <= panel_.T;
      const bool want_forecast = forecasts && t >= options_.forecast_begin && t < options_.forecast_end;

      for (std::size_t j = 0; j < main_.size(); ++j) {
        const std::size_t series = main_[j].series;
        BoundTrack& b = main_bound[j];
        const WindowInput in = window_input(tape, panel_, series, t, W, b);
        std::vector<Var> season(p);
        for (std::size_t k = 0; k < p; ++k) season[k] = b.es.lookup(k);
        Var modulated;
        if (use_context)
          modulated = config_.variant == Variant::full
                          ? modulate(context, binder.get(param_names::modulation(main_[j].slot)))
                          : context;
        const Var x = assemble_input(in.x_in, concat(season), in.z_bar, calendar, modulated);
        const Var y = stack_forward(x, stacks[j], shared->layers);
        const Var out = add(matmul(shared->head_w, y), shared->head_b);
        main_da[j] = clamp(slice(out, 3 * fh, 1), -clamp_at, clamp_at);
        main_db[j] = clamp(slice(out, 3 * fh + 1, 1), -clamp_at, clamp_at);

        if (!(want_loss && !in.skip) && !want_forecast) continue;
        std::vector<Var> future(fh);
        for (std::size_t k = 0; k < fh; ++k) future[k] = b.es.lookup(k % p);
        const Var s_future = concat(future);
        const Var x_med = slice(out, 0, fh), x_lo = slice(out, fh, fh), x_hi = slice(out, 2 * fh, fh);

        if (want_loss && !in.skip) {
          std::vector<double> actual(fh, 0.0), mask(fh, 0.0);
          bool any = false;
          for (std::size_t k = 0; k < fh; ++k)
            if (panel_.observed(series, t + k)) {
              actual[k] = panel_.value(series, t + k) / in.z_bar;
              mask[k] = 1.0;
              any = true;
            }
          if (any) {
            const Var a = tape.constant(Shape::vector(fh), actual);
            const bool full = std::all_of(mask.begin(), mask.end(), [](double m) { return m == 1.0; });
            losses.push_back(total_loss(a, mul(exp(x_med), s_future), mul(exp(x_lo), s_future),
                                        mul(exp(x_hi), s_future), config_.gamma, q,
                                        full ? Var{} : tape.constant(Shape::vector(fh), mask)));
          }
        }
        if (want_forecast) {
          Forecast f;
          f.series = series;
          f.t = t;
          const std::vector<double> s(s_future.values().begin(), s_future.values().end());
          auto convert = [&](Var x) {
            const std::vector<double> xs(x.values().begin(), x.values().end());
            auto z = postprocess(xs, in.z_bar, s);
            for (double& v : z) v -= panel_.shift;
            return z;
          };
          f.median = convert(x_med);
          f.lower = convert(x_lo);
          f.upper = convert(x_hi);
          forecasts->push_back(std::move(f));
        }
      }
    }

    if (t >= panel_.T) continue;
    for (std::size_t j = 0; j < main_.size(); ++j)
      advance(main_bound[j], panel_, main_[j].series, t, W, main_da[j], main_db[j]);
    for (std::size_t k = 0; k < K; ++k) advance(ctx_bound[k], panel_, context_[k].series, t, W, ctx_da[k], ctx_db[k]);
  }

  auto store = [](const BoundTrack& b, Track& track) {
    es_store(b.es, track.es);
    track.history.clear();
    for (const Var& v : b.history) track.history.push_back(v.value());
  };
  for (std::size_t j = 0; j < main_.size(); ++j) {
    store(main_bound[j], main_[j]);
    for (std::size_t l = 0; l < main_[j].bottom.size(); ++l) {
      main_[j].bottom[l] = snapshot(stacks[j].bottom[l]);
      main_[j].top[l] = snapshot(stacks[j].top[l]);
    }
  }
  for (std::size_t k = 0; k < K; ++k) store(ctx_bound[k], context_[k]);

  result.windows = losses.size();
  if (!losses.empty()) result.loss = mean(concat(losses));
  return result;
}

namespace {

struct LossTotals {
  double sum = 0.0;
  std::size_t windows = 0;
};

template <class OnChunk>
void sweep(Engine& engine, std::size_t end, std::size_t chunk, std::vector<Forecast>* forecasts, OnChunk&& on_chunk,
           const ParamStore& params) {
  Tape tape;
  for (std::size_t t0 = 0; t0 < end; t0 += chunk) {
    tape.clear();
    StoreBinder binder(tape, params);
    const auto result = engine.run_chunk(tape, binder, t0, std::min(end, t0 + chunk), forecasts);
    on_chunk(tape, binder, result);
  }
}

void check_finite_loss(double value, std::size_t epoch) {
  if (!std::isfinite(value))
    throw DivergenceError("training diverged: non-finite loss in epoch " + std::to_string(epoch));
}

}  // namespace

double evaluate_loss(const Model& model, std::size_t member, const SeriesPanel& panel, std::size_t begin,
                     std::size_t end) {
  std::vector<std::size_t> all(panel.n);
  std::iota(all.begin(), all.end(), 0);
  Engine engine(model, panel, all, {begin, end, 0, 0});
  LossTotals totals;
  sweep(engine, engine.horizon_end(), model.config.tbptt, nullptr,
        [&](Tape&, StoreBinder&, const Engine::ChunkResult& r) {
          if (r.windows == 0) return;
          totals.sum += r.loss.value() * static_cast<double>(r.windows);
          totals.windows += r.windows;
        },
        model.members.at(member));
  return totals.windows ? totals.sum / static_cast<double>(totals.windows) : std::nan("");
}

TrainLog train_member(Model& model, std::size_t member, const SeriesPanel& panel, std::size_t train_end,
                       std::size_t validation_end, const EpochCallback& on_epoch) {
  const Config& cfg = model.config;
  check_panel(model, panel);
  if (train_end > panel.T || validation_end > panel.T || validation_end < train_end)
    throw DataError("train: split boundaries out of range");
  if (train_end < cfg.window + cfg.horizon) throw DataError("train: training range shorter than window + horizon");

  ParamStore& params = model.members.at(member);
  const SeriesPanel train_panel = panel.slice_time(0, train_end);
  const SeriesPanel validation_panel = panel.slice_time(0, validation_end);
  const bool has_validation = validation_end >= train_end + cfg.horizon && validation_end > train_end;
  std::map<std::string, AdamSlot> slots;
  std::mt19937_64 rng(cfg.seed + member);

  TrainLog log;
  ParamStore best = params;
  double best_validation = INFINITY;
  std::vector<std::size_t> order(panel.n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const std::size_t batch_size = std::min(cfg.batch_size(epoch), panel.n);
    const double lr = cfg.learning_rate(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    LossTotals totals;
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), begin + batch_size)));
      std::sort(batch.begin(), batch.end());
      Engine engine(model, train_panel, batch, {0, train_end, 0, 0});
      try {
        sweep(engine, engine.horizon_end(), cfg.tbptt, nullptr,
              [&](Tape& tape, StoreBinder& binder, const Engine::ChunkResult& r) {
                if (r.windows == 0) return;
                const double value = r.loss.value();
                check_finite_loss(value, epoch);
                totals.sum += value * static_cast<double>(r.windows);
                totals.windows += r.windows;
                const Gradients grads = tape.backward(r.loss);
                for (const auto& [name, var] : binder.bound()) adam_step(params.at(name), slots[name], grads[var], lr);
              },
              params);
      } catch (const NumericError& e) {
        throw DivergenceError("training diverged in epoch " + std::to_string(epoch) + ": " + e.what());
      } catch (const DomainError& e) {
        throw DivergenceError("training diverged in epoch " + std::to_string(epoch) + ": " + e.what());
      }
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.batch_size = batch_size;
    entry.learning_rate = lr;
    entry.windows = totals.windows;
    entry.train_loss = totals.windows ? totals.sum / static_cast<double>(totals.windows) : std::nan("");
    entry.validation_loss =
        has_validation ? evaluate_loss(model, member, validation_panel, train_end, validation_end) : std::nan("");
    if (has_validation) check_finite_loss(entry.validation_loss, epoch);
    entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (!has_validation || entry.validation_loss < best_validation) {
      best_validation = has_validation ? entry.validation_loss : best_validation;
      best = params;
      log.best_epoch = epoch;
    }
    log.epochs.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  if (cfg.keep_best) params = best;
  else log.best_epoch = cfg.epochs;
  return log;
}

std::vector<TrainLog> train(Model& model, const SeriesPanel& panel, std::size_t train_end,
                            std::size_t validation_end, const EpochCallback& on_epoch) {
  std::vector<TrainLog> logs;
  for (std::size_t m = 0; m < model.members.size(); ++m)
    logs.push_back(train_member(model, m, panel, train_end, validation_end, on_epoch));
  return logs;
}

std::vector<Forecast> predict_member(const Model& model, std::size_t member, const SeriesPanel& panel,
                                     std::size_t begin, std::size_t end) {
  const Config& cfg = model.config;
  if (begin < cfg.window) throw DataError("predict: anchor leaves less than one input window of history");
  if (end > panel.T + 1 || begin >= end) throw DataError("predict: anchor range out of bounds");
  std::vector<std::size_t> all(panel.n);
  std::iota(all.begin(), all.end(), 0);
  Engine engine(model, panel, all, {0, 0, begin, end});
  std::vector<Forecast> out;
  sweep(engine, end, cfg.tbptt, &out, [](Tape&, StoreBinder&, const Engine::ChunkResult&) {}, model.members.at(member));
  return out;
}

std::vector<Forecast> combine_members(const std::vector<std::vector<Forecast>>& members) {
  if (members.empty()) throw ShapeError("combine_members: no members");
  std::vector<Forecast> out = members.front();
  const double count = static_cast<double>(members.size());
  for (std::size_t m = 1; m < members.size(); ++m) {
    if (members[m].size() != out.size()) throw ShapeError("combine_members: members disagree in size");
    for (std::size_t i = 0; i < out.size(); ++i)
      for (std::size_t k = 0; k < out[i].median.size(); ++k) {
        out[i].median[k] += members[m][i].median[k];
        out[i].lower[k] = std::min(out[i].lower[k], members[m][i].lower[k]);
        out[i].upper[k] = std::max(out[i].upper[k], members[m][i].upper[k]);
      }
  }
  if (members.size() > 1)
    for (auto& f : out)
      for (double& v : f.median) v /= count;
  return out;
}

std::vector<Forecast> predict(const Model& model, const SeriesPanel& panel, std::size_t begin, std::size_t end) {
  std::vector<std::vector<Forecast>> members;
  for (std::size_t m = 0; m < model.members.size(); ++m) members.push_back(predict_member(model, m, panel, begin, end));
  return combine_members(members);
}

}  // namespace ctxrnn
