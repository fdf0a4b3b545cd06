#include <cmath>
#include <random>
#include <sstream>

#include "ctxrnn/errors.hpp"
#include "ctxrnn/forecaster.hpp"
#include "ctxrnn/metrics.hpp"
#include "ctxrnn/preprocess.hpp"
#include "doctest.h"
#include "model_fixtures.hpp"
#include "test_util.hpp"

using namespace ctxrnn;

TEST_CASE("pinball") {
  CHECK(pinball(3.0, 3.0, 0.3) == 0.0);
  CHECK(pinball(2.0, 1.0, 0.5) == 0.5);
  CHECK(pinball(0.0, 1.0, 0.9) == doctest::Approx((1.0 - 0.9) * 1.0).epsilon(1e-15));
  CHECK(pinball(5.0, 1.0, 0.25) == 1.0);
  CHECK_THROWS_AS(pinball(1.0, 2.0, 0.0), DomainError);
  CHECK_THROWS_AS(pinball(1.0, 2.0, 1.0), DomainError);
}

TEST_CASE("total loss") {
  const std::vector<double> one = {1.0}, lo = {0.5}, hi = {2.0};
  CHECK(total_loss(one, one, lo, hi, 0.4) == doctest::Approx(0.4 * (0.025 * 0.5 + 0.025 * 1.0)).epsilon(1e-14));
  CHECK(total_loss(one, one, lo, hi, 0.4) == doctest::Approx(0.015).epsilon(1e-12));

  std::mt19937_64 rng(4);
  const auto a = testutil::random_vector(rng, 6), m = testutil::random_vector(rng, 6);
  const auto l = testutil::random_vector(rng, 6), u = testutil::random_vector(rng, 6);
  double median_only = 0.0;
  for (std::size_t i = 0; i < 6; ++i) median_only += pinball(a[i], m[i], 0.48);
  CHECK(total_loss(a, m, l, u, 0.0) == doctest::Approx(median_only / 6).epsilon(1e-14));
  CHECK(total_loss(a, a, a, a, 0.4) == 0.0);
  CHECK(total_loss(a, m, l, u, 0.4) > 0.0);
  CHECK_THROWS_AS(total_loss(a, m, l, std::vector<double>(5), 0.4), ShapeError);

  Tape tape;
  auto v = [&](const std::vector<double>& x) { return tape.constant(Shape::vector(x.size()), x); };
  const Quantiles q;
  CHECK(total_loss(v(a), v(m), v(l), v(u), 0.4, q).value() == doctest::Approx(total_loss(a, m, l, u, 0.4)).epsilon(1e-14));

  // Masked positions drop out of both numerator and count.
  const std::vector<double> mask = {1, 0, 1, 1, 0, 1};
  std::vector<double> ka, km, kl, ku;
  for (std::size_t i = 0; i < 6; ++i)
    if (mask[i] == 1.0) ka.push_back(a[i]), km.push_back(m[i]), kl.push_back(l[i]), ku.push_back(u[i]);
  CHECK(total_loss(v(a), v(m), v(l), v(u), 0.4, q, v(mask)).value() ==
        doctest::Approx(total_loss(ka, km, kl, ku, 0.4)).epsilon(1e-14));
}

TEST_CASE("adam") {
  Tensor p = Tensor::vector({1.0, -2.0});
  AdamSlot slot;
  adam_step(p, slot, std::vector<double>{0.0, 0.0}, 0.1);
  CHECK(p.values == std::vector<double>{1.0, -2.0});

  AdamSlot frozen;
  adam_step(p, frozen, std::vector<double>{0.5, -3.0}, 0.0);
  CHECK(p.values == std::vector<double>{1.0, -2.0});
  CHECK(frozen.step == 1);

  // Scalar reference recursion.
  const double lr = 0.01, g = 0.3;
  double m = 0.0, v = 0.0, x = 0.0;
  Tensor t = Tensor::vector({0.0});
  AdamSlot s;
  double last_step = 0.0;
  for (int k = 1; k <= 500; ++k) {
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, k)), vh = v / (1 - std::pow(0.999, k));
    x -= lr * mh / (std::sqrt(vh) + 1e-8);
    const double before = t[0];
    adam_step(t, s, std::vector<double>{g}, lr);
    last_step = before - t[0];
  }
  CHECK(t[0] == doctest::Approx(x).epsilon(1e-12));
  CHECK(last_step == doctest::Approx(lr * g / (g + 1e-8)).epsilon(1e-9));
  CHECK(last_step == doctest::Approx(lr).epsilon(1e-6));

  CHECK_THROWS_AS(adam_step(t, s, std::vector<double>{1.0, 2.0}, lr), ShapeError);
}

TEST_CASE("assemble_input") {
  Tape tape;
  std::mt19937_64 rng(1);
  const std::size_t W = 6, p = 4, emb = 8, uK = 4;
  const Var x = tape.constant(Shape::vector(W), testutil::random_vector(rng, W));
  const Var s = tape.constant(Shape::vector(p), testutil::random_vector(rng, p, 0.5, 1.5));
  const Var e = tape.constant(Shape::vector(emb), testutil::random_vector(rng, emb));
  const Var r = tape.constant(Shape::vector(uK), testutil::random_vector(rng, uK));
  const Var in = assemble_input(x, s, 100.0, e, r);
  CHECK(in.size() == W + p + 1 + emb + uK);
  CHECK(in.value(W + p) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(in.value(0) == x.value(0));
  CHECK(in.value(W) == s.value(0));
  CHECK(in.value(W + p + 1) == e.value(0));
  CHECK(in.value(W + p + 1 + emb) == r.value(0));
  CHECK(assemble_input(x, s, 100.0, e).size() == W + p + 1 + emb);
  CHECK_THROWS_AS(assemble_input(x, Var{}, 100.0, e), ShapeError);

  // Reordering the parts changes what a random stack produces.
  const std::size_t width = in.size();
  const DRNNCellShape bottom{width, width, 5, 1}, top{width, 0, 5, 1};
  auto cell = [&](const DRNNCellShape& sh) {
    const std::size_t rows = 4 * sh.state();
    return DRNNCellParams{sh, tape.constant(testutil::random_tensor(rng, Shape::matrix(rows, width))),
                          tape.constant(testutil::random_tensor(rng, Shape::matrix(rows, sh.s_h))),
                          tape.constant(testutil::random_tensor(rng, Shape::matrix(rows, sh.s_h))),
                          tape.constant(testutil::random_tensor(rng, Shape::vector(rows)))};
  };
  const std::vector<WdrnnLayer> layers = {{cell(bottom), cell(top)}};
  auto run = [&](Var input) {
    StackHistory h{{bind_memory(tape, zero_memory(bottom))}, {bind_memory(tape, zero_memory(top))}};
    const Var y = stack_forward(input, h, layers);
    return std::vector<double>(y.values().begin(), y.values().end());
  };
  const std::vector<Var> permuted = {e, x, r, tape.scalar(2.0), s};
  CHECK(run(in) != run(concat(permuted)));
}

namespace {

std::size_t cell_count(std::size_t in, std::size_t s_m, std::size_t s_h) { return 4 * (s_m + s_h) * (in + 2 * s_h + 1); }

std::size_t expected_scalars(const Config& c, std::size_t n) {
  std::size_t in = c.window + c.period + 1 + c.embedding;
  const std::size_t uK = c.context_size * c.context_batch;
  if (c.variant != Variant::no_context) in += uK;
  std::size_t total = 0;
  for (std::size_t l = 0; l < c.dilations.size(); ++l) {
    total += cell_count(in, in, c.hidden) + cell_count(in, 0, c.hidden);
    in = c.hidden;
  }
  total += kCalendarDims * c.embedding + (3 * c.horizon + 2) * (c.hidden + 1) + 2 * n;
  if (c.variant != Variant::no_context) {
    const std::size_t C = c.conv_channels, k = c.conv_kernel;
    total += 5 * k + 2 * 5 * C + C + C * k + C * C + C + (c.context_size + 2) * (C * c.window + 1);
    total += 2 * c.context_batch;
  }
  if (c.variant == Variant::full) total += n * uK;
  return total;
}

}  // namespace

TEST_CASE("parameter counts follow the variant wiring") {
  const std::size_t n = 5;
  std::size_t counts[3];
  int i = 0;
  for (Variant v : {Variant::full, Variant::global_only, Variant::no_context}) {
    const Config c = fixtures::tiny_config(v);
    const ParamStore store = init_params(c, n, 1);
    CHECK(store.scalar_count() == expected_scalars(c, n));
    counts[i++] = store.scalar_count();
  }
  CHECK(counts[0] > counts[1]);
  CHECK(counts[1] > counts[2]);
  const ParamStore full = init_params(fixtures::tiny_config(), n, 1);
  for (std::size_t j = 0; j < n; ++j)
    for (double g : full.at(param_names::modulation(j)).values) CHECK(g == 1.0);
  CHECK(!init_params(fixtures::tiny_config(Variant::global_only), n, 1).contains(param_names::modulation(0)));
  CHECK(!init_params(fixtures::tiny_config(Variant::no_context), n, 1).contains("ctx.reduce"));
}

TEST_CASE("full tiny model gradients") {
  const SeriesPanel panel = fixtures::tiny_panel(2, 40, 2);
  const Model model = make_model(fixtures::tiny_config(), panel.names, {0, 1});
  auto fn = [&](Tape& tape, std::span<const Var> vars) { return fixtures::model_loss(tape, vars, model, panel, 10); };
  CHECK(grad_check(fn, fixtures::tensors(model.members[0]), 1e-5, 1e-6) <= 1e-4);
}

TEST_CASE("one optimizer step lowers the loss on a frozen batch") {
  const SeriesPanel panel = fixtures::tiny_panel(3, 40, 5);
  Model model = make_model(fixtures::tiny_config(), panel.names, {0, 1});
  const auto base = fixtures::tensors(model.members[0]);
  auto loss_at = [&](const std::vector<Tensor>& ts) {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : ts) vars.push_back(tape.param(t));
    return fixtures::model_loss(tape, vars, model, panel, 20).value();
  };
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : base) vars.push_back(tape.param(t));
  const Var loss = fixtures::model_loss(tape, vars, model, panel, 20);
  const Gradients grads = tape.backward(loss);
  bool decreased = false;
  for (double lr : {1e-2, 1e-3, 1e-4}) {
    std::vector<Tensor> stepped = base;
    for (std::size_t i = 0; i < stepped.size(); ++i) {
      AdamSlot slot;
      adam_step(stepped[i], slot, grads[vars[i]], lr);
    }
    decreased = decreased || loss_at(stepped) < loss.value();
  }
  CHECK(decreased);
}

TEST_CASE("training log, schedules and validation") {
  const SeriesPanel panel = fixtures::tiny_panel(3, 80, 8);
  Config c = fixtures::tiny_config();
  Model model = make_model(c, panel.names, {0, 1});
  std::vector<EpochLog> seen;
  const auto logs = train(model, panel, 48, 64, [&](const EpochLog& e) { seen.push_back(e); });
  REQUIRE(logs.size() == 1);
  const TrainLog& log = logs.front();
  REQUIRE(log.epochs.size() == 11);
  CHECK(seen.size() == 11);
  std::vector<std::size_t> sizes;
  for (const auto& e : log.epochs) {
    sizes.push_back(e.batch_size);
    CHECK(std::isfinite(e.train_loss));
    CHECK(std::isfinite(e.validation_loss));
    CHECK(e.windows > 0);
  }
  CHECK(sizes == std::vector<std::size_t>{2, 2, 2, 3, 3, 3, 3, 3, 3, 3, 3});
  CHECK(log.epochs[8].learning_rate == 1e-3);
  CHECK(log.best_epoch >= 1);
  CHECK(log.best_epoch <= 11);
  double best = INFINITY;
  for (const auto& e : log.epochs) best = std::min(best, e.validation_loss);
  CHECK(log.epochs[log.best_epoch - 1].validation_loss == best);
  CHECK(evaluate_loss(model, 0, panel.slice_time(0, 64), 48, 64) == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("training is deterministic") {
  const SeriesPanel panel = fixtures::tiny_panel(3, 60, 9);
  Config c = fixtures::tiny_config();
  c.epochs = 3;
  auto run = [&] {
    Model m = make_model(c, panel.names, {1, 2});
    train(m, panel, 36, 48);
    std::ostringstream csv;
    write_forecast_csv(csv, panel, predict(m, panel, 48, 59));
    return std::pair{m.members[0], csv.str()};
  };
  const auto [a, fa] = run();
  const auto [b, fb] = run();
  CHECK(a == b);
  CHECK(fa == fb);
}

TEST_CASE("divergence is reported") {
  const SeriesPanel panel = fixtures::tiny_panel(3, 60, 9);
  Config c = fixtures::tiny_config();
  c.epochs = 2;
  c.lr_schedule = {{1, 1e300}};
  Model m = make_model(c, panel.names, {1, 2});
  CHECK_THROWS_AS(train(m, panel, 36, 48), DivergenceError);
}

TEST_CASE("prediction") {
  const SeriesPanel panel = fixtures::tiny_panel(3, 60, 10);
  const Model model = make_model(fixtures::tiny_config(), panel.names, {0, 1});
  const auto f = predict(model, panel, 40, 61);
  CHECK(f.size() == 3 * 21);
  for (const Forecast& x : f) {
    CHECK(x.median.size() == 2);
    for (double v : x.median) CHECK(v > 0.0);
  }
  CHECK(f.back().t == 60);
  CHECK(predict(model, panel, 40, 61)[5].median == f[5].median);
  CHECK_THROWS_AS(predict(model, panel, 7, 20), DataError);
  CHECK_THROWS_AS(predict(model, panel, 40, 62), DataError);
}

TEST_CASE("forecasts at an anchor match a forward pass over the same prefix") {
  const SeriesPanel panel = fixtures::tiny_panel(3, 60, 10);
  const Model model = make_model(fixtures::tiny_config(), panel.names, {0, 1});
  const auto full = predict(model, panel, 30, 31);
  const auto prefix = predict(model, panel.slice_time(0, 30), 30, 31);
  REQUIRE(full.size() == prefix.size());
  for (std::size_t i = 0; i < full.size(); ++i) CHECK(full[i].median == prefix[i].median);
}

TEST_CASE("ensemble combination") {
  const SeriesPanel panel = fixtures::tiny_panel(3, 60, 11);
  Config c = fixtures::tiny_config();
  c.ensemble = 2;
  const Model model = make_model(c, panel.names, {0, 1});
  const auto a = predict_member(model, 0, panel, 40, 50);
  const auto b = predict_member(model, 1, panel, 40, 50);

  const auto single = combine_members({a});
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(single[i].median == a[i].median);
    CHECK(single[i].lower == a[i].lower);
  }
  const auto twin = combine_members({a, a});
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < 2; ++k) CHECK(twin[i].median[k] == doctest::Approx(a[i].median[k]).epsilon(1e-15));

  const auto both = predict(model, panel, 40, 50);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < 2; ++k) {
      CHECK(both[i].median[k] == doctest::Approx((a[i].median[k] + b[i].median[k]) / 2).epsilon(1e-14));
      const double width = both[i].upper[k] - both[i].lower[k];
      CHECK(width >= a[i].upper[k] - a[i].lower[k]);
      CHECK(width >= b[i].upper[k] - b[i].lower[k]);
    }
}

TEST_CASE("missing values are skipped") {
  SeriesPanel panel = fixtures::tiny_panel(3, 60, 12);
  for (std::size_t t : {3, 15, 16, 17, 33, 34})
    panel.mask[t] = 0;  // series 0
  const Model model = make_model(fixtures::tiny_config(), panel.names, {0, 1});
  const double loss = evaluate_loss(model, 0, panel, 10, 60);
  CHECK(std::isfinite(loss));
  for (const Forecast& f : predict(model, panel, 20, 40))
    for (double v : f.median) CHECK(std::isfinite(v));
}

TEST_CASE("training beats the untrained model on a noiseless panel") {
  SynthSpec spec;
  spec.n = 3;
  spec.T = 300;
  spec.period = 4;
  spec.noise = 0.0;
  spec.innovation = 0.0;
  const SeriesPanel panel = synth_generate(spec, 4);
  Config c = fixtures::tiny_config();
  c.epochs = 4;
  c.batch_schedule = {{1, 3}};
  c.lr_schedule = {{1, 1e-2}};
  Model model = make_model(c, panel.names, {0, 1});
  const double before = evaluate(model, panel).rse;
  const auto [train_end, validation_end] = split_bounds(panel.T);
  train(model, panel, train_end, validation_end);
  const double after = evaluate(model, panel).rse;
  MESSAGE("rse before " << before << " after " << after);
  CHECK(after < before);
}
