#include <cmath>
#include <set>
#include <sstream>

#include "ctxrnn/errors.hpp"
#include "ctxrnn/panel.hpp"
#include "ctxrnn/preprocess.hpp"
#include "ctxrnn/synth.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace ctxrnn;

namespace {

SeriesPanel parse(const std::string& text) {
  std::istringstream in(text);
  return parse_panel_csv(in);
}

}  // namespace

TEST_CASE("load_panel shape, mask and positivity shift") {
  const auto p = parse(
      "time,a,b\n2015-06-01T00:00:00,1,2\n2015-06-01T01:00:00,3,\n2015-06-01T02:00:00,5,6\n"
      "2015-06-01T03:00:00,7,8\n2015-06-01T04:00:00,9,10\n");
  CHECK(p.n == 2);
  CHECK(p.T == 5);
  CHECK(p.names == std::vector<std::string>{"a", "b"});
  CHECK(p.step_seconds == 3600);
  CHECK(p.shift == 0.0);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t t = 0; t < 5; ++t) CHECK(p.observed(i, t) == !(i == 1 && t == 1));

  const auto z = parse("0,0,4\n1,2,5\n2,3,6\n");
  CHECK(z.integer_index);
  CHECK(z.shift == doctest::Approx(1.0 + 1e-6));
  for (double v : z.values) CHECK(v >= 1e-6);

  std::ostringstream out;
  write_panel_csv(out, z);
  const auto back = parse(out.str());
  for (std::size_t k = 0; k < z.values.size(); ++k) CHECK(back.values[k] == doctest::Approx(z.values[k]).epsilon(1e-15));
}

TEST_CASE("load_panel data errors") {
  CHECK_THROWS_AS(parse("t,a\n0,1\n1,2,3\n"), DataError);
  CHECK_THROWS_AS(parse("t,a\n2,1\n1,2\n"), DataError);
  CHECK_THROWS_AS(parse("t\n0\n1\n"), DataError);
  CHECK_THROWS_AS(parse("t,a\n0,1\n1,2\n3,4\n"), DataError);
  CHECK_THROWS_AS(parse("t,a\n0,x\n"), DataError);
}

TEST_CASE("iso timestamps round-trip through formatting") {
  const auto ts = parse_iso8601("2015-06-01T13:45:00");
  REQUIRE(ts.has_value());
  SeriesPanel p;
  CHECK(format_timestamp(p, *ts) == "2015-06-01T13:45:00");
  CHECK(parse_iso8601("2015-06-01 13:45") == ts);
  CHECK(parse_iso8601("2015-02-30") == std::nullopt);
  CHECK(parse_iso8601("hello") == std::nullopt);
}

TEST_CASE("split is a chronological 60/20/20 partition") {
  for (std::size_t T : {10, 100, 137}) {
    std::vector<double> row(T);
    for (std::size_t t = 0; t < T; ++t) row[t] = 1.0 + static_cast<double>(t);
    const auto s = split(make_panel({row, row}));
    CHECK(s.train.T == T * 6 / 10);
    CHECK(s.validation.T == T * 8 / 10 - T * 6 / 10);
    CHECK(s.train.T + s.validation.T + s.test.T == T);
    std::vector<double> joined;
    for (const auto* part : {&s.train, &s.validation, &s.test})
      for (std::size_t t = 0; t < part->T; ++t) joined.push_back(part->value(0, t));
    CHECK(joined == row);
  }
  const auto s100 = split(make_panel({std::vector<double>(100, 1.0)}));
  CHECK(s100.train.T == 60);
  CHECK(s100.validation.T == 20);
  CHECK(s100.test.T == 20);
  CHECK_THROWS_AS(split(make_panel({std::vector<double>(9, 1.0)})), DataError);
}

TEST_CASE("preprocess / postprocess closed forms and roundtrip") {
  CHECK(preprocess_window(std::vector<double>{6.0, 3.0}, 3.0, std::vector<double>{2.0, 1.0}) ==
        std::vector<double>{0.0, 0.0});
  CHECK(preprocess_window(std::vector<double>{4.0}, 2.0, std::vector<double>{1.0})[0] ==
        doctest::Approx(0.6931471805599453));
  CHECK(normalize_output(std::vector<double>{3.0, 6.0}, 2.0) == std::vector<double>{1.5, 3.0});
  CHECK(normalize_output(std::vector<double>{0.0}, 2.0)[0] == 0.0);
  CHECK_THROWS_AS(normalize_output(std::vector<double>{1.0}, 0.0), DomainError);
  CHECK(postprocess(std::vector<double>{std::log(2.0)}, 5.0, std::vector<double>{1.1})[0] ==
        doctest::Approx(11.0).epsilon(1e-14));
  CHECK(postprocess(std::vector<double>{0.0}, 7.0, std::vector<double>{1.0})[0] == 7.0);
  CHECK_THROWS_AS(postprocess(std::vector<double>{701.0}, 1.0, std::vector<double>{1.0}), NumericError);
  CHECK_THROWS_AS(preprocess_window(std::vector<double>{-1.0}, 1.0, std::vector<double>{1.0}), DomainError);

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto z = testutil::random_vector(rng, 12, 0.1, 50.0);
    const auto s = testutil::random_vector(rng, 12, 0.5, 1.5);
    const double z_bar = testutil::random_vector(rng, 1, 1.0, 20.0)[0];
    const auto x = preprocess_window(z, z_bar, s);
    const auto back = postprocess(x, z_bar, s);
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(back[i] - z[i]) <= 1e-12 * z[i]);
    const auto again = preprocess_window(back, z_bar, s);
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(again[i] - x[i]) <= 1e-12);
  }
}

TEST_CASE("make_window fills missing inputs neutrally and skips sparse windows") {
  auto p = make_panel({{2, 4, 6, 8, 10, 12}});
  p.mask[1] = 0;
  const std::vector<double> seasonal(6, 1.0);
  const auto w = make_window(p, 0, 4, 4, 2, seasonal);
  REQUIRE(w.has_value());
  CHECK(w->z_bar == doctest::Approx((2.0 + 6.0 + 8.0) / 3.0));
  CHECK(w->input[1] == 0.0);
  CHECK(w->input[0] == doctest::Approx(std::log(2.0 / w->z_bar)));
  CHECK(w->target[0] == doctest::Approx(10.0 / w->z_bar));
  p.mask[0] = p.mask[2] = 0;
  CHECK_FALSE(make_window(p, 0, 4, 4, 2, seasonal).has_value());
}

TEST_CASE("calendar features") {
  const auto monday = *parse_iso8601("2015-06-01T00:00:00");
  const auto idx = calendar_indices(monday);
  CHECK(idx == std::array<std::size_t, 4>{0, 24, 31, 62 + 5});
  const auto f = calendar_features(monday);
  CHECK(f.size() == 74);
  double total = 0;
  for (double v : f) total += v;
  CHECK(total == 4.0);
  const auto next_day = calendar_indices(monday + 24 * 3600);
  CHECK(next_day[2] == idx[2] + 1);
  CHECK(next_day[1] == idx[1] + 1);
  CHECK(calendar_indices(monday + 5 * 60)[0] == 0);
  CHECK(calendar_indices(*parse_iso8601("2016-12-31T23:00:00")) == std::array<std::size_t, 4>{23, 24 + 5, 31 + 30, 73});

  std::set<std::vector<double>> seen;
  const auto june = *parse_iso8601("2015-06-01T00:00:00");
  for (std::int64_t h = 0; h < 30 * 24; ++h) seen.insert(calendar_features(june + h * 3600));
  CHECK(seen.size() == 30 * 24);
}

TEST_CASE("synthetic generator") {
  SynthSpec spec;
  spec.n = 3;
  spec.T = 300;
  spec.noise = 0.0;
  spec.couplings = {{0, 1, 1.0, 1}, {0, 2, 0.7, 3}};
  const auto a = synth_generate(spec, 3);
  const auto b = synth_generate(spec, 3);
  CHECK(a.values == b.values);
  CHECK(synth_generate(spec, 4).values != a.values);
  for (double v : a.values) CHECK(v >= 1.0);

  // With σ = 0 the residual after removing the lagged driver is exactly the
  // target's own deterministic sinusoid plus a constant shift.
  for (const auto& c : spec.couplings) {
    std::vector<double> r;
    for (std::size_t t = c.lag; t < spec.T; ++t)
      r.push_back(a.value(c.target, t) - c.coefficient * a.value(0, t - c.lag));
    for (std::size_t k = spec.period; k < r.size(); ++k) CHECK(r[k] == doctest::Approx(r[k - spec.period]).epsilon(1e-9));
  }

  spec.couplings = {{0, 1, 1.0, 1}, {1, 2, 1.0, 1}};
  CHECK_THROWS_AS(synth_generate(spec, 1), ShapeError);
  const auto edges = parse_couplings("0>1:0.5;0>2:1.5@3", 2);
  REQUIRE(edges.size() == 2);
  CHECK(edges[0].lag == 2);
  CHECK(edges[1].lag == 3);
  CHECK(edges[1].coefficient == 1.5);
  CHECK(parse_couplings(format_couplings(edges), 9)[1].lag == 3);
  CHECK_THROWS_AS(parse_couplings("0-1", 1), DataError);
}
