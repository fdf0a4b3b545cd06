#include "ctxrnn/metrics.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "json.hpp"

#include "ctxrnn/context_select.hpp"
#include "ctxrnn/errors.hpp"

namespace ctxrnn {

namespace {

void check_same_shape(const SeriesRows& a, const SeriesRows& b) {
  if (a.size() != b.size()) throw ShapeError("metrics: series count mismatch");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].size() != b[i].size()) throw ShapeError("metrics: row length mismatch");
}

SeriesRows to_rows(const Tensor& t) {
  if (t.shape.rank() != 2) throw ShapeError("metrics: expected a series×time matrix");
  SeriesRows rows(t.shape.rows());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < t.shape.cols(); ++j) rows[i].push_back(t.at(i, j));
  return rows;
}

bool constant(const std::vector<double>& v) {
  for (double x : v)
    if (x != v.front()) return false;
  return true;
}

}  // namespace

double rse(const SeriesRows& predicted, const SeriesRows& actual) {
  check_same_shape(predicted, actual);
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& row : actual)
    for (double y : row) {
      total += y;
      ++count;
    }
  if (count == 0) throw ShapeError("rse: no cells");
  const double mean = total / static_cast<double>(count);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i)
    for (std::size_t j = 0; j < actual[i].size(); ++j) {
      const double e = actual[i][j] - predicted[i][j];
      const double d = actual[i][j] - mean;
      num += e * e;
      den += d * d;
    }
  if (den == 0.0) throw DomainError("rse: actual values are constant");
  return std::sqrt(num) / std::sqrt(den);
}

double rse(const Tensor& predicted, const Tensor& actual) { return rse(to_rows(predicted), to_rows(actual)); }

CorrResult corr(const SeriesRows& predicted, const SeriesRows& actual) {
  check_same_shape(predicted, actual);
  CorrResult r;
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (actual[i].size() < 2 || constant(actual[i]) || constant(predicted[i])) {
      ++r.skipped;
      continue;
    }
    total += pearson(predicted[i], actual[i]);
    ++used;
  }
  if (used == 0) throw DataError("corr: every series is constant");
  r.value = total / static_cast<double>(used);
  return r;
}

CorrResult corr(const Tensor& predicted, const Tensor& actual) { return corr(to_rows(predicted), to_rows(actual)); }

std::string report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["rse"] = report.rse;
  j["corr"] = report.corr;
  j["corr_skipped"] = report.corr_skipped;
  j["anchors"] = report.anchors;
  j["cells"] = report.cells;
  j["runtime_seconds"] = report.runtime_seconds;
  auto& horizons = j["per_horizon"] = nlohmann::ordered_json::array();
  for (const auto& [h, s] : report.per_horizon) horizons.push_back({{"horizon", h}, {"rse", s.rse}, {"corr", s.corr}});
  j["config"] = report.config;
  return j.dump(2);
}

EvalReport report_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    EvalReport r;
    r.rse = j.at("rse").get<double>();
    r.corr = j.at("corr").get<double>();
    r.corr_skipped = j.at("corr_skipped").get<std::size_t>();
    r.anchors = j.at("anchors").get<std::size_t>();
    r.cells = j.at("cells").get<std::size_t>();
    r.runtime_seconds = j.at("runtime_seconds").get<double>();
    for (const auto& h : j.at("per_horizon"))
      r.per_horizon[h.at("horizon").get<std::size_t>()] = {h.at("rse").get<double>(), h.at("corr").get<double>()};
    r.config = j.at("config").get<std::map<std::string, std::string>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed evaluation report: ") + e.what());
  }
}

EvalReport score_forecasts(const SeriesPanel& panel, const std::vector<Forecast>& forecasts) {
  if (forecasts.empty()) throw DataError("evaluate: no forecasts to score");
  const std::size_t fh = forecasts.front().median.size();
  SeriesRows pred(panel.n), act(panel.n);
  std::vector<SeriesRows> hp(fh, SeriesRows(panel.n)), ha(fh, SeriesRows(panel.n));
  EvalReport report;
  std::size_t last_anchor = SIZE_MAX;
  for (const Forecast& f : forecasts) {
    if (f.t != last_anchor) {
      ++report.anchors;
      last_anchor = f.t;
    }
    for (std::size_t k = 0; k < fh && f.t + k < panel.T; ++k) {
      if (!panel.observed(f.series, f.t + k)) continue;
      const double y = panel.value(f.series, f.t + k) - panel.shift;
      pred[f.series].push_back(f.median[k]);
      act[f.series].push_back(y);
      hp[k][f.series].push_back(f.median[k]);
      ha[k][f.series].push_back(y);
      ++report.cells;
    }
  }
  report.rse = rse(pred, act);
  const CorrResult c = corr(pred, act);
  report.corr = c.value;
  report.corr_skipped = c.skipped;
  for (std::size_t k = 0; k < fh; ++k) {
    HorizonScore s;
    s.rse = rse(hp[k], ha[k]);
    try {
      s.corr = corr(hp[k], ha[k]).value;
    } catch (const DataError&) {
      s.corr = std::nan("");
    }
    report.per_horizon[k + 1] = s;
  }
  return report;
}

EvalReport evaluate(const Model& model, const SeriesPanel& panel, std::size_t begin) {
  const std::size_t fh = model.config.horizon;
  if (panel.T < fh || begin > panel.T - fh) throw DataError("evaluate: test range shorter than one horizon");
  const auto started = std::chrono::steady_clock::now();
  const auto forecasts = predict(model, panel, begin, panel.T - fh + 1);
  EvalReport report = score_forecasts(panel, forecasts);
  report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  for (const auto& key : config_keys()) report.config[key] = model.config.get(key);
  return report;
}

EvalReport evaluate(const Model& model, const SeriesPanel& panel) {
  return evaluate(model, panel, split_bounds(panel.T).second);
}

void write_forecast_csv(std::ostream& out, const SeriesPanel& panel, const std::vector<Forecast>& forecasts) {
  out << "timestamp,series,median,lower,upper,anchor,step\n";
  char buf[96];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const Forecast& f : forecasts) {
    const std::int64_t anchor_ts = f.t < panel.T ? panel.timestamps[f.t]
                                                 : panel.timestamps.back() +
                                                       static_cast<std::int64_t>(f.t - panel.T + 1) * panel.step_seconds;
    for (std::size_t k = 0; k < f.median.size(); ++k) {
      const std::int64_t ts = anchor_ts + static_cast<std::int64_t>(k) * panel.step_seconds;
      out << format_timestamp(panel, ts) << ',' << panel.names[f.series] << ',' << num(f.median[k]) << ','
          << num(f.lower[k]) << ',' << num(f.upper[k]) << ',' << format_timestamp(panel, anchor_ts) << ',' << (k + 1)
          << '\n';
    }
  }
}

}  // namespace ctxrnn
