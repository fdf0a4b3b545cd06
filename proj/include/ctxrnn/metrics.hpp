#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "ctxrnn/forecaster.hpp"
#include "ctxrnn/panel.hpp"
#include "ctxrnn/tensor.hpp"

namespace ctxrnn {

/// One row of (predicted, actual) cells per series. Rows may differ in
/// length (unobserved actuals are dropped before scoring).
using SeriesRows = std::vector<std::vector<double>>;

/// √Σ(y − ŷ)² / √Σ(y − ȳ)² over every cell, ȳ the mean of all actual cells.
/// Throws DomainError when the actuals are constant.
double rse(const SeriesRows& predicted, const SeriesRows& actual);
double rse(const Tensor& predicted, const Tensor& actual);

struct CorrResult {
  double value = 0.0;
  std::size_t skipped = 0;  ///< series with constant actuals or predictions
};

/// Mean over series of the Pearson correlation between prediction and
/// actual. Throws DataError when every series is skipped.
CorrResult corr(const SeriesRows& predicted, const SeriesRows& actual);
CorrResult corr(const Tensor& predicted, const Tensor& actual);

struct HorizonScore {
  double rse = 0.0;
  double corr = 0.0;

  friend bool operator==(const HorizonScore&, const HorizonScore&) = default;
};

struct EvalReport {
  double rse = 0.0;
  double corr = 0.0;
  std::size_t corr_skipped = 0;
  std::map<std::size_t, HorizonScore> per_horizon;  ///< 1-based horizon step
  std::size_t anchors = 0;
  std::size_t cells = 0;
  double runtime_seconds = 0.0;
  std::map<std::string, std::string> config;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);

/// Scores median forecasts against the panel's observed values.
EvalReport score_forecasts(const SeriesPanel& panel, const std::vector<Forecast>& forecasts);

/// Forecasts every anchor in [begin, T − fh] and scores them. The default
/// range starts at the validation boundary of the standard split.
EvalReport evaluate(const Model& model, const SeriesPanel& panel, std::size_t begin);
EvalReport evaluate(const Model& model, const SeriesPanel& panel);

/// CSV with columns timestamp,series,median,lower,upper,anchor,step; one
/// row per forecast step, `anchor` being the first forecast timestamp.
void write_forecast_csv(std::ostream& out, const SeriesPanel& panel, const std::vector<Forecast>& forecasts);

}  // namespace ctxrnn
