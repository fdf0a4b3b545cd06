#include "ctxrnn/preprocess.hpp"

#include <chrono>
#include <cmath>

#include "ctxrnn/errors.hpp"

namespace ctxrnn {

namespace {

void require_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": length mismatch");
}

}  // namespace

std::vector<double> preprocess_window(std::span<const double> z, double z_bar, std::span<const double> seasonal) {
  require_same(z.size(), seasonal.size(), "preprocess_window");
  std::vector<double> x(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double ratio = z[i] / (z_bar * seasonal[i]);
    if (!(ratio > 0.0) || !std::isfinite(ratio)) throw DomainError("preprocess_window: non-positive log argument");
    x[i] = std::log(ratio);
  }
  return x;
}

std::vector<double> normalize_output(std::span<const double> z, double z_bar) {
  if (!(z_bar > 0.0)) throw DomainError("normalize_output: z_bar must be positive");
  std::vector<double> x(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) x[i] = z[i] / z_bar;
  return x;
}

std::vector<double> postprocess(std::span<const double> x_hat, double z_bar, std::span<const double> seasonal) {
  require_same(x_hat.size(), seasonal.size(), "postprocess");
  std::vector<double> z(x_hat.size());
  for (std::size_t i = 0; i < x_hat.size(); ++i) {
    if (!std::isfinite(x_hat[i]) || std::abs(x_hat[i]) > 700.0) throw NumericError("postprocess: x_hat overflow");
    z[i] = std::exp(x_hat[i]) * z_bar * seasonal[i];
  }
  return z;
}

WindowStats window_stats(const SeriesPanel& panel, std::size_t series, std::size_t begin, std::size_t W) {
  WindowStats s;
  double total = 0.0;
  for (std::size_t t = begin; t < begin + W; ++t)
    if (panel.observed(series, t)) {
      total += panel.value(series, t);
      ++s.observed;
    }
  if (s.observed > 0) s.z_bar = total / static_cast<double>(s.observed);
  s.skip = 2 * s.observed < W;
  return s;
}

std::optional<WindowPair> make_window(const SeriesPanel& panel, std::size_t series, std::size_t t, std::size_t W,
                                      std::size_t fh, std::span<const double> seasonal) {
  if (t < W || t + fh > panel.T) throw ShapeError("make_window: anchor leaves no room for the windows");
  require_same(seasonal.size(), W + fh, "make_window");
  const WindowStats stats = window_stats(panel, series, t - W, W);
  if (stats.skip) return std::nullopt;
  WindowPair w;
  w.series_id = series;
  w.t = t;
  w.z_bar = stats.z_bar;
  w.seasonal_factors.assign(seasonal.begin(), seasonal.end());
  w.input.resize(W);
  for (std::size_t k = 0; k < W; ++k) {
    const std::size_t tau = t - W + k;
    w.input[k] = panel.observed(series, tau) ? std::log(panel.value(series, tau) / (w.z_bar * seasonal[k])) : 0.0;
  }
  w.target.resize(fh);
  w.target_mask.resize(fh);
  for (std::size_t k = 0; k < fh; ++k) {
    const bool obs = panel.observed(series, t + k);
    w.target_mask[k] = obs;
    w.target[k] = obs ? panel.value(series, t + k) / w.z_bar : 0.0;
  }
  return w;
}

std::array<std::size_t, 4> calendar_indices(std::int64_t timestamp) {
  using namespace std::chrono;
  const sys_seconds tp{seconds(timestamp)};
  const auto day_point = floor<days>(tp);
  const year_month_day ymd{day_point};
  const auto hour = duration_cast<hours>(tp - day_point).count();
  const unsigned dow = weekday{day_point}.iso_encoding() - 1;
  return {kCalendarOffsets[0] + static_cast<std::size_t>(hour), kCalendarOffsets[1] + dow,
          kCalendarOffsets[2] + static_cast<unsigned>(ymd.day()) - 1,
          kCalendarOffsets[3] + static_cast<unsigned>(ymd.month()) - 1};
}

std::vector<double> calendar_features(std::int64_t timestamp) {
  std::vector<double> v(kCalendarDims, 0.0);
  for (std::size_t i : calendar_indices(timestamp)) v[i] = 1.0;
  return v;
}

}  // namespace ctxrnn
