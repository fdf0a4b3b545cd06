#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ctxrnn {

/// N×T panel of series values on a regular time grid. Values are stored
/// series-major; `mask` is true where the cell was observed. Unobserved
/// cells hold 0 and must not be read.
struct SeriesPanel {
  std::vector<std::string> names;
  std::size_t n = 0;
  std::size_t T = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> mask;
  /// Seconds since the Unix epoch, naive local time.
  std::vector<std::int64_t> timestamps;
  std::int64_t step_seconds = 3600;
  /// True when the source used an integer index (one hour per unit).
  bool integer_index = false;
  /// Constant added to every value at load time to make the panel positive.
  double shift = 0.0;

  double value(std::size_t series, std::size_t t) const { return values[series * T + t]; }
  bool observed(std::size_t series, std::size_t t) const { return mask[series * T + t] != 0; }
  std::span<const double> row(std::size_t series) const { return {values.data() + series * T, T}; }
  std::span<const std::uint8_t> row_mask(std::size_t series) const { return {mask.data() + series * T, T}; }

  /// Timesteps [begin, end) of every series.
  SeriesPanel slice_time(std::size_t begin, std::size_t end) const;
  /// Throws ShapeError on any violated invariant.
  void validate() const;
  std::size_t index_of(const std::string& name) const;
};

SeriesPanel make_panel(std::vector<std::vector<double>> rows, std::int64_t start = 0,
                       std::int64_t step_seconds = 3600);

/// Parses CSV text: first column is an ISO-8601 timestamp or an integer
/// index, the rest one series each. A header row is detected when its first
/// cell is not a timestamp. Empty cells are missing. When the minimum
/// observed value is ≤ 0 every value is shifted by 1 − min + 1e−6.
/// Throws DataError on malformed input.
SeriesPanel parse_panel_csv(std::istream& in);
SeriesPanel load_panel(const std::string& path);

/// Writes values with the load shift removed, in the same CSV dialect.
void write_panel_csv(std::ostream& out, const SeriesPanel& panel);
void save_panel(const std::string& path, const SeriesPanel& panel);

std::string format_timestamp(const SeriesPanel& panel, std::int64_t ts);
std::optional<std::int64_t> parse_iso8601(const std::string& text);

struct PanelSplit {
  SeriesPanel train, validation, test;
  std::size_t train_end = 0, validation_end = 0;
};

/// Chronological 60/20/20 split at ⌊0.6T⌋ and ⌊0.8T⌋. Needs T ≥ 10.
PanelSplit split(const SeriesPanel& panel);
/// Boundaries only, for callers that keep the full panel as history.
std::pair<std::size_t, std::size_t> split_bounds(std::size_t T);

}  // namespace ctxrnn
