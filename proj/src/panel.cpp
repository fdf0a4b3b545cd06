#include "ctxrnn/panel.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "ctxrnn/errors.hpp"

namespace ctxrnn {

namespace {

constexpr double kShiftEpsilon = 1e-6;

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (std::isspace(static_cast<unsigned char>(s[b])) || s[b] == '"')) ++b;
  while (e > b && (std::isspace(static_cast<unsigned char>(s[e - 1])) || s[e - 1] == '"')) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

std::optional<std::int64_t> parse_integer(const std::string& s) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) throw DataError("not a number: '" + s + "'");
  return v;
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::optional<std::int64_t> parse_iso8601(const std::string& text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep = 0;
  int consumed = 0;
  const int fields = std::sscanf(text.c_str(), "%4d-%2d-%2d%n", &y, &mo, &d, &consumed);
  if (fields != 3) return std::nullopt;
  std::size_t pos = static_cast<std::size_t>(consumed);
  if (pos < text.size()) {
    sep = text[pos];
    if (sep != 'T' && sep != ' ') return std::nullopt;
    int tail = 0;
    const std::string rest = text.substr(pos + 1);
    const int tf = std::sscanf(rest.c_str(), "%2d:%2d%n:%2d%n", &h, &mi, &tail, &s, &tail);
    if (tf < 2 || static_cast<std::size_t>(tail) != rest.size()) return std::nullopt;
    if (h > 23 || mi > 59 || s > 60) return std::nullopt;
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) return std::nullopt;
  const auto secs = sys_days(ymd).time_since_epoch() + hours(h) + minutes(mi) + seconds(s);
  return duration_cast<seconds>(secs).count();
}

std::string format_timestamp(const SeriesPanel& panel, std::int64_t ts) {
  if (panel.integer_index) return std::to_string(ts / 3600);
  using namespace std::chrono;
  const sys_seconds tp{seconds(ts)};
  const auto day_point = floor<days>(tp);
  const year_month_day ymd{day_point};
  const hh_mm_ss hms{tp - day_point};
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02ld", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<long>(hms.hours().count()), static_cast<long>(hms.minutes().count()),
                static_cast<long>(hms.seconds().count()));
  return buf;
}

SeriesPanel SeriesPanel::slice_time(std::size_t begin, std::size_t end) const {
  if (begin > end || end > T) throw ShapeError("slice_time out of range");
  SeriesPanel out;
  out.names = names;
  out.n = n;
  out.T = end - begin;
  out.step_seconds = step_seconds;
  out.integer_index = integer_index;
  out.shift = shift;
  out.timestamps.assign(timestamps.begin() + begin, timestamps.begin() + end);
  out.values.reserve(n * out.T);
  out.mask.reserve(n * out.T);
  for (std::size_t i = 0; i < n; ++i) {
    out.values.insert(out.values.end(), values.begin() + i * T + begin, values.begin() + i * T + end);
    out.mask.insert(out.mask.end(), mask.begin() + i * T + begin, mask.begin() + i * T + end);
  }
  return out;
}

void SeriesPanel::validate() const {
  if (values.size() != n * T || mask.size() != n * T || timestamps.size() != T || names.size() != n)
    throw ShapeError("panel arrays inconsistent with n×T");
  for (std::size_t t = 1; t < T; ++t)
    if (timestamps[t] - timestamps[t - 1] != step_seconds)
      throw DataError("timestamps must be strictly increasing and equally spaced");
}

std::size_t SeriesPanel::index_of(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw DataError("unknown series '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

SeriesPanel make_panel(std::vector<std::vector<double>> rows, std::int64_t start, std::int64_t step_seconds) {
  SeriesPanel p;
  p.n = rows.size();
  p.T = rows.empty() ? 0 : rows.front().size();
  p.step_seconds = step_seconds;
  for (std::size_t i = 0; i < p.n; ++i) {
    if (rows[i].size() != p.T) throw ShapeError("make_panel: ragged rows");
    p.names.push_back("s" + std::to_string(i));
    p.values.insert(p.values.end(), rows[i].begin(), rows[i].end());
  }
  p.mask.assign(p.n * p.T, 1);
  for (std::size_t t = 0; t < p.T; ++t) p.timestamps.push_back(start + static_cast<std::int64_t>(t) * step_seconds);
  return p;
}

SeriesPanel parse_panel_csv(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    rows.push_back(split_csv_line(line));
  }
  if (rows.empty()) throw DataError("empty CSV");

  auto parse_time = [](const std::string& cell, bool& integer) -> std::optional<std::int64_t> {
    if (auto v = parse_integer(cell)) {
      integer = true;
      return *v * 3600;
    }
    integer = false;
    return parse_iso8601(cell);
  };

  SeriesPanel p;
  const std::size_t width = rows.front().size();
  if (width < 2) throw DataError("CSV needs a time column and at least one series column");
  bool integer = false;
  std::size_t first = 0;
  if (!parse_time(rows.front().front(), integer)) {
    for (std::size_t c = 1; c < width; ++c) p.names.push_back(rows.front()[c]);
    first = 1;
  } else {
    for (std::size_t c = 1; c < width; ++c) p.names.push_back("s" + std::to_string(c - 1));
  }
  p.n = width - 1;
  p.T = rows.size() - first;
  if (p.T == 0) throw DataError("CSV has no data rows");
  p.values.assign(p.n * p.T, 0.0);
  p.mask.assign(p.n * p.T, 0);
  bool first_integer = false;
  for (std::size_t r = first; r < rows.size(); ++r) {
    const auto& cells = rows[r];
    if (cells.size() != width)
      throw DataError("ragged row " + std::to_string(r + 1) + ": expected " + std::to_string(width) + " cells");
    bool row_integer = false;
    const auto ts = parse_time(cells.front(), row_integer);
    if (!ts) throw DataError("bad timestamp '" + cells.front() + "' on row " + std::to_string(r + 1));
    const std::size_t t = r - first;
    if (t == 0) first_integer = row_integer;
    else if (row_integer != first_integer) throw DataError("mixed timestamp formats");
    p.timestamps.push_back(*ts);
    for (std::size_t i = 0; i < p.n; ++i) {
      if (auto v = parse_double(cells[i + 1])) {
        if (!std::isfinite(*v)) throw DataError("non-finite value on row " + std::to_string(r + 1));
        p.values[i * p.T + t] = *v;
        p.mask[i * p.T + t] = 1;
      }
    }
  }
  p.integer_index = first_integer;
  for (std::size_t t = 1; t < p.T; ++t)
    if (p.timestamps[t] <= p.timestamps[t - 1]) throw DataError("timestamps are not strictly increasing");
  p.step_seconds = p.T > 1 ? p.timestamps[1] - p.timestamps[0] : 3600;
  p.validate();

  double lo = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < p.values.size(); ++k)
    if (p.mask[k]) lo = std::min(lo, p.values[k]);
  if (!std::isfinite(lo)) throw DataError("CSV has no observed values");
  if (lo <= 0.0) {
    p.shift = 1.0 - lo + kShiftEpsilon;
    for (std::size_t k = 0; k < p.values.size(); ++k)
      if (p.mask[k]) p.values[k] += p.shift;
  }
  return p;
}

SeriesPanel load_panel(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return parse_panel_csv(in);
}

void write_panel_csv(std::ostream& out, const SeriesPanel& panel) {
  out << "timestamp";
  for (const auto& name : panel.names) out << ',' << name;
  out << '\n';
  for (std::size_t t = 0; t < panel.T; ++t) {
    out << format_timestamp(panel, panel.timestamps[t]);
    for (std::size_t i = 0; i < panel.n; ++i) {
      out << ',';
      if (panel.observed(i, t)) out << format_number(panel.value(i, t) - panel.shift);
    }
    out << '\n';
  }
}

void save_panel(const std::string& path, const SeriesPanel& panel) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  write_panel_csv(out, panel);
}

std::pair<std::size_t, std::size_t> split_bounds(std::size_t T) {
  if (T < 10) throw DataError("split needs T ≥ 10");
  return {T * 6 / 10, T * 8 / 10};
}

PanelSplit split(const SeriesPanel& panel) {
  const auto [a, b] = split_bounds(panel.T);
  return {panel.slice_time(0, a), panel.slice_time(a, b), panel.slice_time(b, panel.T), a, b};
}

}  // namespace ctxrnn
