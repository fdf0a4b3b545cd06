#include "ctxrnn/context_select.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/distributions/fisher_f.hpp>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <spdlog/spdlog.h>

#include "ctxrnn/errors.hpp"

namespace ctxrnn {

namespace {

constexpr double kRidge = 1e-8;

bool joint(std::span<const std::uint8_t> mx, std::span<const std::uint8_t> my, std::size_t t) {
  return (mx.empty() || mx[t]) && (my.empty() || my[t]);
}

std::size_t observed_count(std::span<const std::uint8_t> mask) {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

void require_observations(const SeriesPanel& panel, std::size_t minimum) {
  for (std::size_t i = 0; i < panel.n; ++i)
    if (observed_count(panel.row_mask(i)) < minimum)
      throw DataError("series '" + panel.names[i] + "' has fewer than " + std::to_string(minimum) +
                      " observations");
}

struct Ols {
  double rss = 0.0;
  bool ridge = false;
};

Ols ols_rss(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  Eigen::MatrixXd gram = x.transpose() * x;
  const Eigen::VectorXd rhs = x.transpose() * y;
  Ols out;
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success) {
    gram.diagonal().array() += kRidge;
    llt.compute(gram);
    out.ridge = true;
    spdlog::warn("granger: singular normal equations, retrying with ridge {}", kRidge);
  }
  const Eigen::VectorXd beta = llt.solve(rhs);
  out.rss = (y - x * beta).squaredNorm();
  return out;
}

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y, std::span<const std::uint8_t> mx,
               std::span<const std::uint8_t> my) {
  if (x.size() != y.size()) throw ShapeError("pearson: length mismatch");
  double sx = 0, sy = 0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < x.size(); ++t)
    if (joint(mx, my, t)) {
      sx += x[t];
      sy += y[t];
      ++count;
    }
  if (count < 3) return 0.0;
  const double meanx = sx / static_cast<double>(count), meany = sy / static_cast<double>(count);
  double cxy = 0, cxx = 0, cyy = 0;
  for (std::size_t t = 0; t < x.size(); ++t)
    if (joint(mx, my, t)) {
      const double dx = x[t] - meanx, dy = y[t] - meany;
      cxy += dx * dy;
      cxx += dx * dx;
      cyy += dy * dy;
    }
  if (cxx == 0.0 || cyy == 0.0) return 0.0;
  return std::clamp(cxy / std::sqrt(cxx * cyy), -1.0, 1.0);
}

AdjacencyMatrix pearson_matrix(const SeriesPanel& panel, kernels::Exec exec) {
  require_observations(panel, 3);
  AdjacencyMatrix m{panel.n, {}, MatrixKind::CM};
  m.weights = kernels::pairwise_symmetric(
      exec, panel.n,
      [&](std::size_t i, std::size_t j) {
        return pearson(panel.row(i), panel.row(j), panel.row_mask(i), panel.row_mask(j));
      },
      [](std::size_t) { return 1.0; });
  return m;
}

std::vector<std::pair<std::size_t, std::size_t>> minimum_spanning_tree(std::span<const double> distance,
                                                                        std::size_t n) {
  if (n < 2) throw ShapeError("minimum_spanning_tree: needs at least 2 nodes");
  if (distance.size() != n * n) throw ShapeError("minimum_spanning_tree: distance must be n×n");
  struct Edge {
    double d;
    std::size_t i, j;
  };
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) edges.push_back({distance[i * n + j], i, j});
  std::stable_sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) { return a.d < b.d; });
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  std::vector<std::pair<std::size_t, std::size_t>> tree;
  for (const Edge& e : edges) {
    const std::size_t a = find(e.i), b = find(e.j);
    if (a == b) continue;
    parent[std::max(a, b)] = std::min(a, b);
    tree.emplace_back(e.i, e.j);
    if (tree.size() == n - 1) break;
  }
  return tree;
}

AdjacencyMatrix cst_from_correlation(const AdjacencyMatrix& cm) {
  const std::size_t n = cm.n;
  std::vector<double> distance(n * n);
  for (std::size_t k = 0; k < n * n; ++k) distance[k] = 1.0 - std::abs(cm.weights[k]);
  AdjacencyMatrix out{n, std::vector<double>(n * n, 0.0), MatrixKind::CST};
  for (auto [i, j] : minimum_spanning_tree(distance, n)) out.at(i, j) = out.at(j, i) = std::abs(cm.at(i, j));
  return out;
}

AdjacencyMatrix cst_matrix(const SeriesPanel& panel) {
  if (panel.n < 2) throw ShapeError("cst_matrix: needs at least 2 series");
  return cst_from_correlation(pearson_matrix(panel));
}

std::size_t mi_bins(std::size_t observations) {
  const auto root = static_cast<std::size_t>(std::sqrt(static_cast<double>(observations)));
  return std::clamp<std::size_t>(root, 8, 64);
}

double mutual_information(std::span<const double> x, std::span<const double> y, std::span<const std::uint8_t> mx,
                          std::span<const std::uint8_t> my) {
  if (x.size() != y.size()) throw ShapeError("mutual_information: length mismatch");
  std::vector<double> xs, ys;
  for (std::size_t t = 0; t < x.size(); ++t)
    if (joint(mx, my, t)) {
      xs.push_back(x[t]);
      ys.push_back(y[t]);
    }
  const std::size_t count = xs.size();
  if (count < 32) throw DataError("mutual_information: fewer than 32 joint observations");
  const std::size_t bins = mi_bins(count);
  auto bin_of = [bins](const std::vector<double>& v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    std::vector<std::size_t> idx(v.size(), 0);
    if (*hi == *lo) return std::pair{idx, true};
    const double width = *hi - *lo;
    for (std::size_t t = 0; t < v.size(); ++t) {
      const auto b = static_cast<std::size_t>((v[t] - *lo) / width * static_cast<double>(bins));
      idx[t] = std::min(b, bins - 1);
    }
    return std::pair{idx, false};
  };
  const auto [bx, cx] = bin_of(xs);
  const auto [by, cy] = bin_of(ys);
  if (cx || cy) return 0.0;
  std::vector<double> pxy(bins * bins, 0.0), px(bins, 0.0), py(bins, 0.0);
  const double unit = 1.0 / static_cast<double>(count);
  for (std::size_t t = 0; t < count; ++t) {
    pxy[bx[t] * bins + by[t]] += unit;
    px[bx[t]] += unit;
    py[by[t]] += unit;
  }
  double mi = 0.0;
  for (std::size_t a = 0; a < bins; ++a)
    for (std::size_t b = 0; b < bins; ++b) {
      const double p = pxy[a * bins + b];
      if (p > 0.0) mi += p * std::log(p / (px[a] * py[b]));
    }
  return std::max(mi, 0.0);
}

AdjacencyMatrix mi_matrix(const SeriesPanel& panel, kernels::Exec exec) {
  require_observations(panel, 32);
  AdjacencyMatrix m{panel.n, {}, MatrixKind::MI};
  m.weights = kernels::pairwise_symmetric(
      exec, panel.n,
      [&](std::size_t i, std::size_t j) {
        return mutual_information(panel.row(i), panel.row(j), panel.row_mask(i), panel.row_mask(j));
      },
      [&](std::size_t i) { return mutual_information(panel.row(i), panel.row(i), panel.row_mask(i), {}); });
  return m;
}

AdjacencyMatrix absolute(AdjacencyMatrix m) {
  for (double& w : m.weights) w = std::abs(w);
  return m;
}

AdjacencyMatrix aggregate(std::span<const AdjacencyMatrix> matrices) {
  if (matrices.empty()) throw ShapeError("aggregate: no inputs");
  const std::size_t n = matrices.front().n;
  AdjacencyMatrix out{n, std::vector<double>(n * n, 0.0), MatrixKind::aggregated};
  for (const auto& m : matrices) {
    if (m.n != n) throw ShapeError("aggregate: size mismatch");
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) {
          lo = std::min(lo, m.at(i, j));
          hi = std::max(hi, m.at(i, j));
        }
    if (!(hi > lo)) continue;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) out.at(i, j) += (m.at(i, j) - lo) / (hi - lo);
  }
  for (double& w : out.weights) w /= static_cast<double>(matrices.size());
  return out;
}

std::size_t shortlist_size(std::size_t S) { return (3 * S + 1) / 2; }

std::vector<std::vector<std::size_t>> shortlist(const AdjacencyMatrix& aggregated, std::size_t S) {
  const std::size_t n = aggregated.n;
  const std::size_t want = shortlist_size(S);
  if (n == 0 || want > n - 1) throw DataError("shortlist: ⌈1.5·S⌉ exceeds the number of other series");
  std::vector<std::vector<std::size_t>> out(n);
  for (std::size_t target = 0; target < n; ++target) {
    std::vector<std::size_t> ids;
    for (std::size_t j = 0; j < n; ++j)
      if (j != target) ids.push_back(j);
    std::stable_sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) {
      return aggregated.at(target, a) > aggregated.at(target, b);
    });
    ids.resize(want);
    out[target] = std::move(ids);
  }
  return out;
}

GrangerTest granger_test(std::span<const double> target, std::span<const double> candidate, std::size_t maxlag,
                         std::span<const std::uint8_t> mt, std::span<const std::uint8_t> mc) {
  if (target.size() != candidate.size()) throw ShapeError("granger_test: length mismatch");
  if (maxlag == 0) throw ShapeError("granger_test: maxlag must be positive");
  std::size_t best_begin = 0, best_len = 0, run_begin = 0;
  for (std::size_t t = 0; t <= target.size(); ++t) {
    if (t < target.size() && joint(mt, mc, t)) continue;
    if (t - run_begin > best_len) {
      best_len = t - run_begin;
      best_begin = run_begin;
    }
    run_begin = t + 1;
  }
  if (best_len <= 10 * maxlag) throw DataError("granger_test: series too short for the lag order");

  const std::size_t L = maxlag;
  const std::size_t rows = best_len - L;
  Eigen::MatrixXd xr(rows, 1 + L), xa(rows, 1 + 2 * L);
  Eigen::VectorXd y(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t t = best_begin + L + r;
    y[r] = target[t];
    xr(r, 0) = xa(r, 0) = 1.0;
    for (std::size_t k = 1; k <= L; ++k) {
      xr(r, k) = xa(r, k) = target[t - k];
      xa(r, L + k) = candidate[t - k];
    }
  }
  GrangerTest out;
  out.rows = rows;
  const Ols restricted = ols_rss(xr, y);
  const Ols augmented = ols_rss(xa, y);
  out.ridge = restricted.ridge || augmented.ridge;
  out.rss_restricted = restricted.rss;
  out.rss_augmented = augmented.rss;
  const double dof = static_cast<double>(rows - 2 * L - 1);
  const double gain = std::max(restricted.rss - augmented.rss, 0.0);
  if (augmented.rss <= 0.0) {
    out.f = gain > 0.0 ? INFINITY : 0.0;
    out.p_value = gain > 0.0 ? 0.0 : 1.0;
    return out;
  }
  out.f = (gain / static_cast<double>(L)) / (augmented.rss / dof);
  const boost::math::fisher_f_distribution<double> dist(static_cast<double>(L), dof);
  out.p_value = boost::math::cdf(boost::math::complement(dist, out.f));
  return out;
}

GrangerRanking granger_rank(const SeriesPanel& panel, const std::vector<std::vector<std::size_t>>& candidates,
                            std::size_t S, std::size_t maxlag, const AdjacencyMatrix& aggregated) {
  const std::size_t n = panel.n;
  if (candidates.size() != n || aggregated.n != n) throw ShapeError("granger_rank: size mismatch");
  GrangerRanking out;
  out.p_values = {n, std::vector<double>(n * n, 1.0), MatrixKind::GC};
  out.per_target.resize(n);
  std::vector<double> f_stat(n * n, 0.0);
  for (std::size_t target = 0; target < n; ++target) {
    std::vector<std::size_t> ids = candidates[target];
    if (ids.size() < S) throw DataError("granger_rank: fewer candidates than S");
    for (std::size_t c : ids) {
      if (c == target || c >= n) throw DataError("granger_rank: invalid candidate id");
      const GrangerTest g = granger_test(panel.row(target), panel.row(c), maxlag, panel.row_mask(target),
                                         panel.row_mask(c));
      ++out.tests;
      if (g.ridge) ++out.ridge_fallbacks;
      out.p_values.at(target, c) = g.p_value;
      f_stat[target * n + c] = g.f;
    }
    std::sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) {
      const double pa = out.p_values.at(target, a), pb = out.p_values.at(target, b);
      if (pa != pb) return pa < pb;
      // Strong effects underflow to p = 0; the F statistic still orders them.
      const double fa = f_stat[target * n + a], fb = f_stat[target * n + b];
      if (fa != fb) return fa > fb;
      const double wa = aggregated.at(target, a), wb = aggregated.at(target, b);
      if (wa != wb) return wa > wb;
      return a < b;
    });
    ids.resize(S);
    out.per_target[target] = std::move(ids);
  }
  return out;
}

std::vector<std::size_t> select_global_batch(const std::vector<std::vector<std::size_t>>& per_target,
                                             const AdjacencyMatrix& aggregated, std::size_t K) {
  const std::size_t n = aggregated.n;
  if (K > n) throw DataError("context batch size K exceeds the number of series");
  std::vector<std::size_t> frequency(n, 0);
  for (const auto& list : per_target)
    for (std::size_t c : list) ++frequency[c];
  std::vector<double> received(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) received[j] += aggregated.at(i, j);
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  std::sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) {
    if (frequency[a] != frequency[b]) return frequency[a] > frequency[b];
    if (received[a] != received[b]) return received[a] > received[b];
    return a < b;
  });
  ids.resize(K);
  return ids;
}

SelectionReport build_context_map(const SeriesPanel& panel, std::size_t S, std::size_t K, std::size_t maxlag) {
  if (panel.n < 2) throw DataError("context selection needs at least 2 series");
  SelectionReport report;
  const AdjacencyMatrix cm = pearson_matrix(panel);
  const std::array<AdjacencyMatrix, 3> parts = {absolute(cm), cst_from_correlation(cm), mi_matrix(panel)};
  report.aggregated = aggregate(parts);
  const auto candidates = shortlist(report.aggregated, S);
  report.granger = granger_rank(panel, candidates, S, maxlag, report.aggregated);
  if (report.granger.ridge_fallbacks > 0)
    spdlog::info("granger: {} of {} tests used the ridge fallback", report.granger.ridge_fallbacks,
                 report.granger.tests);
  report.map.per_target = report.granger.per_target;
  report.map.global_batch = select_global_batch(report.map.per_target, report.aggregated, K);
  report.map.S = S;
  report.map.K = K;
  return report;
}

namespace {

std::size_t resolve_id(const std::string& token, const SeriesPanel& panel) {
  const auto it = std::find(panel.names.begin(), panel.names.end(), token);
  if (it != panel.names.end()) return static_cast<std::size_t>(it - panel.names.begin());
  std::size_t idx = 0;
  std::istringstream in(token);
  if (in >> idx && in.eof() && idx < panel.n) return idx;
  throw DataError("context map references unknown series '" + token + "'");
}

std::vector<std::size_t> parse_id_list(const std::string& text, const SeriesPanel& panel) {
  std::vector<std::size_t> out;
  std::istringstream in(text);
  std::string token;
  while (std::getline(in, token, ',')) {
    const auto b = token.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    const auto e = token.find_last_not_of(" \t");
    out.push_back(resolve_id(token.substr(b, e - b + 1), panel));
  }
  return out;
}

void write_list(std::ostream& out, const std::vector<std::size_t>& ids, const SeriesPanel& panel) {
  for (std::size_t k = 0; k < ids.size(); ++k) out << (k ? "," : "") << panel.names.at(ids[k]);
}

}  // namespace

void write_context_map(std::ostream& out, const ContextMap& map, const SeriesPanel& panel) {
  for (std::size_t target = 0; target < map.per_target.size(); ++target) {
    out << panel.names.at(target) << ": ";
    write_list(out, map.per_target[target], panel);
    out << '\n';
  }
  out << "GLOBAL: ";
  write_list(out, map.global_batch, panel);
  out << '\n';
}

ContextMap read_context_map(std::istream& in, const SeriesPanel& panel) {
  ContextMap map;
  map.per_target.resize(panel.n);
  bool have_global = false;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos || line[line.find_first_not_of(" \t")] == '#') continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw DataError("context map line without ':': " + line);
    std::string key = line.substr(0, colon);
    key.erase(0, key.find_first_not_of(" \t"));
    key.erase(key.find_last_not_of(" \t") + 1);
    const auto ids = parse_id_list(line.substr(colon + 1), panel);
    if (key == "GLOBAL") {
      map.global_batch = ids;
      have_global = true;
      continue;
    }
    const std::size_t target = resolve_id(key, panel);
    for (std::size_t c : ids)
      if (c == target) throw DataError("series '" + key + "' lists itself as context");
    map.per_target[target] = ids;
    map.S = std::max(map.S, ids.size());
  }
  if (!have_global) throw DataError("context map has no GLOBAL line");
  std::vector<std::size_t> sorted = map.global_batch;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw DataError("GLOBAL context batch repeats a series");
  map.K = map.global_batch.size();
  return map;
}

ContextMap load_context_map(const std::string& path, const SeriesPanel& panel) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return read_context_map(in, panel);
}

void save_context_map(const std::string& path, const ContextMap& map, const SeriesPanel& panel) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  write_context_map(out, map, panel);
}

}  // namespace ctxrnn
