#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ctxrnn/kernels.hpp"
#include "ctxrnn/panel.hpp"

namespace ctxrnn {

enum class MatrixKind { CM, CST, MI, GC, aggregated };

struct AdjacencyMatrix {
  std::size_t n = 0;
  std::vector<double> weights;
  MatrixKind kind = MatrixKind::CM;

  double at(std::size_t i, std::size_t j) const { return weights[i * n + j]; }
  double& at(std::size_t i, std::size_t j) { return weights[i * n + j]; }
};

/// Pearson correlation over jointly observed cells; 0 when either side has
/// zero variance or fewer than 3 joint points.
double pearson(std::span<const double> x, std::span<const double> y, std::span<const std::uint8_t> mx = {},
               std::span<const std::uint8_t> my = {});

/// Throws DataError when a series has fewer than 3 observations.
AdjacencyMatrix pearson_matrix(const SeriesPanel& panel, kernels::Exec exec = kernels::default_exec());

/// Kruskal minimum spanning tree over a symmetric n×n distance matrix.
/// Equal distances are taken in (i, j) lexicographic order.
std::vector<std::pair<std::size_t, std::size_t>> minimum_spanning_tree(std::span<const double> distance,
                                                                        std::size_t n);
/// |corr| on the MST edges of D = 1 − |corr|, 0 elsewhere.
AdjacencyMatrix cst_from_correlation(const AdjacencyMatrix& cm);
AdjacencyMatrix cst_matrix(const SeriesPanel& panel);

/// Equal-width histogram estimate in nats with B = clamp(⌊√T⌋, 8, 64) bins
/// per marginal, T = joint observations (at least 32).
double mutual_information(std::span<const double> x, std::span<const double> y,
                          std::span<const std::uint8_t> mx = {}, std::span<const std::uint8_t> my = {});
std::size_t mi_bins(std::size_t observations);
AdjacencyMatrix mi_matrix(const SeriesPanel& panel, kernels::Exec exec = kernels::default_exec());

/// Min-max scales each input over its off-diagonal entries (a constant input
/// contributes 0) and averages. CM should be passed as |CM|.
AdjacencyMatrix aggregate(std::span<const AdjacencyMatrix> matrices);
AdjacencyMatrix absolute(AdjacencyMatrix m);

std::size_t shortlist_size(std::size_t S);
/// ⌈1.5·S⌉ candidates per target, descending weight, ties by ascending id.
std::vector<std::vector<std::size_t>> shortlist(const AdjacencyMatrix& aggregated, std::size_t S);

struct GrangerTest {
  double f = 0.0;
  double p_value = 1.0;
  double rss_restricted = 0.0;
  double rss_augmented = 0.0;
  std::size_t rows = 0;
  bool ridge = false;
};

/// F-test of "candidate's maxlag lags improve an AR(maxlag) fit of target".
/// Uses the longest run where both series are observed; needs a run longer
/// than 10·maxlag.
GrangerTest granger_test(std::span<const double> target, std::span<const double> candidate, std::size_t maxlag,
                         std::span<const std::uint8_t> mt = {}, std::span<const std::uint8_t> mc = {});

struct GrangerRanking {
  /// p-value of candidate j for target i; 1 where untested.
  AdjacencyMatrix p_values;
  std::vector<std::vector<std::size_t>> per_target;
  std::size_t tests = 0;
  std::size_t ridge_fallbacks = 0;
};

/// Tests each shortlisted candidate and keeps the S with the smallest
/// p-values. Equal p-values (typically underflowed to 0) are ordered by
/// the larger F statistic, then aggregated weight, then id.
GrangerRanking granger_rank(const SeriesPanel& panel, const std::vector<std::vector<std::size_t>>& candidates,
                            std::size_t S, std::size_t maxlag, const AdjacencyMatrix& aggregated);

struct ContextMap {
  std::vector<std::vector<std::size_t>> per_target;
  std::vector<std::size_t> global_batch;
  std::size_t S = 0;
  std::size_t K = 0;
};

struct SelectionReport {
  ContextMap map;
  AdjacencyMatrix aggregated;
  GrangerRanking granger;
};

/// K series most often selected across the per-target lists; ties by total
/// aggregated weight received, then id.
std::vector<std::size_t> select_global_batch(const std::vector<std::vector<std::size_t>>& per_target,
                                             const AdjacencyMatrix& aggregated, std::size_t K);

/// Full data-driven pipeline: |CM|, CST, MI → aggregate → shortlist → Granger.
SelectionReport build_context_map(const SeriesPanel& panel, std::size_t S, std::size_t K, std::size_t maxlag = 4);

/// Text format: one "target: c1,c2,..." line per series, then "GLOBAL: ...".
/// Ids are series names; integer indices are accepted when no name matches.
void write_context_map(std::ostream& out, const ContextMap& map, const SeriesPanel& panel);
ContextMap read_context_map(std::istream& in, const SeriesPanel& panel);
ContextMap load_context_map(const std::string& path, const SeriesPanel& panel);
void save_context_map(const std::string& path, const ContextMap& map, const SeriesPanel& panel);

}  // namespace ctxrnn
