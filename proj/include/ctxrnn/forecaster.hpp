#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctxrnn/config.hpp"
#include "ctxrnn/es.hpp"
#include "ctxrnn/model.hpp"
#include "ctxrnn/panel.hpp"

namespace ctxrnn {

/// q·(a − p) when a ≥ p, else (1 − q)·(p − a). Throws DomainError unless
/// 0 < q < 1.
double pinball(double actual, double predicted, double q);

struct Quantiles {
  double median = 0.48, lower = 0.025, upper = 0.975;
};

/// mean_τ ρ_{q*}(x, x̂) + γ·(ρ_{q̲}(x, lower) + ρ_{q̄}(x, upper)).
double total_loss(std::span<const double> actual, std::span<const double> median, std::span<const double> lower,
                  std::span<const double> upper, double gamma, Quantiles q = {});
/// Tape version; `mask` (0/1, may be invalid) drops unobserved positions
/// from both the sum and the count.
Var total_loss(Var actual, Var median, Var lower, Var upper, double gamma, Quantiles q, Var mask = {});

/// Main-track input [x_in, seasonal factors, log10 z̄, calendar embedding,
/// context]. `context` is left invalid when the variant has no context.
Var assemble_input(Var x_in, Var seasonal, double z_bar, Var calendar, Var context = {});

struct AdamSlot {
  std::vector<double> m, v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update (β₁ = 0.9, β₂ = 0.999, ε = 1e−8); the
/// slot's step counter is advanced first.
void adam_step(Tensor& param, AdamSlot& slot, std::span<const double> grad, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

/// Trained model: configuration, series identities and one parameter set per
/// ensemble member.
struct Model {
  Config config;
  std::vector<std::string> series_names;
  /// Context batch as panel series indices (empty for no_context).
  std::vector<std::size_t> global_batch;
  std::vector<ParamStore> members;

  std::size_t series_count() const { return series_names.size(); }
};

/// Builds an untrained model; member m is seeded with config.seed + m.
Model make_model(const Config& config, const std::vector<std::string>& series_names,
                 std::vector<std::size_t> global_batch);

/// Median/lower/upper forecasts for one series at anchor t, in panel units
/// with the load shift removed.
struct Forecast {
  std::size_t series = 0;
  std::size_t t = 0;
  std::vector<double> median, lower, upper;
};

/// Sequential forward pass over a panel for a batch of main series, driving
/// each series' ES and recurrent state step by step. States survive between
/// chunks as plain values, so each chunk can use a fresh tape (truncated
/// backpropagation through time).
class Engine {
 public:
  struct Options {
    /// Anchors t with loss_begin ≤ t and t + fh ≤ loss_end contribute loss.
    std::size_t loss_begin = 0, loss_end = 0;
    /// Anchors in [forecast_begin, forecast_end) are recorded; an anchor may
    /// equal panel.T (forecast past the end of the data).
    std::size_t forecast_begin = 0, forecast_end = 0;
  };

  Engine(const Model& model, const SeriesPanel& panel, std::vector<std::size_t> batch, Options options);

  /// Re-initializes ES states from the first 2p values and zeroes every
  /// recurrent history.
  void reset();

  struct ChunkResult {
    Var loss;  ///< mean window loss; invalid when no window contributed
    std::size_t windows = 0;
  };

  /// Processes timesteps [t0, t1) on `tape`, resolving parameters through
  /// `binder`. Recorded forecasts are appended to `forecasts`.
  ChunkResult run_chunk(Tape& tape, ParamBinder& binder, std::size_t t0, std::size_t t1,
                        std::vector<Forecast>* forecasts = nullptr);

  /// One past the last timestep any loss window or forecast anchor needs.
  std::size_t horizon_end() const;

 private:
  struct Track {
    std::size_t series = 0;
    ESState es;
    std::deque<double> history;
  };
  struct MainTrack : Track {
    std::size_t slot = 0;
    std::vector<CellMemory> bottom, top;
  };

  const Model& model_;
  const Config& config_;
  const SeriesPanel& panel_;
  Options options_;
  std::vector<MainTrack> main_;
  std::vector<Track> context_;
};

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t batch_size = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;
  /// NaN when there is no validation range.
  double validation_loss = 0.0;
  std::size_t windows = 0;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains ensemble member `member` on anchors with t + fh ≤ train_end and
/// monitors validation loss on anchors in [train_end, validation_end − fh].
/// Throws DivergenceError on a non-finite loss.
TrainLog train_member(Model& model, std::size_t member, const SeriesPanel& panel, std::size_t train_end,
                       std::size_t validation_end, const EpochCallback& on_epoch = {});

/// Trains every member in turn.
std::vector<TrainLog> train(Model& model, const SeriesPanel& panel, std::size_t train_end,
                            std::size_t validation_end, const EpochCallback& on_epoch = {});

/// Mean window loss of one member over anchors in [begin, end − fh].
double evaluate_loss(const Model& model, std::size_t member, const SeriesPanel& panel, std::size_t begin,
                     std::size_t end);

/// Forecasts of one member for every series at anchors [begin, end).
std::vector<Forecast> predict_member(const Model& model, std::size_t member, const SeriesPanel& panel,
                                     std::size_t begin, std::size_t end);

/// Ensemble forecast: mean of member medians, minimum of lowers, maximum of
/// uppers. Equal to predict_member for a single member.
std::vector<Forecast> predict(const Model& model, const SeriesPanel& panel, std::size_t begin, std::size_t end);
std::vector<Forecast> combine_members(const std::vector<std::vector<Forecast>>& members);

/// Rejects panels whose series names or length do not fit the model.
void check_panel(const Model& model, const SeriesPanel& panel);

}  // namespace ctxrnn
