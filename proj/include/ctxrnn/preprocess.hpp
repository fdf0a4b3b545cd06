#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ctxrnn/panel.hpp"

namespace ctxrnn {

/// x_in[τ] = log(z[τ] / (z̄ · ŝ[τ])).
std::vector<double> preprocess_window(std::span<const double> z, double z_bar, std::span<const double> seasonal);
/// x_out[τ] = z[τ] / z̄.
std::vector<double> normalize_output(std::span<const double> z, double z_bar);
/// ẑ[τ] = exp(x̂[τ]) · z̄ · ŝ[τ]. Throws NumericError when |x̂| > 700.
std::vector<double> postprocess(std::span<const double> x_hat, double z_bar, std::span<const double> seasonal);

/// Input-window statistics over observed cells of z[begin, begin + W).
struct WindowStats {
  double z_bar = 0.0;
  std::size_t observed = 0;
  /// More than half of the window is missing.
  bool skip = true;
};
WindowStats window_stats(const SeriesPanel& panel, std::size_t series, std::size_t begin, std::size_t W);

/// One training/evaluation sample at anchor t: input [t−W, t), output [t, t+fh).
struct WindowPair {
  std::vector<double> input;
  std::vector<double> target;
  /// Observed flags of the target cells.
  std::vector<std::uint8_t> target_mask;
  double z_bar = 0.0;
  std::vector<double> seasonal_factors;
  std::size_t series_id = 0;
  std::size_t t = 0;
};

/// Builds the window at anchor t with `seasonal` holding W + fh factors
/// (input positions first). Missing inputs become 0 (z filled with z̄·ŝ).
/// Returns nullopt for windows that are more than half missing.
std::optional<WindowPair> make_window(const SeriesPanel& panel, std::size_t series, std::size_t t, std::size_t W,
                                      std::size_t fh, std::span<const double> seasonal);

inline constexpr std::size_t kCalendarDims = 74;
inline constexpr std::array<std::size_t, 4> kCalendarOffsets = {0, 24, 31, 62};

/// Indices set in the 74-dim one-hot: hour (0–23), weekday Monday=0 (24–30),
/// day of month (31–61), month (62–73).
std::array<std::size_t, 4> calendar_indices(std::int64_t timestamp);
std::vector<double> calendar_features(std::int64_t timestamp);

}  // namespace ctxrnn
