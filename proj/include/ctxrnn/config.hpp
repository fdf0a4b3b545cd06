#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace ctxrnn {

enum class Variant { full, global_only, no_context };

const char* variant_name(Variant v);
Variant parse_variant(const std::string& name);

/// Every model and training setting. All fields are addressable as
/// `key = value` lines (see `config_keys()`).
struct Config {
  // Architecture
  std::size_t window = 168;
  std::size_t horizon = 24;
  std::size_t period = 24;
  std::vector<std::size_t> dilations = {2, 6, 12, 24};
  std::size_t hidden = 40;
  std::size_t embedding = 8;
  std::size_t context_size = 2;
  std::size_t context_batch = 15;
  std::size_t conv_channels = 8;
  std::size_t conv_kernel = 3;
  Variant variant = Variant::full;

  // Context selection
  std::size_t contexts = 3;
  std::size_t maxlag = 4;

  // Training
  std::size_t epochs = 11;
  /// epoch (1-based) → batch size from that epoch on.
  std::map<std::size_t, std::size_t> batch_schedule = {{1, 2}, {4, 5}, {5, 12}, {6, 25}, {7, 50}, {8, 100}};
  /// epoch (1-based) → learning rate from that epoch on.
  std::map<std::size_t, double> lr_schedule = {{1, 3e-3}, {9, 1e-3}, {10, 1e-4}};
  double q_median = 0.48;
  double q_lower = 0.025;
  double q_upper = 0.975;
  double gamma = 0.4;
  /// Truncated-BPTT chunk length in timesteps.
  std::size_t tbptt = 48;
  double delta_clamp = 10.0;
  bool keep_best = true;
  std::uint64_t seed = 1;
  std::size_t ensemble = 1;

  std::size_t batch_size(std::size_t epoch) const;
  double learning_rate(std::size_t epoch) const;
  /// Width of the main-track input x′.
  std::size_t input_width() const;
  std::size_t context_width() const;

  /// Throws DataError (naming the key) on an inconsistent configuration.
  void validate() const;

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
};

const std::vector<std::string>& config_keys();

/// Parses `key = value` lines; '#' starts a comment. Unknown keys throw.
void apply_config_text(Config& config, std::istream& in);
Config load_config(const std::string& path);
/// One `key = value` line per key in `config_keys()` order.
std::string config_to_text(const Config& config);

}  // namespace ctxrnn
