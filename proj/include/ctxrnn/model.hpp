#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctxrnn/config.hpp"
#include "ctxrnn/context_track.hpp"
#include "ctxrnn/tape.hpp"
#include "ctxrnn/tensor.hpp"
#include "ctxrnn/wdrnn.hpp"

namespace ctxrnn {

/// Named learnable tensors in registration order.
class ParamStore {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  std::size_t scalar_count() const;

  friend bool operator==(const ParamStore& a, const ParamStore& b);

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Resolves parameter names to tape variables.
class ParamBinder {
 public:
  virtual ~ParamBinder() = default;
  virtual Var get(const std::string& name) = 0;
};

/// Binds each stored parameter as a trainable leaf the first time it is
/// requested on the tape and remembers which ones were used.
class StoreBinder : public ParamBinder {
 public:
  StoreBinder(Tape& tape, const ParamStore& store) : tape_(tape), store_(store) {}
  Var get(const std::string& name) override;
  const std::vector<std::pair<std::string, Var>>& bound() const { return bound_; }

 private:
  Tape& tape_;
  const ParamStore& store_;
  std::unordered_map<std::string, std::size_t> lookup_;
  std::vector<std::pair<std::string, Var>> bound_;
};

namespace param_names {
std::string cell(std::size_t layer, bool top, char which);
std::string main_es(std::size_t series);
std::string context_es(std::size_t slot);
std::string modulation(std::size_t series);
inline const char* const kEmbedding = "emb";
inline const char* const kHeadW = "head.W";
inline const char* const kHeadB = "head.b";
}  // namespace param_names

/// Bottom/top cell shapes of every layer for the configured input width.
std::vector<std::pair<DRNNCellShape, DRNNCellShape>> layer_shapes(const Config& config);

/// Registers and initializes every parameter: recurrent and linear weights
/// uniform in ±1/√fan_in, modulation vectors at 1, smoothing logits at −2.
/// `series` is the main-track series count; the context batch size is
/// config.context_batch.
ParamStore init_params(const Config& config, std::size_t series, std::uint64_t seed);

/// Shared (non per-series) weights bound on one tape.
struct SharedWeights {
  std::vector<WdrnnLayer> layers;
  Var embedding;
  Var head_w, head_b;
  ConvStackParams conv;
};
SharedWeights bind_shared(ParamBinder& binder, const Config& config);

}  // namespace ctxrnn
