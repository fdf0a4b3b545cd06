#include "ctxrnn/model.hpp"

#include <cmath>
#include <random>

#include "ctxrnn/errors.hpp"
#include "ctxrnn/es.hpp"
#include "ctxrnn/preprocess.hpp"
#include "ctxrnn/spectral.hpp"

namespace ctxrnn {

void ParamStore::add(const std::string& name, Tensor value) {
  if (contains(name)) throw ShapeError("parameter '" + name + "' registered twice");
  index_[name] = names_.size();
  names_.push_back(name);
  values_.push_back(std::move(value));
}

Tensor& ParamStore::at(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("unknown parameter '" + name + "'");
  return values_[it->second];
}

const Tensor& ParamStore::at(const std::string& name) const { return const_cast<ParamStore*>(this)->at(name); }

std::size_t ParamStore::scalar_count() const {
  std::size_t total = 0;
  for (const auto& t : values_) total += t.size();
  return total;
}

bool operator==(const ParamStore& a, const ParamStore& b) {
  if (a.names_ != b.names_) return false;
  for (std::size_t i = 0; i < a.values_.size(); ++i)
    if (!(a.values_[i].shape == b.values_[i].shape) || a.values_[i].values != b.values_[i].values) return false;
  return true;
}

Var StoreBinder::get(const std::string& name) {
  if (const auto it = lookup_.find(name); it != lookup_.end()) return bound_[it->second].second;
  const Var v = tape_.param(store_.at(name));
  lookup_[name] = bound_.size();
  bound_.emplace_back(name, v);
  return v;
}

namespace param_names {
std::string cell(std::size_t layer, bool top, char which) {
  return "L" + std::to_string(layer) + (top ? ".top." : ".bottom.") + which;
}
std::string main_es(std::size_t series) { return "es." + std::to_string(series); }
std::string context_es(std::size_t slot) { return "ctx_es." + std::to_string(slot); }
std::string modulation(std::size_t series) { return "mod." + std::to_string(series); }
}  // namespace param_names

std::vector<std::pair<DRNNCellShape, DRNNCellShape>> layer_shapes(const Config& config) {
  std::vector<std::pair<DRNNCellShape, DRNNCellShape>> out;
  std::size_t input = config.input_width();
  for (std::size_t d : config.dilations) {
    const DRNNCellShape bottom{input, input, config.hidden, d};
    const DRNNCellShape top{input, 0, config.hidden, d};
    out.emplace_back(bottom, top);
    input = config.hidden;
  }
  return out;
}

namespace {

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Tensor uniform(Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(shape);
    for (double& v : t.values) v = dist(rng_);
    return t;
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace

ParamStore init_params(const Config& config, std::size_t series, std::uint64_t seed) {
  config.validate();
  ParamStore store;
  Initializer init(seed);
  const auto shapes = layer_shapes(config);
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    for (const bool top : {false, true}) {
      const DRNNCellShape& s = top ? shapes[l].second : shapes[l].first;
      const std::size_t rows = 4 * s.state();
      store.add(param_names::cell(l, top, 'W'), init.uniform(Shape::matrix(rows, s.input), s.input));
      store.add(param_names::cell(l, top, 'V'), init.uniform(Shape::matrix(rows, s.s_h), s.s_h));
      store.add(param_names::cell(l, top, 'U'), init.uniform(Shape::matrix(rows, s.s_h), s.s_h));
      store.add(param_names::cell(l, top, 'b'), init.uniform(Shape::vector(rows), s.input));
    }
  }
  store.add(param_names::kEmbedding, init.uniform(Shape::matrix(kCalendarDims, config.embedding), kCalendarDims));
  const std::size_t outputs = 3 * config.horizon + 2;
  store.add(param_names::kHeadW, init.uniform(Shape::matrix(outputs, config.hidden), config.hidden));
  store.add(param_names::kHeadB, init.uniform(Shape::vector(outputs), config.hidden));

  if (config.variant != Variant::no_context) {
    const std::size_t C = config.conv_channels, k = config.conv_kernel, W = config.window;
    const std::size_t u2 = config.context_size + 2;
    store.add("ctx.dw1", init.uniform(Shape::matrix(kSpectralChannels, k), k));
    store.add("ctx.pw1", init.uniform(Shape::matrix(C, kSpectralChannels), kSpectralChannels));
    store.add("ctx.pw1_b", init.uniform(Shape::vector(C), kSpectralChannels));
    store.add("ctx.proj1", init.uniform(Shape::matrix(C, kSpectralChannels), kSpectralChannels));
    store.add("ctx.dw2", init.uniform(Shape::matrix(C, k), k));
    store.add("ctx.pw2", init.uniform(Shape::matrix(C, C), C));
    store.add("ctx.pw2_b", init.uniform(Shape::vector(C), C));
    store.add("ctx.reduce", init.uniform(Shape::matrix(u2, C * W), C * W));
    store.add("ctx.reduce_b", init.uniform(Shape::vector(u2), C * W));
    for (std::size_t k2 = 0; k2 < config.context_batch; ++k2)
      store.add(param_names::context_es(k2), Tensor::vector({kInitialSmoothingLogit, kInitialSmoothingLogit}));
    if (config.variant == Variant::full)
      for (std::size_t j = 0; j < series; ++j)
        store.add(param_names::modulation(j), Tensor(Shape::vector(config.context_width()), 1.0));
  }
  for (std::size_t j = 0; j < series; ++j)
    store.add(param_names::main_es(j), Tensor::vector({kInitialSmoothingLogit, kInitialSmoothingLogit}));
  return store;
}

SharedWeights bind_shared(ParamBinder& binder, const Config& config) {
  SharedWeights w;
  const auto shapes = layer_shapes(config);
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    WdrnnLayer layer;
    for (const bool top : {false, true}) {
      DRNNCellParams& p = top ? layer.top : layer.bottom;
      p.shape = top ? shapes[l].second : shapes[l].first;
      p.W = binder.get(param_names::cell(l, top, 'W'));
      p.V = binder.get(param_names::cell(l, top, 'V'));
      p.U = binder.get(param_names::cell(l, top, 'U'));
      p.b = binder.get(param_names::cell(l, top, 'b'));
    }
    w.layers.push_back(layer);
  }
  w.embedding = binder.get(param_names::kEmbedding);
  w.head_w = binder.get(param_names::kHeadW);
  w.head_b = binder.get(param_names::kHeadB);
  if (config.variant != Variant::no_context) {
    w.conv = {binder.get("ctx.dw1"),   binder.get("ctx.pw1"), binder.get("ctx.pw1_b"),
              binder.get("ctx.proj1"), binder.get("ctx.dw2"), binder.get("ctx.pw2"),
              binder.get("ctx.pw2_b"), binder.get("ctx.reduce"), binder.get("ctx.reduce_b")};
  }
  return w;
}

}  // namespace ctxrnn
