#pragma once

// Define-by-run reverse-mode automatic differentiation over dense tensors.
//
// A Tape owns every value produced during one forward pass in a single
// arena; `Var` is a cheap handle (tape pointer + node id). Node ids are
// assigned in creation order, which is a topological order, so backward is
// a single reverse sweep.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ctxrnn/tensor.hpp"

namespace ctxrnn {

using NodeId = std::uint32_t;

enum class Op : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  div,
  matmul,
  concat,
  slice,
  reshape,
  sigmoid,
  tanh,
  exp,
  log,
  relu,
  clamp,
  scale_shift,
  mean,
  sum,
  conv1d_depthwise,
  conv1d_pointwise,
  pinball,
  spectral,
};

const char* op_name(Op op);

enum class Padding : std::uint8_t { same, valid };

class Tape;

/// Tape-tracked tensor handle. Valid until its tape is cleared.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  NodeId id() const { return id_; }
  const Shape& shape() const;
  std::size_t size() const;
  std::span<const double> values() const;
  double value(std::size_t i = 0) const { return values()[i]; }
  bool requires_grad() const;
  Tensor to_tensor() const;

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

/// Gradients produced by Tape::backward, indexed by node.
class Gradients {
 public:
  Gradients() = default;
  /// Gradient of the loss w.r.t. `v`; zeros when `v` does not reach the loss.
  std::span<const double> operator[](Var v) const;
  Tensor tensor(Var v) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::vector<double> data_;
  std::vector<double> zeros_;
};

class Tape {
 public:
  Tape();

  /// Trainable leaf: gradients are tracked through it.
  Var param(const Tensor& t);
  /// Data leaf: no gradient flows into it.
  Var constant(const Tensor& t);
  Var constant(Shape shape, std::span<const double> values);
  Var scalar(double v) { return constant(Tensor::scalar(v)); }

  /// Reverse sweep from a scalar loss.
  Gradients backward(Var loss) const;

  void clear();
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t value_count() const { return arena_.size(); }

  /// NaN/Inf detection after every primitive. Defaults to on in debug builds.
  void set_check_finite(bool on) { check_finite_ = on; }
  bool check_finite() const { return check_finite_; }

  // Internal access used by the primitives.
  struct Node {
    Op op;
    bool requires_grad;
    Shape shape;
    std::size_t offset;
    std::size_t input_begin;
    std::uint32_t input_count;
    std::size_t i0 = 0, i1 = 0;
    double c0 = 0.0, c1 = 0.0;
  };
  const Node& node(NodeId id) const { return nodes_[id]; }
  std::span<const double> value(NodeId id) const;
  std::span<const NodeId> inputs(NodeId id) const;

  /// Appends a node and returns its id; the output slice is zero-filled.
  NodeId push(Op op, Shape shape, std::span<const NodeId> inputs);
  Node& mutable_node(NodeId id) { return nodes_[id]; }
  std::span<double> mutable_value(NodeId id);
  void finish(NodeId id) const;

 private:
  void backward_node(NodeId id, std::vector<double>& grads) const;

  std::vector<Node> nodes_;
  std::vector<double> arena_;
  std::vector<NodeId> input_pool_;
  bool check_finite_;
};

// Primitives. All inputs must live on the same tape.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// Throws DomainError on a zero divisor.
Var div(Var a, Var b);
/// (m×k)·(k×n) → m×n; a rank-1 right operand is a column giving rank-1 (m);
/// a rank-1 left operand is a row giving rank-1 (n).
Var matmul(Var a, Var b);
/// Concatenation along axis 0; trailing dimensions must agree.
Var concat(std::span<const Var> parts);
/// Rows [begin, begin + count) along axis 0.
Var slice(Var x, std::size_t begin, std::size_t count);
Var reshape(Var x, Shape shape);
Var sigmoid(Var x);
Var tanh(Var x);
Var exp(Var x);
/// Throws DomainError unless every input is strictly positive.
Var log(Var x);
Var relu(Var x);
/// Gradient passes only strictly inside (lo, hi).
Var clamp(Var x, double lo, double hi);
/// a·x + b elementwise.
Var scale_shift(Var x, double a, double b);
Var scale(Var x, double a);
Var one_minus(Var x);
Var mean(Var x);
Var sum(Var x);
/// Per-channel true convolution. x: C×L (or L), kernel: C×k (or k).
/// `same` keeps length L with zero padding, `valid` yields L−k+1.
Var conv1d_depthwise(Var x, Var kernel, Padding padding = Padding::same);
/// 1×1 convolution: w (Cout×Cin) · x (Cin×L) + bias (Cout) broadcast over L.
Var conv1d_pointwise(Var x, Var w);
Var conv1d_pointwise(Var x, Var w, Var bias);
/// Elementwise pinball loss ρ_q(actual − predicted).
Var pinball(Var actual, Var predicted, double q);
/// Real input x (W) → 5×W stack [Re, Im, |X|, arg X, x] of its full DFT.
Var spectral_features(Var x);

/// Max relative error between tape gradients and central finite
/// differences of `f` over every element of `params`:
/// |analytic − numeric| / max(|analytic|, |numeric|, floor). Central
/// differences carry roughly ulp(f)/epsilon of rounding noise, so gradients
/// far below that need a larger floor to be compared meaningfully.
/// Throws if `f` is not deterministic or epsilon is outside (0, 1e−2].
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;
double grad_check(const ScalarFn& f, std::span<const Tensor> params, double epsilon = 1e-5, double floor = 1e-8);

}  // namespace ctxrnn
