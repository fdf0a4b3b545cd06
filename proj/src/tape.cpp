#include "ctxrnn/tape.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "ctxrnn/errors.hpp"
#include "ctxrnn/kernels.hpp"
#include "ctxrnn/spectral.hpp"

namespace ctxrnn {

const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::matmul: return "matmul";
    case Op::concat: return "concat";
    case Op::slice: return "slice";
    case Op::reshape: return "reshape";
    case Op::sigmoid: return "sigmoid";
    case Op::tanh: return "tanh";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::relu: return "relu";
    case Op::clamp: return "clamp";
    case Op::scale_shift: return "scale_shift";
    case Op::mean: return "mean";
    case Op::sum: return "sum";
    case Op::conv1d_depthwise: return "conv1d_depthwise";
    case Op::conv1d_pointwise: return "conv1d_pointwise";
    case Op::pinball: return "pinball";
    case Op::spectral: return "spectral";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Var / Gradients

const Shape& Var::shape() const { return tape_->node(id_).shape; }
std::size_t Var::size() const { return tape_->node(id_).shape.numel(); }
std::span<const double> Var::values() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }
Tensor Var::to_tensor() const {
  auto v = values();
  return Tensor(shape(), std::vector<double>(v.begin(), v.end()));
}

std::span<const double> Gradients::operator[](Var v) const {
  const auto& n = tape_->node(v.id());
  return {data_.data() + n.offset, n.shape.numel()};
}

Tensor Gradients::tensor(Var v) const {
  auto g = (*this)[v];
  return Tensor(v.shape(), std::vector<double>(g.begin(), g.end()));
}

// ---------------------------------------------------------------------------
// Tape

Tape::Tape() {
#ifdef NDEBUG
  check_finite_ = false;
#else
  check_finite_ = true;
#endif
}

NodeId Tape::push(Op op, Shape shape, std::span<const NodeId> inputs) {
  Node n;
  n.op = op;
  n.requires_grad = false;
  for (NodeId in : inputs) n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  n.shape = shape;
  n.offset = arena_.size();
  n.input_begin = input_pool_.size();
  n.input_count = static_cast<std::uint32_t>(inputs.size());
  input_pool_.insert(input_pool_.end(), inputs.begin(), inputs.end());
  arena_.resize(arena_.size() + shape.numel(), 0.0);
  nodes_.push_back(n);
  return static_cast<NodeId>(nodes_.size() - 1);
}

std::span<const double> Tape::value(NodeId id) const {
  const Node& n = nodes_[id];
  return {arena_.data() + n.offset, n.shape.numel()};
}

std::span<double> Tape::mutable_value(NodeId id) {
  const Node& n = nodes_[id];
  return {arena_.data() + n.offset, n.shape.numel()};
}

std::span<const NodeId> Tape::inputs(NodeId id) const {
  const Node& n = nodes_[id];
  return {input_pool_.data() + n.input_begin, n.input_count};
}

void Tape::finish(NodeId id) const {
  if (!check_finite_) return;
  for (double v : value(id))
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite output from ") + op_name(nodes_[id].op));
}

Var Tape::param(const Tensor& t) {
  NodeId id = push(Op::leaf, t.shape, {});
  nodes_[id].requires_grad = true;
  std::copy(t.values.begin(), t.values.end(), mutable_value(id).begin());
  return {this, id};
}

Var Tape::constant(const Tensor& t) { return constant(t.shape, t.values); }

Var Tape::constant(Shape shape, std::span<const double> values) {
  if (shape.numel() != values.size()) throw ShapeError("constant: shape does not match values");
  NodeId id = push(Op::leaf, shape, {});
  std::copy(values.begin(), values.end(), mutable_value(id).begin());
  return {this, id};
}

void Tape::clear() {
  nodes_.clear();
  arena_.clear();
  input_pool_.clear();
}

Gradients Tape::backward(Var loss) const {
  if (!loss.valid() || &loss.tape() != this || loss.id() >= nodes_.size())
    throw std::invalid_argument("backward: loss is not on this tape");
  if (nodes_[loss.id()].shape.numel() != 1) throw ShapeError("backward: loss must be a scalar");
  Gradients g;
  g.tape_ = this;
  g.data_.assign(arena_.size(), 0.0);
  g.data_[nodes_[loss.id()].offset] = 1.0;
  std::vector<char> reached(loss.id() + 1, 0);
  reached[loss.id()] = 1;
  for (NodeId id = loss.id() + 1; id-- > 0;) {
    if (!reached[id]) continue;
    const Node& n = nodes_[id];
    if (!n.requires_grad || n.op == Op::leaf) continue;
    for (NodeId in : inputs(id))
      if (nodes_[in].requires_grad) reached[in] = 1;
    backward_node(id, g.data_);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Primitives

namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw std::invalid_argument("operation on an unbound Var");
  return a.tape();
}

Tape& tape_of(Var a, Var b) {
  Tape& t = tape_of(a);
  if (!b.valid() || &b.tape() != &t) throw std::invalid_argument("operands live on different tapes");
  return t;
}

bool same_elementwise_shape(const Shape& a, const Shape& b) {
  return a == b || (a.numel() == 1 && b.numel() == 1);
}

void require_elementwise(const char* op, Var a, Var b) {
  if (!same_elementwise_shape(a.shape(), b.shape()))
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
}

template <class F>
Var unary(Op op, Var x, F f) {
  Tape& t = tape_of(x);
  const std::array<NodeId, 1> in{x.id()};
  NodeId id = t.push(op, x.shape(), in);
  auto xv = t.value(x.id());
  auto out = t.mutable_value(id);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  t.finish(id);
  return {&t, id};
}

template <class F>
Var binary(Op op, const char* name, Var a, Var b, F f) {
  Tape& t = tape_of(a, b);
  require_elementwise(name, a, b);
  const std::array<NodeId, 2> in{a.id(), b.id()};
  NodeId id = t.push(op, a.shape(), in);
  auto av = t.value(a.id());
  auto bv = t.value(b.id());
  auto out = t.mutable_value(id);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
  t.finish(id);
  return {&t, id};
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct MatmulDims {
  std::size_t m, k, n;
  Shape out;
};

MatmulDims matmul_dims(const Shape& a, const Shape& b) {
  if (a.rank() == 2 && b.rank() == 2 && a[1] == b[0]) return {a[0], a[1], b[1], Shape::matrix(a[0], b[1])};
  if (a.rank() == 2 && b.rank() == 1 && a[1] == b[0]) return {a[0], a[1], 1, Shape::vector(a[0])};
  if (a.rank() == 1 && b.rank() == 2 && a[0] == b[0]) return {1, a[0], b[1], Shape::vector(b[1])};
  throw ShapeError("matmul: incompatible shapes " + a.str() + " and " + b.str());
}

struct ConvDims {
  std::size_t channels, length, taps, out_length, offset;
};

ConvDims depthwise_dims(const Shape& x, const Shape& k, Padding pad) {
  ConvDims d{};
  if (x.rank() == 1 && k.rank() == 1) {
    d.channels = 1;
    d.length = x[0];
    d.taps = k[0];
  } else if (x.rank() == 2 && k.rank() == 2 && x[0] == k[0]) {
    d.channels = x[0];
    d.length = x[1];
    d.taps = k[1];
  } else {
    throw ShapeError("conv1d_depthwise: incompatible shapes " + x.str() + " and " + k.str());
  }
  if (d.taps == 0) throw ShapeError("conv1d_depthwise: empty kernel");
  if (pad == Padding::valid) {
    if (d.length < d.taps) throw ShapeError("conv1d_depthwise: signal shorter than kernel");
    d.out_length = d.length - d.taps + 1;
    d.offset = d.taps - 1;
  } else {
    d.out_length = d.length;
    d.offset = (d.taps - 1) / 2;
  }
  return d;
}

Shape conv_out_shape(const Shape& x, const ConvDims& d) {
  return x.rank() == 1 ? Shape::vector(d.out_length) : Shape::matrix(d.channels, d.out_length);
}

}  // namespace

Var add(Var a, Var b) {
  return binary(Op::add, "add", a, b, [](double x, double y) { return x + y; });
}
Var sub(Var a, Var b) {
  return binary(Op::sub, "sub", a, b, [](double x, double y) { return x - y; });
}
Var mul(Var a, Var b) {
  return binary(Op::mul, "mul", a, b, [](double x, double y) { return x * y; });
}
Var div(Var a, Var b) {
  for (double v : b.values())
    if (v == 0.0) throw DomainError("div: zero divisor");
  return binary(Op::div, "div", a, b, [](double x, double y) { return x / y; });
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const MatmulDims d = matmul_dims(a.shape(), b.shape());
  const std::array<NodeId, 2> in{a.id(), b.id()};
  NodeId id = t.push(Op::matmul, d.out, in);
  kernels::matmul(kernels::default_exec(), t.value(a.id()), t.value(b.id()), t.mutable_value(id), d.m,
                  d.k, d.n);
  t.finish(id);
  return {&t, id};
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Tape& t = tape_of(parts[0]);
  const bool matrices = parts[0].shape().rank() == 2;
  const std::size_t cols = matrices ? parts[0].shape()[1] : 1;
  std::size_t rows = 0;
  std::vector<NodeId> in;
  in.reserve(parts.size());
  for (Var p : parts) {
    tape_of(parts[0], p);
    const Shape& s = p.shape();
    if (matrices ? (s.rank() != 2 || s[1] != cols) : s.rank() > 1)
      throw ShapeError("concat: trailing dimensions differ");
    rows += s.rank() == 0 ? 1 : s[0];
    in.push_back(p.id());
  }
  NodeId id = t.push(Op::concat, matrices ? Shape::matrix(rows, cols) : Shape::vector(rows), in);
  auto out = t.mutable_value(id);
  std::size_t pos = 0;
  for (NodeId p : in) {
    auto v = t.value(p);
    std::copy(v.begin(), v.end(), out.begin() + static_cast<std::ptrdiff_t>(pos));
    pos += v.size();
  }
  t.finish(id);
  return {&t, id};
}

Var slice(Var x, std::size_t begin, std::size_t count) {
  Tape& t = tape_of(x);
  const Shape& s = x.shape();
  if (s.rank() == 0 || s.rank() > 2) throw ShapeError("slice: expects rank 1 or 2");
  if (begin + count > s[0]) throw ShapeError("slice: range out of bounds");
  const std::size_t row = s.rank() == 2 ? s[1] : 1;
  const Shape out_shape = s.rank() == 2 ? Shape::matrix(count, row) : Shape::vector(count);
  const std::array<NodeId, 1> in{x.id()};
  NodeId id = t.push(Op::slice, out_shape, in);
  t.mutable_node(id).i0 = begin * row;
  auto xv = t.value(x.id());
  auto out = t.mutable_value(id);
  std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(begin * row), count * row, out.begin());
  return {&t, id};
}

Var reshape(Var x, Shape shape) {
  Tape& t = tape_of(x);
  if (shape.numel() != x.size()) throw ShapeError("reshape: element count differs");
  const std::array<NodeId, 1> in{x.id()};
  NodeId id = t.push(Op::reshape, shape, in);
  auto xv = t.value(x.id());
  std::copy(xv.begin(), xv.end(), t.mutable_value(id).begin());
  return {&t, id};
}

Var sigmoid(Var x) { return unary(Op::sigmoid, x, stable_sigmoid); }
Var tanh(Var x) { return unary(Op::tanh, x, [](double v) { return std::tanh(v); }); }
Var exp(Var x) { return unary(Op::exp, x, [](double v) { return std::exp(v); }); }

Var log(Var x) {
  for (double v : x.values())
    if (!(v > 0.0)) throw DomainError("log: input must be strictly positive");
  return unary(Op::log, x, [](double v) { return std::log(v); });
}

Var relu(Var x) { return unary(Op::relu, x, [](double v) { return v > 0.0 ? v : 0.0; }); }

Var clamp(Var x, double lo, double hi) {
  if (!(lo < hi)) throw DomainError("clamp: empty interval");
  Var y = unary(Op::clamp, x, [=](double v) { return std::clamp(v, lo, hi); });
  auto& n = y.tape().mutable_node(y.id());
  n.c0 = lo;
  n.c1 = hi;
  return y;
}

Var scale_shift(Var x, double a, double b) {
  Var y = unary(Op::scale_shift, x, [=](double v) { return a * v + b; });
  y.tape().mutable_node(y.id()).c0 = a;
  return y;
}
Var scale(Var x, double a) { return scale_shift(x, a, 0.0); }
Var one_minus(Var x) { return scale_shift(x, -1.0, 1.0); }

Var mean(Var x) {
  Tape& t = tape_of(x);
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  const std::array<NodeId, 1> in{x.id()};
  NodeId id = t.push(Op::mean, Shape::scalar(), in);
  double s = 0.0;
  for (double v : t.value(x.id())) s += v;
  t.mutable_value(id)[0] = s / static_cast<double>(x.size());
  t.finish(id);
  return {&t, id};
}

Var sum(Var x) {
  Tape& t = tape_of(x);
  const std::array<NodeId, 1> in{x.id()};
  NodeId id = t.push(Op::sum, Shape::scalar(), in);
  double s = 0.0;
  for (double v : t.value(x.id())) s += v;
  t.mutable_value(id)[0] = s;
  t.finish(id);
  return {&t, id};
}

Var conv1d_depthwise(Var x, Var kernel, Padding padding) {
  Tape& t = tape_of(x, kernel);
  const ConvDims d = depthwise_dims(x.shape(), kernel.shape(), padding);
  const std::array<NodeId, 2> in{x.id(), kernel.id()};
  NodeId id = t.push(Op::conv1d_depthwise, conv_out_shape(x.shape(), d), in);
  t.mutable_node(id).i0 = d.offset;
  t.mutable_node(id).i1 = padding == Padding::valid ? 1 : 0;
  auto xv = t.value(x.id());
  auto kv = t.value(kernel.id());
  auto out = t.mutable_value(id);
  for (std::size_t c = 0; c < d.channels; ++c) {
    const double* xc = xv.data() + c * d.length;
    const double* kc = kv.data() + c * d.taps;
    double* yc = out.data() + c * d.out_length;
    for (std::size_t n = 0; n < d.out_length; ++n) {
      double s = 0.0;
      for (std::size_t j = 0; j < d.taps; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(n + d.offset) - static_cast<std::ptrdiff_t>(j);
        if (src >= 0 && src < static_cast<std::ptrdiff_t>(d.length)) s += kc[j] * xc[src];
      }
      yc[n] = s;
    }
  }
  t.finish(id);
  return {&t, id};
}

namespace {

Var pointwise_impl(Var x, Var w, const Var* bias) {
  Tape& t = tape_of(x, w);
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.rank() != 2 || ws.rank() != 2 || ws[1] != xs[0])
    throw ShapeError("conv1d_pointwise: incompatible shapes " + xs.str() + " and " + ws.str());
  const std::size_t cout = ws[0], cin = xs[0], len = xs[1];
  std::vector<NodeId> in{x.id(), w.id()};
  if (bias) {
    tape_of(x, *bias);
    if (bias->size() != cout) throw ShapeError("conv1d_pointwise: bias length mismatch");
    in.push_back(bias->id());
  }
  NodeId id = t.push(Op::conv1d_pointwise, Shape::matrix(cout, len), in);
  auto out = t.mutable_value(id);
  kernels::matmul(kernels::default_exec(), t.value(w.id()), t.value(x.id()), out, cout, cin, len);
  if (bias) {
    auto bv = t.value(bias->id());
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t l = 0; l < len; ++l) out[o * len + l] += bv[o];
  }
  t.finish(id);
  return {&t, id};
}

}  // namespace

Var conv1d_pointwise(Var x, Var w) { return pointwise_impl(x, w, nullptr); }
Var conv1d_pointwise(Var x, Var w, Var bias) { return pointwise_impl(x, w, &bias); }

Var pinball(Var actual, Var predicted, double q) {
  if (!(q > 0.0 && q < 1.0)) throw DomainError("pinball: quantile must lie in (0, 1)");
  Var y = binary(Op::pinball, "pinball", actual, predicted, [q](double a, double p) {
    const double d = a - p;
    return d >= 0.0 ? q * d : (q - 1.0) * d;
  });
  y.tape().mutable_node(y.id()).c0 = q;
  return y;
}

Var spectral_features(Var x) {
  Tape& t = tape_of(x);
  if (x.shape().rank() != 1) throw ShapeError("spectral_features: expects a vector");
  const Tensor feats = fft_features(x.values());
  const std::array<NodeId, 1> in{x.id()};
  NodeId id = t.push(Op::spectral, feats.shape, in);
  std::copy(feats.values.begin(), feats.values.end(), t.mutable_value(id).begin());
  t.finish(id);
  return {&t, id};
}

// ---------------------------------------------------------------------------
// Backward rules

void Tape::backward_node(NodeId id, std::vector<double>& grads) const {
  const Node& n = nodes_[id];
  const auto in = inputs(id);
  const std::size_t size = n.shape.numel();
  const double* g = grads.data() + n.offset;
  const double* y = arena_.data() + n.offset;
  auto gin = [&](std::size_t k) -> double* {
    const Node& src = nodes_[in[k]];
    return src.requires_grad ? grads.data() + src.offset : nullptr;
  };
  auto val = [&](std::size_t k) { return arena_.data() + nodes_[in[k]].offset; };

  switch (n.op) {
    case Op::leaf:
      return;
    case Op::add:
      for (std::size_t k = 0; k < 2; ++k)
        if (double* ga = gin(k))
          for (std::size_t i = 0; i < size; ++i) ga[i] += g[i];
      return;
    case Op::sub:
      if (double* ga = gin(0))
        for (std::size_t i = 0; i < size; ++i) ga[i] += g[i];
      if (double* gb = gin(1))
        for (std::size_t i = 0; i < size; ++i) gb[i] -= g[i];
      return;
    case Op::mul: {
      const double* a = val(0);
      const double* b = val(1);
      if (double* ga = gin(0))
        for (std::size_t i = 0; i < size; ++i) ga[i] += g[i] * b[i];
      if (double* gb = gin(1))
        for (std::size_t i = 0; i < size; ++i) gb[i] += g[i] * a[i];
      return;
    }
    case Op::div: {
      const double* b = val(1);
      if (double* ga = gin(0))
        for (std::size_t i = 0; i < size; ++i) ga[i] += g[i] / b[i];
      if (double* gb = gin(1))
        for (std::size_t i = 0; i < size; ++i) gb[i] -= g[i] * y[i] / b[i];
      return;
    }
    case Op::matmul: {
      const Node& an = nodes_[in[0]];
      const Node& bn = nodes_[in[1]];
      const MatmulDims d = matmul_dims(an.shape, bn.shape);
      const auto exec = kernels::default_exec();
      std::span<const double> gs(g, size);
      if (double* ga = gin(0))
        kernels::matmul_acc_abt(exec, gs, {val(1), bn.shape.numel()}, {ga, an.shape.numel()}, d.m, d.k, d.n);
      if (double* gb = gin(1))
        kernels::matmul_acc_atb(exec, {val(0), an.shape.numel()}, gs, {gb, bn.shape.numel()}, d.m, d.k, d.n);
      return;
    }
    case Op::concat: {
      std::size_t pos = 0;
      for (std::size_t k = 0; k < in.size(); ++k) {
        const std::size_t len = nodes_[in[k]].shape.numel();
        if (double* gp = gin(k))
          for (std::size_t i = 0; i < len; ++i) gp[i] += g[pos + i];
        pos += len;
      }
      return;
    }
    case Op::slice:
      if (double* gx = gin(0))
        for (std::size_t i = 0; i < size; ++i) gx[n.i0 + i] += g[i];
      return;
    case Op::reshape:
      if (double* gx = gin(0))
        for (std::size_t i = 0; i < size; ++i) gx[i] += g[i];
      return;
    case Op::sigmoid:
      if (double* gx = gin(0))
        for (std::size_t i = 0; i < size; ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
      return;
    case Op::tanh:
      if (double* gx = gin(0))
        for (std::size_t i = 0; i < size; ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
      return;
    case Op::exp:
      if (double* gx = gin(0))
        for (std::size_t i = 0; i < size; ++i) gx[i] += g[i] * y[i];
      return;
    case Op::log: {
      const double* x = val(0);
      if (double* gx = gin(0))
        for (std::size_t i = 0; i < size; ++i) gx[i] += g[i] / x[i];
      return;
    }
    case Op::relu: {
      const double* x = val(0);
      if (double* gx = gin(0))
        for (std::size_t i = 0; i < size; ++i)
          if (x[i] > 0.0) gx[i] += g[i];
      return;
    }
    case Op::clamp: {
      const double* x = val(0);
      if (double* gx = gin(0))
        for (std::size_t i = 0; i < size; ++i)
          if (x[i] > n.c0 && x[i] < n.c1) gx[i] += g[i];
      return;
    }
    case Op::scale_shift:
      if (double* gx = gin(0))
        for (std::size_t i = 0; i < size; ++i) gx[i] += g[i] * n.c0;
      return;
    case Op::mean:
    case Op::sum: {
      const std::size_t len = nodes_[in[0]].shape.numel();
      const double gi = n.op == Op::mean ? g[0] / static_cast<double>(len) : g[0];
      if (double* gx = gin(0))
        for (std::size_t i = 0; i < len; ++i) gx[i] += gi;
      return;
    }
    case Op::conv1d_depthwise: {
      const Node& xn = nodes_[in[0]];
      const Node& kn = nodes_[in[1]];
      const ConvDims d = depthwise_dims(xn.shape, kn.shape, n.i1 ? Padding::valid : Padding::same);
      const double* xv = val(0);
      const double* kv = val(1);
      double* gx = gin(0);
      double* gk = gin(1);
      for (std::size_t c = 0; c < d.channels; ++c) {
        for (std::size_t o = 0; o < d.out_length; ++o) {
          const double go = g[c * d.out_length + o];
          if (go == 0.0) continue;
          for (std::size_t j = 0; j < d.taps; ++j) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(o + n.i0) - static_cast<std::ptrdiff_t>(j);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(d.length)) continue;
            if (gx) gx[c * d.length + static_cast<std::size_t>(src)] += go * kv[c * d.taps + j];
            if (gk) gk[c * d.taps + j] += go * xv[c * d.length + static_cast<std::size_t>(src)];
          }
        }
      }
      return;
    }
    case Op::conv1d_pointwise: {
      const Node& xn = nodes_[in[0]];
      const Node& wn = nodes_[in[1]];
      const std::size_t cout = wn.shape[0], cin = wn.shape[1], len = xn.shape[1];
      const auto exec = kernels::default_exec();
      std::span<const double> gs(g, size);
      if (double* gw = gin(1)) kernels::matmul_acc_abt(exec, gs, {val(0), cin * len}, {gw, cout * cin}, cout, cin, len);
      if (double* gx = gin(0)) kernels::matmul_acc_atb(exec, {val(1), cout * cin}, gs, {gx, cin * len}, cout, cin, len);
      if (in.size() > 2)
        if (double* gb = gin(2))
          for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t l = 0; l < len; ++l) gb[o] += g[o * len + l];
      return;
    }
    case Op::pinball: {
      const double* a = val(0);
      const double* p = val(1);
      const double q = n.c0;
      double* ga = gin(0);
      double* gp = gin(1);
      for (std::size_t i = 0; i < size; ++i) {
        const double slope = (a[i] - p[i]) >= 0.0 ? q : q - 1.0;
        if (ga) ga[i] += g[i] * slope;
        if (gp) gp[i] -= g[i] * slope;
      }
      return;
    }
    case Op::spectral: {
      double* gx = gin(0);
      if (!gx) return;
      const std::size_t w = n.shape[1];
      const double* re = y + kReal * w;
      const double* im = y + kImag * w;
      const double* mag = y + kMagnitude * w;
      std::vector<Complex> gspec(w);
      for (std::size_t k = 0; k < w; ++k) {
        double gre = g[kReal * w + k];
        double gim = g[kImag * w + k];
        if (mag[k] > 0.0) {
          const double m2 = mag[k] * mag[k];
          gre += g[kMagnitude * w + k] * re[k] / mag[k] - g[kPhase * w + k] * im[k] / m2;
          gim += g[kMagnitude * w + k] * im[k] / mag[k] + g[kPhase * w + k] * re[k] / m2;
        }
        // Imaginary parts of the DC and Nyquist bins are pinned to zero.
        if (k == 0 || (w % 2 == 0 && k == w / 2)) gim = 0.0;
        gspec[k] = Complex(gre, -gim);
      }
      const auto back = fft(gspec);
      for (std::size_t t = 0; t < w; ++t) gx[t] += back[t].real() + g[kRaw * w + t];
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// Finite-difference check

double grad_check(const ScalarFn& f, std::span<const Tensor> params, double epsilon, double floor) {
  if (!(epsilon > 0.0 && epsilon <= 1e-2)) throw DomainError("grad_check: epsilon must lie in (0, 1e-2]");
  if (!(floor > 0.0)) throw DomainError("grad_check: floor must be positive");
  Tape tape;
  auto evaluate = [&](std::span<const Tensor> ps) {
    tape.clear();
    std::vector<Var> vars;
    vars.reserve(ps.size());
    for (const Tensor& p : ps) vars.push_back(tape.param(p));
    Var out = f(tape, vars);
    if (out.size() != 1) throw ShapeError("grad_check: function must return a scalar");
    return std::pair{out, std::move(vars)};
  };

  auto [loss, vars] = evaluate(params);
  const double base = loss.value();
  std::vector<std::vector<double>> analytic;
  {
    const Gradients grads = tape.backward(loss);
    for (Var v : vars) {
      auto gv = grads[v];
      analytic.emplace_back(gv.begin(), gv.end());
    }
  }
  if (evaluate(params).first.value() != base)
    throw std::runtime_error("grad_check: function is not deterministic between evaluations");

  std::vector<Tensor> work(params.begin(), params.end());
  double worst = 0.0;
  for (std::size_t p = 0; p < work.size(); ++p) {
    for (std::size_t i = 0; i < work[p].size(); ++i) {
      const double orig = work[p][i];
      work[p][i] = orig + epsilon;
      const double up = evaluate(work).first.value();
      work[p][i] = orig - epsilon;
      const double down = evaluate(work).first.value();
      work[p][i] = orig;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic[p][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace ctxrnn
