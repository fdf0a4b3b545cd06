#include "ctxrnn/wdrnn.hpp"

#include "ctxrnn/errors.hpp"

namespace ctxrnn {

CellMemory zero_memory(const DRNNCellShape& shape) {
  CellMemory m;
  m.c.assign(shape.dilation, std::vector<double>(shape.state(), 0.0));
  m.h.assign(shape.dilation, std::vector<double>(shape.s_h, 0.0));
  return m;
}

CellHistory bind_memory(Tape& tape, const CellMemory& memory) {
  CellHistory h;
  for (const auto& c : memory.c) h.c.push_back(tape.constant(Shape::vector(c.size()), c));
  for (const auto& v : memory.h) h.h.push_back(tape.constant(Shape::vector(v.size()), v));
  return h;
}

CellMemory snapshot(const CellHistory& history) {
  CellMemory m;
  for (const Var& c : history.c) m.c.emplace_back(c.values().begin(), c.values().end());
  for (const Var& h : history.h) m.h.emplace_back(h.values().begin(), h.values().end());
  return m;
}

DRNNOutput drnn_cell_forward(Var x, CellHistory& history, const DRNNCellParams& params) {
  const DRNNCellShape& s = params.shape;
  const std::size_t S = s.state();
  if (x.size() != s.input) throw ShapeError("drnn_cell_forward: input width mismatch");
  if (history.c.size() != s.dilation || history.h.size() != s.dilation)
    throw ShapeError("drnn_cell_forward: history length must equal the dilation");

  const Var h_recent = history.h.back(), h_dilated = history.h.front();
  const Var c_recent = history.c.back(), c_dilated = history.c.front();
  Var pre = add(matmul(params.W, x), params.b);
  if (s.s_h > 0) pre = add(add(pre, matmul(params.V, h_recent)), matmul(params.U, h_dilated));
  const Var gates = sigmoid(slice(pre, 0, 3 * S));
  const Var f = slice(gates, 0, S);
  const Var u = slice(gates, S, S);
  const Var o = slice(gates, 2 * S, S);
  const Var candidate = tanh(slice(pre, 3 * S, S));
  const Var fused = add(mul(f, c_recent), mul(one_minus(f), c_dilated));
  const Var c = add(mul(u, fused), mul(one_minus(u), candidate));
  DRNNOutput out;
  out.c = c;
  out.out = mul(o, c);
  if (s.s_m > 0) out.m = slice(out.out, 0, s.s_m);
  out.h = s.s_h > 0 ? slice(out.out, s.s_m, s.s_h) : Var{};

  history.c.pop_front();
  history.c.push_back(c);
  history.h.pop_front();
  history.h.push_back(out.h.valid() ? out.h : x.tape().constant(Tensor(Shape::vector(0))));
  return out;
}

Var wdrnn_cell_forward(Var x, CellHistory& bottom_history, CellHistory& top_history, const DRNNCellParams& bottom,
                       const DRNNCellParams& top) {
  if (bottom.shape.s_m != x.size()) throw ShapeError("wdrnn_cell_forward: bottom s_m must equal the input width");
  const DRNNOutput b = drnn_cell_forward(x, bottom_history, bottom);
  const Var weighted = mul(exp(b.m), x);
  return drnn_cell_forward(weighted, top_history, top).h;
}

Var stack_forward(Var x, StackHistory& history, std::span<const WdrnnLayer> layers) {
  if (history.bottom.size() != layers.size() || history.top.size() != layers.size())
    throw ShapeError("stack_forward: history/layer count mismatch");
  Var y = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Var out = wdrnn_cell_forward(y, history.bottom[l], history.top[l], layers[l].bottom, layers[l].top);
    if (l == 0) {
      y = out;
    } else {
      if (out.size() != y.size()) throw ShapeError("stack_forward: residual width mismatch");
      y = add(out, y);
    }
  }
  return y;
}

Var embed_calendar(std::span<const double> onehot, Var embedding) {
  if (onehot.size() != embedding.shape().rows()) throw ShapeError("embed_calendar: one-hot width mismatch");
  std::size_t ones = 0;
  for (double v : onehot) {
    if (v != 0.0 && v != 1.0) throw DomainError("embed_calendar: input is not a one-hot block");
    ones += v == 1.0;
  }
  if (ones != 4) throw DomainError("embed_calendar: expected exactly four ones");
  Tape& tape = embedding.tape();
  return matmul(tape.constant(Shape::vector(onehot.size()), onehot), embedding);
}

}  // namespace ctxrnn
