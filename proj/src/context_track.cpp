#include "ctxrnn/context_track.hpp"

#include "ctxrnn/errors.hpp"

namespace ctxrnn {

ContextOutput context_conv_forward(Var stack, const ConvStackParams& p, std::size_t u) {
  if (stack.shape().rank() != 2) throw ShapeError("context_conv_forward: stack must be channels×W");
  const std::size_t width = stack.shape()[1];
  const Var block1 = relu(add(conv1d_pointwise(conv1d_depthwise(stack, p.dw1), p.pw1, p.pw1_bias),
                              conv1d_pointwise(stack, p.proj1)));
  const Var block2 = relu(add(conv1d_pointwise(conv1d_depthwise(block1, p.dw2), p.pw2, p.pw2_bias), block1));
  const Var flat = reshape(block2, Shape::vector(block2.shape()[0] * width));
  const Var out = add(matmul(p.reduce, flat), p.reduce_bias);
  if (out.size() != u + 2) throw ShapeError("context_conv_forward: reduction must produce u + 2 values");
  return {slice(out, 0, u), slice(out, u, 1), slice(out, u + 1, 1)};
}

Var assemble_context(std::span<const Var> per_series, std::size_t expected_count) {
  if (per_series.size() != expected_count) throw ShapeError("assemble_context: wrong number of context vectors");
  return concat(per_series);
}

Var modulate(Var r, Var g) {
  if (r.size() != g.size()) throw ShapeError("modulate: length mismatch");
  return mul(r, g);
}

}  // namespace ctxrnn
