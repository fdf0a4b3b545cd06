#pragma once

#include <cstddef>
#include <span>

#include "ctxrnn/tape.hpp"

namespace ctxrnn {

/// Shared weights of the context convolution stack.
///   block1: depthwise (5×k) → pointwise (C×5, bias C), residual via a 1×1
///           projection (C×5) of the input
///   block2: depthwise (C×k) → pointwise (C×C, bias C), identity residual
///   reduce: (u+2) × C·W linear map with bias (u+2)
struct ConvStackParams {
  Var dw1, pw1, pw1_bias, proj1;
  Var dw2, pw2, pw2_bias;
  Var reduce, reduce_bias;
};

struct ContextOutput {
  Var r;            ///< u values
  Var delta_alpha;  ///< scalar correction for this context series' ES
  Var delta_beta;
};

/// Each block is relu(pointwise(depthwise(x)) + residual(x)); the flattened
/// block-2 map is reduced to u + 2 values.
ContextOutput context_conv_forward(Var stack, const ConvStackParams& params, std::size_t u);

/// Concatenation in context-batch order.
Var assemble_context(std::span<const Var> per_series, std::size_t expected_count);

/// r ⊗ g elementwise.
Var modulate(Var r, Var g);

}  // namespace ctxrnn
