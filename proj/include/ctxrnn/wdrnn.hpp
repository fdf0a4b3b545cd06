#pragma once

#include <cstddef>
#include <deque>
#include <span>
#include <vector>

#include "ctxrnn/tape.hpp"

namespace ctxrnn {

/// Sizes of one dilated cell. The cell state has s_m + s_h slots; the first
/// s_m of o⊗c form the weight vector m, the remaining s_h the controlling
/// state h that feeds the recurrence.
struct DRNNCellShape {
  std::size_t input = 0;
  std::size_t s_m = 0;
  std::size_t s_h = 0;
  std::size_t dilation = 1;

  std::size_t state() const { return s_m + s_h; }
};

/// Gate weights stacked in the order f, u, o, c̃:
/// W (4S×input), V (4S×s_h), U (4S×s_h), b (4S), S = s_m + s_h.
struct DRNNCellParams {
  DRNNCellShape shape;
  Var W, V, U, b;
};

/// Last d cell states c (S) and controlling states h (s_h), oldest first.
struct CellHistory {
  std::deque<Var> c;
  std::deque<Var> h;
};

/// Plain-value snapshot of a CellHistory, used to carry state across tapes.
struct CellMemory {
  std::vector<std::vector<double>> c;
  std::vector<std::vector<double>> h;
};

/// Zero pre-history of length d.
CellMemory zero_memory(const DRNNCellShape& shape);
CellHistory bind_memory(Tape& tape, const CellMemory& memory);
CellMemory snapshot(const CellHistory& history);

struct DRNNOutput {
  Var out;  ///< o⊗c, S slots
  Var m;    ///< first s_m slots (invalid when s_m = 0)
  Var h;    ///< last s_h slots
  Var c;
};

/// One step of the dilated cell:
///   f, u, o = σ(W x + V h_{t−1} + U h_{t−d} + b), c̃ = tanh(…)
///   c_t = u⊗(f⊗c_{t−1} + (1−f)⊗c_{t−d}) + (1−u)⊗c̃,  out = o⊗c_t
/// Pushes c_t and h_t into `history`.
DRNNOutput drnn_cell_forward(Var x, CellHistory& history, const DRNNCellParams& params);

/// Bottom cell emits m; the top cell consumes exp(m)⊗x and its h is y.
Var wdrnn_cell_forward(Var x, CellHistory& bottom_history, CellHistory& top_history, const DRNNCellParams& bottom,
                       const DRNNCellParams& top);

struct WdrnnLayer {
  DRNNCellParams bottom, top;
};

struct StackHistory {
  std::vector<CellHistory> bottom, top;
};

/// Layer 1 has no residual; layers 2..L add their input to their output.
Var stack_forward(Var x, StackHistory& history, std::span<const WdrnnLayer> layers);

/// Sum of the embedding rows selected by a 74-dim calendar one-hot with
/// exactly four ones. Throws DomainError otherwise.
Var embed_calendar(std::span<const double> onehot, Var embedding);

}  // namespace ctxrnn
