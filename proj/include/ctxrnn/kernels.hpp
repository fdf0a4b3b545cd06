#pragma once

// Dense inner-loop kernels. Each kernel has a serial reference and an
// OpenMP variant; the OpenMP variant partitions output rows only, so every
// output element is accumulated in the same order and results are
// bit-identical to the serial path.

#include <cstddef>
#include <span>
#include <vector>

namespace ctxrnn::kernels {

enum class Exec { serial, parallel };

/// Process-wide default used by the tape primitives.
void set_default_exec(Exec exec);
Exec default_exec();

/// C[m×n] = A[m×k] · B[k×n]
void matmul(Exec exec, std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);

/// dA[m×k] += G[m×n] · B[k×n]ᵀ
void matmul_acc_abt(Exec exec, std::span<const double> g, std::span<const double> b,
                    std::span<double> da, std::size_t m, std::size_t k, std::size_t n);

/// dB[k×n] += A[m×k]ᵀ · G[m×n]
void matmul_acc_atb(Exec exec, std::span<const double> a, std::span<const double> g,
                    std::span<double> db, std::size_t m, std::size_t k, std::size_t n);

/// Fills an n×n symmetric matrix with f(i, j) for i < j and `diag(i)` on the
/// diagonal. Pairs are independent so the parallel variant only changes the
/// assignment of pairs to threads.
template <class PairFn, class DiagFn>
std::vector<double> pairwise_symmetric(Exec exec, std::size_t n, PairFn&& f, DiagFn&& diag) {
  std::vector<double> out(n * n, 0.0);
  const std::size_t pairs = n * (n - (n > 0 ? 1 : 0)) / 2;
  std::vector<std::size_t> row_of(pairs), col_of(pairs);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j, ++k) {
      row_of[k] = i;
      col_of[k] = j;
    }
  auto body = [&](std::size_t p) {
    const double v = f(row_of[p], col_of[p]);
    out[row_of[p] * n + col_of[p]] = v;
    out[col_of[p] * n + row_of[p]] = v;
  };
  if (exec == Exec::parallel) {
    const long np = static_cast<long>(pairs);
#pragma omp parallel for schedule(dynamic, 4)
    for (long p = 0; p < np; ++p) body(static_cast<std::size_t>(p));
  } else {
    for (std::size_t p = 0; p < pairs; ++p) body(p);
  }
  for (std::size_t i = 0; i < n; ++i) out[i * n + i] = diag(i);
  return out;
}

}  // namespace ctxrnn::kernels
