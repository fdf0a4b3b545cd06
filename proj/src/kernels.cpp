#include "ctxrnn/kernels.hpp"

#include <algorithm>
#include <atomic>

namespace ctxrnn::kernels {

namespace {

std::atomic<Exec> g_default_exec{Exec::parallel};

// Below this many multiply-adds the thread fork costs more than it saves.
constexpr std::size_t kParallelWork = std::size_t{1} << 15;

}  // namespace

void set_default_exec(Exec exec) { g_default_exec.store(exec); }
Exec default_exec() { return g_default_exec.load(); }

void matmul(Exec exec, std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n) {
  auto row = [&](std::size_t i) {
    double* ci = c.data() + i * n;
    const double* ai = a.data() + i * k;
    if (n == 1) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * b[p];
      *ci = s;
      return;
    }
    std::fill(ci, ci + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  };
  if (exec == Exec::parallel && m > 1) {
    const long lm = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k >= kParallelWork)
    for (long i = 0; i < lm; ++i) row(static_cast<std::size_t>(i));
  } else {
    for (std::size_t i = 0; i < m; ++i) row(i);
  }
}

void matmul_acc_abt(Exec exec, std::span<const double> g, std::span<const double> b,
                    std::span<double> da, std::size_t m, std::size_t k, std::size_t n) {
  auto row = [&](std::size_t i) {
    const double* gi = g.data() + i * n;
    double* dai = da.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b.data() + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += gi[j] * bp[j];
      dai[p] += s;
    }
  };
  if (exec == Exec::parallel && m > 1) {
    const long lm = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k >= kParallelWork)
    for (long i = 0; i < lm; ++i) row(static_cast<std::size_t>(i));
  } else {
    for (std::size_t i = 0; i < m; ++i) row(i);
  }
}

void matmul_acc_atb(Exec exec, std::span<const double> a, std::span<const double> g,
                    std::span<double> db, std::size_t m, std::size_t k, std::size_t n) {
  // Row p of dB accumulates over r in ascending order in both variants.
  auto row = [&](std::size_t p) {
    double* dbp = db.data() + p * n;
    for (std::size_t r = 0; r < m; ++r) {
      const double arp = a[r * k + p];
      if (arp == 0.0) continue;
      const double* gr = g.data() + r * n;
      for (std::size_t j = 0; j < n; ++j) dbp[j] += arp * gr[j];
    }
  };
  if (exec == Exec::parallel && k > 1) {
    const long lk = static_cast<long>(k);
#pragma omp parallel for schedule(static) if (m * n * k >= kParallelWork)
    for (long p = 0; p < lk; ++p) row(static_cast<std::size_t>(p));
  } else {
    for (std::size_t p = 0; p < k; ++p) row(p);
  }
}

}  // namespace ctxrnn::kernels
