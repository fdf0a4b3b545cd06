#include "ctxrnn/spectral.hpp"

#include <cmath>
#include <numbers>

#include "ctxrnn/errors.hpp"

namespace ctxrnn {

namespace {

std::size_t smallest_factor(std::size_t n) {
  for (std::size_t f : {4, 2, 3, 5, 7})
    if (n % f == 0) return f;
  for (std::size_t f = 11; f * f <= n; f += 2)
    if (n % f == 0) return f;
  return n;
}

Complex twiddle(std::size_t k, std::size_t n) {
  const double angle = -2.0 * std::numbers::pi * static_cast<double>(k % n) / static_cast<double>(n);
  return {std::cos(angle), std::sin(angle)};
}

// Decimation in time: split x (stride s) into `radix` interleaved
// subsequences, transform each, then combine with twiddles.
void fft_rec(const Complex* x, std::size_t n, std::size_t stride, Complex* out) {
  if (n == 1) {
    out[0] = x[0];
    return;
  }
  const std::size_t radix = smallest_factor(n);
  const std::size_t m = n / radix;
  if (m == 1) {
    for (std::size_t k = 0; k < n; ++k) {
      Complex s = 0.0;
      for (std::size_t t = 0; t < n; ++t) s += x[t * stride] * twiddle(k * t, n);
      out[k] = s;
    }
    return;
  }
  std::vector<Complex> sub(n);
  for (std::size_t r = 0; r < radix; ++r) fft_rec(x + r * stride, m, stride * radix, sub.data() + r * m);
  for (std::size_t k = 0; k < n; ++k) {
    Complex s = 0.0;
    for (std::size_t r = 0; r < radix; ++r) s += sub[r * m + k % m] * twiddle(r * k, n);
    out[k] = s;
  }
}

}  // namespace

std::vector<Complex> fft(std::span<const Complex> x) {
  std::vector<Complex> out(x.size());
  if (!x.empty()) fft_rec(x.data(), x.size(), 1, out.data());
  return out;
}

std::vector<Complex> fft_real(std::span<const double> x) {
  std::vector<Complex> cx(x.begin(), x.end());
  auto out = fft(cx);
  if (!out.empty()) out[0].imag(0.0);
  if (out.size() % 2 == 0 && !out.empty()) out[out.size() / 2].imag(0.0);
  return out;
}

Tensor fft_features(std::span<const double> x) {
  const std::size_t w = x.size();
  if (w < 2) throw ShapeError("fft_features needs at least 2 samples");
  const auto spec = fft_real(x);
  Tensor out(Shape::matrix(kSpectralChannels, w));
  for (std::size_t k = 0; k < w; ++k) {
    out.at(kReal, k) = spec[k].real();
    out.at(kImag, k) = spec[k].imag();
    out.at(kMagnitude, k) = std::hypot(spec[k].real(), spec[k].imag());
    out.at(kPhase, k) = std::atan2(spec[k].imag(), spec[k].real());
    out.at(kRaw, k) = x[k];
  }
  return out;
}

}  // namespace ctxrnn
