#pragma once

#include <complex>
#include <span>
#include <vector>

#include "ctxrnn/tensor.hpp"

namespace ctxrnn {

using Complex = std::complex<double>;

/// Forward DFT X_k = Σ_t x_t e^{−2πi kt/n} by mixed-radix Cooley–Tukey.
/// Any length is accepted; prime factors above 7 fall back to a direct
/// sum over that factor.
std::vector<Complex> fft(std::span<const Complex> x);
std::vector<Complex> fft_real(std::span<const double> x);

/// Channel layout of the spectral feature stack.
enum SpectralChannel : std::size_t { kReal = 0, kImag = 1, kMagnitude = 2, kPhase = 3, kRaw = 4 };
inline constexpr std::size_t kSpectralChannels = 5;

/// 5×W stack [Re, Im, |X|, arg X, x] of the full-length DFT of x (W ≥ 2).
/// The imaginary part of the DC bin (and of the Nyquist bin for even W) is
/// exactly zero, so those phases are 0 or π.
Tensor fft_features(std::span<const double> x);

}  // namespace ctxrnn
