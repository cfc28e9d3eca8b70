#pragma once

#include <complex>
#include <numbers>
#include <vector>

#include "uformer/common.hpp"

namespace uformer {

// Iterative radix-2 FFT in double precision. Sizes are powers of two only,
// which covers every transform this project performs.
inline void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  require((n & (n - 1)) == 0 && n > 0, "FFT size must be a power of two");

  // Bit-reversal permutation.
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }

  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang =
        (inverse ? 2.0 : -2.0) * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& v : a) v *= inv;
  }
}

// Real-input FFT, returning the N/2 + 1 non-redundant bins.
inline std::vector<std::complex<double>> rfft(const std::vector<double>& x) {
  std::vector<std::complex<double>> a(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) a[i] = {x[i], 0.0};
  fft_inplace(a, false);
  a.resize(x.size() / 2 + 1);
  return a;
}

// Inverse of rfft under the convention that DC and Nyquist bins are purely
// real: any imaginary part supplied there is ignored.
inline std::vector<double> irfft(const std::vector<std::complex<double>>& bins,
                                 std::size_t n) {
  require(bins.size() == n / 2 + 1, "irfft bin count does not match size");
  std::vector<std::complex<double>> a(n);
  a[0] = {bins[0].real(), 0.0};
  a[n / 2] = {bins[n / 2].real(), 0.0};
  for (std::size_t k = 1; k < n / 2; ++k) {
    a[k] = bins[k];
    a[n - k] = std::conj(bins[k]);
  }
  fft_inplace(a, true);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i].real();
  return out;
}

}  // namespace uformer
