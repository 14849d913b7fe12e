// Copyright 2026 The mplssl Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <complex>
#include <vector>

#include "mpl/core.hpp"

namespace mpl::fft {

using cplx = std::complex<double>;

namespace detail {

inline bool is_pow2(size_t n) { return n && (n & (n - 1)) == 0; }

inline size_t next_pow2(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// In-place iterative radix-2 Cooley-Tukey. n must be a power of two.
inline void fft_pow2(std::vector<cplx>& a, bool inverse) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 2.0 : -2.0) * 3.141592653589793238462643383279502884 /
                       static_cast<double>(len);
    const cplx wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        cplx u = a[i + k];
        cplx v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse) {
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= inv;
  }
}

}  // namespace detail

// DFT of arbitrary length: radix-2 when possible, Bluestein's chirp-z otherwise.
inline void fft(std::vector<cplx>& a, bool inverse = false) {
  const size_t n = a.size();
  if (n <= 1) return;
  if (detail::is_pow2(n)) {
    detail::fft_pow2(a, inverse);
    return;
  }
  // Bluestein: x_k * chirp_k convolved with conjugate chirp.
  const size_t m = detail::next_pow2(2 * n + 1);
  std::vector<cplx> chirp(n);
  const double sgn = inverse ? 1.0 : -1.0;
  for (size_t k = 0; k < n; ++k) {
    // k^2 mod 2n keeps the phase argument small and exact
    const double ang = sgn * 3.141592653589793238462643383279502884 *
                       static_cast<double>((k * k) % (2 * n)) / static_cast<double>(n);
    chirp[k] = cplx(std::cos(ang), std::sin(ang));
  }
  std::vector<cplx> u(m, cplx(0, 0)), v(m, cplx(0, 0));
  for (size_t k = 0; k < n; ++k) u[k] = a[k] * chirp[k];
  for (size_t k = 0; k < n; ++k) {
    v[k] = std::conj(chirp[k]);
    if (k) v[m - k] = std::conj(chirp[k]);
  }
  detail::fft_pow2(u, false);
  detail::fft_pow2(v, false);
  for (size_t k = 0; k < m; ++k) u[k] *= v[k];
  detail::fft_pow2(u, true);
  for (size_t k = 0; k < n; ++k) a[k] = u[k] * chirp[k];
  if (inverse) {
    const double invn = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= invn;
  }
}

// Real-input DFT, returns the n/2+1 non-redundant bins.
inline std::vector<cplx> rfft(const std::vector<double>& x) {
  std::vector<cplx> a(x.size());
  for (size_t i = 0; i < x.size(); ++i) a[i] = cplx(x[i], 0.0);
  fft(a, false);
  a.resize(x.size() / 2 + 1);
  return a;
}

// Inverse of rfft for a real signal of length n.
inline std::vector<double> irfft(const std::vector<cplx>& bins, size_t n) {
  require_input(bins.size() == n / 2 + 1, "irfft: bin count does not match length");
  std::vector<cplx> a(n);
  for (size_t k = 0; k < bins.size(); ++k) a[k] = bins[k];
  for (size_t k = bins.size(); k < n; ++k) a[k] = std::conj(bins[n - k]);
  fft(a, true);
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = a[i].real();
  return out;
}

}  // namespace mpl::fft
