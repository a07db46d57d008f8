#pragma once

#include <complex>
#include <vector>

#include "mowe/common.hpp"

namespace mowe {

/// In-place radix-2 complex FFT; n must be a power of two.
void fft(std::vector<std::complex<double>>& a, bool inverse);

/// 2D transform of a row-major h x w complex grid (both powers of two).
void fft2(std::vector<std::complex<double>>& grid, std::size_t h, std::size_t w, bool inverse);

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

}  // namespace mowe
