#include "mowe/fft.hpp"

#include <cmath>
#include <numbers>

namespace mowe {

void fft(std::vector<std::complex<double>>& a, bool inverse) {
    const std::size_t n = a.size();
    if (!is_pow2(n)) throw InternalError("fft length must be a power of two");
    if (n <= 1) return;

    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }

    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * std::numbers::pi / static_cast<double>(len);
        const std::complex<double> wn(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                std::complex<double> u = a[i + j];
                std::complex<double> t = a[i + j + len / 2] * w;
                a[i + j] = u + t;
                a[i + j + len / 2] = u - t;
                w *= wn;
            }
        }
    }
    if (inverse) {
        const double inv = 1.0 / static_cast<double>(n);
        for (auto& x : a) x *= inv;
    }
}

void fft2(std::vector<std::complex<double>>& grid, std::size_t h, std::size_t w, bool inverse) {
    if (grid.size() != h * w) throw InternalError("fft2 grid size mismatch");
    if (!is_pow2(h) || !is_pow2(w)) throw InternalError("fft2 dims must be powers of two");
    std::vector<std::complex<double>> line;
    line.reserve(h > w ? h : w);
    // rows
    line.resize(w);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) line[c] = grid[r * w + c];
        fft(line, inverse);
        for (std::size_t c = 0; c < w; ++c) grid[r * w + c] = line[c];
    }
    // columns
    line.resize(h);
    for (std::size_t c = 0; c < w; ++c) {
        for (std::size_t r = 0; r < h; ++r) line[r] = grid[r * w + c];
        fft(line, inverse);
        for (std::size_t r = 0; r < h; ++r) grid[r * w + c] = line[r];
    }
}

}  // namespace mowe
