#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mowe/rng.hpp"
#include "mowe/tensor.hpp"

namespace testutil {

template <typename T>
mowe::Tensor<T> random_tensor(mowe::Shape shape, std::uint64_t seed, double scale = 1.0) {
    mowe::Rng rng(seed);
    return mowe::Tensor<T>::randn(std::move(shape), rng, scale);
}

template <typename T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

/// Reference triple-loop matrix product.
template <typename T>
std::vector<T> matmul_ref(std::size_t M, std::size_t K, std::size_t P, const std::vector<T>& a,
                          const std::vector<T>& b) {
    std::vector<T> c(M * P, T(0));
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t j = 0; j < P; ++j) c[i * P + j] += a[i * K + k] * b[k * P + j];
    return c;
}

}  // namespace testutil
