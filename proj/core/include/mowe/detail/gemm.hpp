#pragma once

#include <cstddef>
#include <cstring>
#include <type_traits>

namespace mowe::detail {

template <typename T>
struct VecOf;

template <>
struct VecOf<float> {
    typedef float type __attribute__((vector_size(64)));
    static constexpr std::size_t width = 16;
};

template <>
struct VecOf<double> {
    typedef double type __attribute__((vector_size(64)));
    static constexpr std::size_t width = 8;
};

template <typename T>
inline typename VecOf<T>::type vload(const T* p) {
    typename VecOf<T>::type v;
    std::memcpy(&v, p, sizeof(v));
    return v;
}

template <typename T>
inline void vstore(T* p, typename VecOf<T>::type v) {
    std::memcpy(p, &v, sizeof(v));
}

/// C[M x P] = (or +=) A[M x K] * B[K x P], all row-major.
/// The float instantiation (training and inference) uses a register-blocked
/// 8x(2 vec) microkernel. Wider types belong to the verification mode and use
/// compensated scalar dot products, keeping gradient-check noise floors below
/// the documented tolerances. The summation order is fixed either way, so
/// results do not depend on how calls are distributed over threads.
template <bool Accumulate, typename T>
void gemm_impl(std::size_t M, std::size_t K, std::size_t P, const T* A, const T* B, T* C) {
    constexpr bool kVectorized = std::is_same_v<T, float>;
    if constexpr (kVectorized) {
        using V = typename VecOf<T>::type;
        constexpr std::size_t W = VecOf<T>::width;
        constexpr std::size_t MR = 8;
        constexpr std::size_t NR = 2 * W;

        const std::size_t m_main = M - M % MR;
        const std::size_t p_main = P - P % NR;

        for (std::size_t i0 = 0; i0 < m_main; i0 += MR) {
            for (std::size_t j0 = 0; j0 < p_main; j0 += NR) {
                V acc[MR][2];
                for (std::size_t r = 0; r < MR; ++r) {
                    if (Accumulate) {
                        acc[r][0] = vload(C + (i0 + r) * P + j0);
                        acc[r][1] = vload(C + (i0 + r) * P + j0 + W);
                    } else {
                        acc[r][0] = V{};
                        acc[r][1] = V{};
                    }
                }
                const T* a = A + i0 * K;
                for (std::size_t k = 0; k < K; ++k) {
                    V b0 = vload(B + k * P + j0);
                    V b1 = vload(B + k * P + j0 + W);
                    for (std::size_t r = 0; r < MR; ++r) {
                        T s = a[r * K + k];
                        acc[r][0] += s * b0;
                        acc[r][1] += s * b1;
                    }
                }
                for (std::size_t r = 0; r < MR; ++r) {
                    vstore(C + (i0 + r) * P + j0, acc[r][0]);
                    vstore(C + (i0 + r) * P + j0 + W, acc[r][1]);
                }
            }
            // column tail
            if (p_main < P) {
                for (std::size_t r = i0; r < i0 + MR; ++r) {
                    if (!Accumulate)
                        for (std::size_t j = p_main; j < P; ++j) C[r * P + j] = T(0);
                    for (std::size_t k = 0; k < K; ++k) {
                        T s = A[r * K + k];
                        const T* b = B + k * P;
                        for (std::size_t j = p_main; j < P; ++j) C[r * P + j] += s * b[j];
                    }
                }
            }
        }
        // row tail
        for (std::size_t i = m_main; i < M; ++i) {
            T* c = C + i * P;
            if (!Accumulate)
                for (std::size_t j = 0; j < P; ++j) c[j] = T(0);
            for (std::size_t k = 0; k < K; ++k) {
                T s = A[i * K + k];
                const T* b = B + k * P;
                for (std::size_t j = 0; j < P; ++j) c[j] += s * b[j];
            }
        }
    } else {
        // extended-precision path: compensated dot products keep the
        // rounding noise of oracle evaluations below the finite-difference
        // resolution
        for (std::size_t i = 0; i < M; ++i) {
            for (std::size_t j = 0; j < P; ++j) {
                T acc = Accumulate ? C[i * P + j] : T(0);
                T comp = T(0);
                for (std::size_t k = 0; k < K; ++k) {
                    const T term = A[i * K + k] * B[k * P + j] - comp;
                    const T next = acc + term;
                    comp = (next - acc) - term;
                    acc = next;
                }
                C[i * P + j] = acc;
            }
        }
    }
}

template <typename T>
void gemm(std::size_t M, std::size_t K, std::size_t P, const T* A, const T* B, T* C) {
    gemm_impl<false>(M, K, P, A, B, C);
}

template <typename T>
void gemm_accum(std::size_t M, std::size_t K, std::size_t P, const T* A, const T* B, T* C) {
    gemm_impl<true>(M, K, P, A, B, C);
}

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
}

}  // namespace mowe::detail
