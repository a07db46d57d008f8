#pragma once

#include <cmath>

#include <quadmath.h>

namespace mowe::detail {

// Math entry points usable with float, double, long double and __float128.
// The quad type backs the highest tier of the finite-difference oracle only.

template <typename T>
inline T m_exp(T x) {
    return std::exp(x);
}
inline __float128 m_exp(__float128 x) { return expq(x); }

template <typename T>
inline T m_erf(T x) {
    return std::erf(x);
}
inline __float128 m_erf(__float128 x) { return erfq(x); }

template <typename T>
inline T m_sqrt(T x) {
    return std::sqrt(x);
}
inline __float128 m_sqrt(__float128 x) { return sqrtq(x); }

template <typename T>
inline T m_abs(T x) {
    return std::abs(x);
}
inline __float128 m_abs(__float128 x) { return fabsq(x); }

}  // namespace mowe::detail
