#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "mowe/common.hpp"
#include "mowe/rng.hpp"

namespace mowe {

/// Dense row-major n-dimensional array. The scalar type selects the precision
/// mode: double for gradient verification, float for training and inference.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), v(mowe::numel(shape), T(0)) {}
    Tensor(Shape s, std::vector<T> data) : shape(std::move(s)), v(std::move(data)) {
        if (v.size() != mowe::numel(shape))
            throw ShapeError("tensor data size " + std::to_string(v.size()) +
                             " does not match shape " + shape_str(shape));
    }

    std::size_t numel() const { return v.size(); }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    bool all_finite() const {
        for (T x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

    static Tensor full(Shape s, T value) {
        Tensor t(std::move(s));
        for (T& x : t.v) x = value;
        return t;
    }

    /// Values drawn in double and cast, so float and double modes see the
    /// same underlying sample sequence.
    static Tensor randn(Shape s, Rng& rng, double stddev = 1.0) {
        Tensor t(std::move(s));
        for (T& x : t.v) x = static_cast<T>(stddev * rng.normal());
        return t;
    }

    static Tensor uniform(Shape s, Rng& rng, double lo, double hi) {
        Tensor t(std::move(s));
        for (T& x : t.v) x = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }
};

}  // namespace mowe
