#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mowe/autodiff.hpp"
#include "mowe/detail/gemm.hpp"
#include "mowe/detail/qmath.hpp"

namespace mowe {

namespace detail {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

/// Accumulation ladder: every storage type computes reductions one precision
/// level up, which keeps verification-mode gradients accurate on
/// cancellation-heavy paths.
template <typename T>
struct acc_of {
    using type = long double;
};
template <>
struct acc_of<float> {
    using type = double;
};
template <>
struct acc_of<__float128> {
    using type = __float128;
};
template <typename T>
using acc_t = typename acc_of<T>::type;

}  // namespace detail

/// Standard matrix product a[MxK] * b[KxP].
template <typename T>
Var<T> matmul(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
    detail::require(a->shape.size() == 2 && b->shape.size() == 2,
                    "matmul wants rank-2 inputs, got " + shape_str(a->shape) + " and " +
                        shape_str(b->shape));
    const std::size_t M = a->shape[0], K = a->shape[1], P = b->shape[1];
    detail::require(b->shape[0] == K, "matmul inner extents differ: " + shape_str(a->shape) +
                                          " vs " + shape_str(b->shape));
    bool rg = a->requires_grad || b->requires_grad;
    Var<T> out = tape.make_output({M, P}, rg);
    detail::gemm(M, K, P, a->data(), b->data(), out->data());
    tape.finite_guard(out, "matmul");
    if (rg) {
        tape.record(out, [a, b, out, M, K, P]() {
            if (a->requires_grad || a->node >= 0) {
                a->ensure_grad();
                std::vector<T> bt(K * P);
                detail::transpose(K, P, b->data(), bt.data());
                detail::gemm_accum(M, P, K, out->grad.data(), bt.data(), a->grad.data());
            }
            if (b->requires_grad || b->node >= 0) {
                b->ensure_grad();
                std::vector<T> at(M * K);
                detail::transpose(M, K, a->data(), at.data());
                detail::gemm_accum(K, M, P, at.data(), out->grad.data(), b->grad.data());
            }
        });
    }
    return out;
}

template <typename T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
    detail::require(a->shape == b->shape, "add shapes differ: " + shape_str(a->shape) + " vs " +
                                              shape_str(b->shape));
    bool rg = a->requires_grad || b->requires_grad;
    Var<T> out = tape.make_output(a->shape, rg);
    const std::size_t n = a->numel();
    const T* pa = a->data();
    const T* pb = b->data();
    T* po = out->data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    tape.finite_guard(out, "add");
    if (rg) {
        tape.record(out, [a, b, out, n]() {
            if (a->requires_grad || a->node >= 0) {
                a->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i];
            }
            if (b->requires_grad || b->node >= 0) {
                b->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) b->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

/// Elementwise product.
template <typename T>
Var<T> mul(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
    detail::require(a->shape == b->shape, "mul shapes differ: " + shape_str(a->shape) + " vs " +
                                              shape_str(b->shape));
    bool rg = a->requires_grad || b->requires_grad;
    Var<T> out = tape.make_output(a->shape, rg);
    const std::size_t n = a->numel();
    const T* pa = a->data();
    const T* pb = b->data();
    T* po = out->data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    tape.finite_guard(out, "mul");
    if (rg) {
        tape.record(out, [a, b, out, n]() {
            if (a->requires_grad || a->node >= 0) {
                a->ensure_grad();
                const T* pb2 = b->data();
                for (std::size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i] * pb2[i];
            }
            if (b->requires_grad || b->node >= 0) {
                b->ensure_grad();
                const T* pa2 = a->data();
                for (std::size_t i = 0; i < n; ++i) b->grad[i] += out->grad[i] * pa2[i];
            }
        });
    }
    return out;
}

template <typename T>
Var<T> add_scalar(Tape<T>& tape, const Var<T>& a, double c) {
    Var<T> out = tape.make_output(a->shape, a->requires_grad);
    const std::size_t n = a->numel();
    for (std::size_t i = 0; i < n; ++i) out->data()[i] = a->data()[i] + static_cast<T>(c);
    tape.finite_guard(out, "add_scalar");
    if (out->requires_grad) {
        tape.record(out, [a, out, n]() {
            a->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i];
        });
    }
    return out;
}

template <typename T>
Var<T> mul_scalar(Tape<T>& tape, const Var<T>& a, double c) {
    Var<T> out = tape.make_output(a->shape, a->requires_grad);
    const std::size_t n = a->numel();
    for (std::size_t i = 0; i < n; ++i) out->data()[i] = a->data()[i] * static_cast<T>(c);
    tape.finite_guard(out, "mul_scalar");
    if (out->requires_grad) {
        tape.record(out, [a, out, n, c]() {
            a->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i] * static_cast<T>(c);
        });
    }
    return out;
}

/// x[R x C] + v broadcast over rows; v may have any shape with C elements.
template <typename T>
Var<T> add_rowvec(Tape<T>& tape, const Var<T>& x, const Var<T>& v) {
    detail::require(x->shape.size() == 2, "add_rowvec wants rank-2 x, got " + shape_str(x->shape));
    const std::size_t R = x->shape[0], C = x->shape[1];
    detail::require(v->numel() == C, "add_rowvec vector size " + std::to_string(v->numel()) +
                                         " does not match row width " + std::to_string(C));
    bool rg = x->requires_grad || v->requires_grad;
    Var<T> out = tape.make_output(x->shape, rg);
    for (std::size_t r = 0; r < R; ++r) {
        const T* px = x->data() + r * C;
        T* po = out->data() + r * C;
        const T* pv = v->data();
        for (std::size_t j = 0; j < C; ++j) po[j] = px[j] + pv[j];
    }
    tape.finite_guard(out, "add_rowvec");
    if (rg) {
        tape.record(out, [x, v, out, R, C]() {
            if (x->requires_grad || x->node >= 0) {
                x->ensure_grad();
                for (std::size_t i = 0; i < R * C; ++i) x->grad[i] += out->grad[i];
            }
            if (v->requires_grad || v->node >= 0) {
                v->ensure_grad();
                for (std::size_t r = 0; r < R; ++r)
                    for (std::size_t j = 0; j < C; ++j) v->grad[j] += out->grad[r * C + j];
            }
        });
    }
    return out;
}

/// x[R x C] with column j scaled by v[j], broadcast over rows.
template <typename T>
Var<T> mul_rowvec(Tape<T>& tape, const Var<T>& x, const Var<T>& v) {
    detail::require(x->shape.size() == 2, "mul_rowvec wants rank-2 x, got " + shape_str(x->shape));
    const std::size_t R = x->shape[0], C = x->shape[1];
    detail::require(v->numel() == C, "mul_rowvec vector size " + std::to_string(v->numel()) +
                                         " does not match row width " + std::to_string(C));
    bool rg = x->requires_grad || v->requires_grad;
    Var<T> out = tape.make_output(x->shape, rg);
    for (std::size_t r = 0; r < R; ++r) {
        const T* px = x->data() + r * C;
        T* po = out->data() + r * C;
        const T* pv = v->data();
        for (std::size_t j = 0; j < C; ++j) po[j] = px[j] * pv[j];
    }
    tape.finite_guard(out, "mul_rowvec");
    if (rg) {
        tape.record(out, [x, v, out, R, C]() {
            if (x->requires_grad || x->node >= 0) {
                x->ensure_grad();
                const T* pv = v->data();
                for (std::size_t r = 0; r < R; ++r)
                    for (std::size_t j = 0; j < C; ++j)
                        x->grad[r * C + j] += out->grad[r * C + j] * pv[j];
            }
            if (v->requires_grad || v->node >= 0) {
                v->ensure_grad();
                const T* px = x->data();
                for (std::size_t r = 0; r < R; ++r)
                    for (std::size_t j = 0; j < C; ++j)
                        v->grad[j] += out->grad[r * C + j] * px[r * C + j];
            }
        });
    }
    return out;
}

/// Normalize the last axis to zero mean / unit variance, then apply gain and
/// offset. x is treated as rows of width D = shape.back(). The backward pass
/// recomputes the row statistics in the accumulation type instead of caching
/// rounded ones: the 1/stddev factor amplifies any cached rounding on
/// near-constant rows.
template <typename T>
Var<T> layer_norm(Tape<T>& tape, const Var<T>& x, const Var<T>& gain, const Var<T>& offset,
                  double eps) {
    detail::require(!x->shape.empty() && x->shape.back() >= 1,
                    "layer_norm needs a non-empty last axis, got " + shape_str(x->shape));
    if (eps <= 0) throw ShapeError("layer_norm eps must be positive");
    const std::size_t D = x->shape.back();
    const std::size_t R = x->numel() / D;
    detail::require(gain->numel() == D && offset->numel() == D,
                    "layer_norm gain/offset must have " + std::to_string(D) + " elements");
    bool rg = x->requires_grad || gain->requires_grad || offset->requires_grad;
    Var<T> out = tape.make_output(x->shape, rg);

    using A = detail::acc_t<T>;
    for (std::size_t r = 0; r < R; ++r) {
        const T* px = x->data() + r * D;
        T* po = out->data() + r * D;
        A mean = 0, mc = 0;
        for (std::size_t j = 0; j < D; ++j) {
            const A term = px[j] - mc;
            const A next = mean + term;
            mc = (next - mean) - term;
            mean = next;
        }
        mean /= static_cast<A>(D);
        A var = 0, vc = 0;
        for (std::size_t j = 0; j < D; ++j) {
            const A d = px[j] - mean;
            const A term = d * d - vc;
            const A next = var + term;
            vc = (next - var) - term;
            var = next;
        }
        var /= static_cast<A>(D);
        const A inv = A(1) / detail::m_sqrt(var + static_cast<A>(eps));
        for (std::size_t j = 0; j < D; ++j)
            po[j] = static_cast<T>((px[j] - mean) * inv * gain->data()[j] + offset->data()[j]);
    }
    tape.finite_guard(out, "layer_norm");
    if (rg) {
        tape.record(out, [x, gain, offset, out, R, D, eps]() {
            const bool need_x = x->requires_grad || x->node >= 0;
            const bool need_g = gain->requires_grad || gain->node >= 0;
            const bool need_o = offset->requires_grad || offset->node >= 0;
            if (need_x) x->ensure_grad();
            if (need_g) gain->ensure_grad();
            if (need_o) offset->ensure_grad();
            for (std::size_t r = 0; r < R; ++r) {
                const T* px = x->data() + r * D;
                const T* dy = out->grad.data() + r * D;
                A mean = 0, mc = 0;
                for (std::size_t j = 0; j < D; ++j) {
                    const A term = px[j] - mc;
                    const A next = mean + term;
                    mc = (next - mean) - term;
                    mean = next;
                }
                mean /= static_cast<A>(D);
                A var = 0, vc = 0;
                for (std::size_t j = 0; j < D; ++j) {
                    const A d = px[j] - mean;
                    const A term = d * d - vc;
                    const A next = var + term;
                    vc = (next - var) - term;
                    var = next;
                }
                var /= static_cast<A>(D);
                const A inv = A(1) / detail::m_sqrt(var + static_cast<A>(eps));
                if (need_g)
                    for (std::size_t j = 0; j < D; ++j)
                        gain->grad[j] += static_cast<T>(dy[j] * ((px[j] - mean) * inv));
                if (need_o)
                    for (std::size_t j = 0; j < D; ++j) offset->grad[j] += dy[j];
                if (need_x) {
                    A m1 = 0, m1c = 0, m2 = 0, m2c = 0;
                    for (std::size_t j = 0; j < D; ++j) {
                        const A h = static_cast<A>(dy[j]) * gain->data()[j];
                        const A t1 = h - m1c;
                        const A n1 = m1 + t1;
                        m1c = (n1 - m1) - t1;
                        m1 = n1;
                        const A t2 = h * ((px[j] - mean) * inv) - m2c;
                        const A n2 = m2 + t2;
                        m2c = (n2 - m2) - t2;
                        m2 = n2;
                    }
                    m1 /= static_cast<A>(D);
                    m2 /= static_cast<A>(D);
                    T* dx = x->grad.data() + r * D;
                    for (std::size_t j = 0; j < D; ++j) {
                        const A h = static_cast<A>(dy[j]) * gain->data()[j];
                        const A xh = (px[j] - mean) * inv;
                        dx[j] += static_cast<T>((h - m1 - xh * m2) * inv);
                    }
                }
            }
        });
    }
    return out;
}

/// Numerically stabilized softmax along `axis`.
template <typename T>
Var<T> softmax(Tape<T>& tape, const Var<T>& x, std::size_t axis) {
    detail::require(axis < x->shape.size(), "softmax axis " + std::to_string(axis) +
                                                " invalid for shape " + shape_str(x->shape));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x->shape[i];
    for (std::size_t i = axis + 1; i < x->shape.size(); ++i) inner *= x->shape[i];
    const std::size_t len = x->shape[axis];
    Var<T> out = tape.make_output(x->shape, x->requires_grad);
    const T* px = x->data();
    T* po = out->data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * len * inner + i;
            detail::acc_t<T> mx = static_cast<detail::acc_t<T>>(px[base]);
            for (std::size_t l = 1; l < len; ++l)
                mx = std::max(mx, static_cast<detail::acc_t<T>>(px[base + l * inner]));
            detail::acc_t<T> sum = 0, sc = 0;
            for (std::size_t l = 0; l < len; ++l) {
                const detail::acc_t<T> e =
                    detail::m_exp(static_cast<detail::acc_t<T>>(px[base + l * inner]) - mx);
                po[base + l * inner] = static_cast<T>(e);
                const detail::acc_t<T> term = e - sc;
                const detail::acc_t<T> next = sum + term;
                sc = (next - sum) - term;
                sum = next;
            }
            const detail::acc_t<T> inv = 1.0 / sum;
            for (std::size_t l = 0; l < len; ++l)
                po[base + l * inner] = static_cast<T>(po[base + l * inner] * inv);
        }
    }
    tape.finite_guard(out, "softmax");
    if (out->requires_grad) {
        tape.record(out, [x, out, outer, inner, len]() {
            x->ensure_grad();
            const T* y = out->data();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t i = 0; i < inner; ++i) {
                    const std::size_t base = o * len * inner + i;
                    detail::acc_t<T> dot = 0;
                    for (std::size_t l = 0; l < len; ++l) {
                        const std::size_t idx = base + l * inner;
                        dot += static_cast<detail::acc_t<T>>(out->grad[idx]) * y[idx];
                    }
                    for (std::size_t l = 0; l < len; ++l) {
                        const std::size_t idx = base + l * inner;
                        x->grad[idx] += static_cast<T>(y[idx] * (out->grad[idx] - dot));
                    }
                }
            }
        });
    }
    return out;
}

/// Exact-erf GELU, elementwise.
template <typename T>
Var<T> gelu(Tape<T>& tape, const Var<T>& x) {
    Var<T> out = tape.make_output(x->shape, x->requires_grad);
    const std::size_t n = x->numel();
    using A = detail::acc_t<T>;
    constexpr A inv_sqrt2 = A(0.70710678118654752440L);
    for (std::size_t i = 0; i < n; ++i) {
        A xv = x->data()[i];
        out->data()[i] = static_cast<T>(xv * A(0.5) * (A(1) + detail::m_erf(xv * inv_sqrt2)));
    }
    tape.finite_guard(out, "gelu");
    if (out->requires_grad) {
        tape.record(out, [x, out, n]() {
            x->ensure_grad();
            using A = detail::acc_t<T>;
            constexpr A inv_sqrt2 = A(0.70710678118654752440L);
            constexpr A inv_sqrt2pi = A(0.39894228040143267794L);
            for (std::size_t i = 0; i < n; ++i) {
                A xv = x->data()[i];
                A cdf = A(0.5) * (A(1) + detail::m_erf(xv * inv_sqrt2));
                A pdf = inv_sqrt2pi * detail::m_exp(A(-0.5) * xv * xv);
                x->grad[i] += static_cast<T>(out->grad[i] * (cdf + xv * pdf));
            }
        });
    }
    return out;
}

/// Multi-head self-attention over already-projected q, k, v of shape [T x D].
/// Per head: softmax(q k^T / sqrt(D_h)) v, heads concatenated along columns.
template <typename T>
Var<T> attention(Tape<T>& tape, const Var<T>& q, const Var<T>& k, const Var<T>& v,
                 std::size_t heads) {
    detail::require(q->shape.size() == 2 && q->shape == k->shape && q->shape == v->shape,
                    "attention wants equal rank-2 q/k/v, got " + shape_str(q->shape) + ", " +
                        shape_str(k->shape) + ", " + shape_str(v->shape));
    const std::size_t S = q->shape[0], D = q->shape[1];
    if (heads == 0 || D % heads != 0)
        throw ConfigError("attention width " + std::to_string(D) + " not divisible by " +
                          std::to_string(heads) + " heads");
    const std::size_t Dh = D / heads;
    const detail::acc_t<T> scale =
        detail::acc_t<T>(1) / detail::m_sqrt(static_cast<detail::acc_t<T>>(Dh));
    bool rg = q->requires_grad || k->requires_grad || v->requires_grad;
    Var<T> out = tape.make_output(q->shape, rg);

    auto gather = [&](const Var<T>& m, std::size_t h, std::vector<T>& dst) {
        for (std::size_t t = 0; t < S; ++t)
            std::copy_n(m->data() + t * D + h * Dh, Dh, dst.data() + t * Dh);
    };

    // row-stochastic attention matrices, kept for the backward pass
    auto probs = std::make_shared<std::vector<std::vector<T>>>();
    if (rg) probs->resize(heads);

    std::vector<T> qh(S * Dh), kh(S * Dh), vh(S * Dh), kt(Dh * S), sc(S * S), oh(S * Dh);
    for (std::size_t h = 0; h < heads; ++h) {
        gather(q, h, qh);
        gather(k, h, kh);
        gather(v, h, vh);
        detail::transpose(S, Dh, kh.data(), kt.data());
        detail::gemm(S, Dh, S, qh.data(), kt.data(), sc.data());
        for (T& s : sc) s = static_cast<T>(s * scale);
        // row softmax
        for (std::size_t t = 0; t < S; ++t) {
            T* row = sc.data() + t * S;
            detail::acc_t<T> mx = row[0];
            for (std::size_t j = 1; j < S; ++j)
                mx = std::max(mx, static_cast<detail::acc_t<T>>(row[j]));
            detail::acc_t<T> sum = 0, sc = 0;
            for (std::size_t j = 0; j < S; ++j) {
                const detail::acc_t<T> e = detail::m_exp(static_cast<detail::acc_t<T>>(row[j]) - mx);
                row[j] = static_cast<T>(e);
                const detail::acc_t<T> term = e - sc;
                const detail::acc_t<T> next = sum + term;
                sc = (next - sum) - term;
                sum = next;
            }
            const detail::acc_t<T> inv = 1.0 / sum;
            for (std::size_t j = 0; j < S; ++j) row[j] = static_cast<T>(row[j] * inv);
        }
        detail::gemm(S, S, Dh, sc.data(), vh.data(), oh.data());
        for (std::size_t t = 0; t < S; ++t)
            std::copy_n(oh.data() + t * Dh, Dh, out->data() + t * D + h * Dh);
        if (rg) (*probs)[h] = sc;
    }
    tape.finite_guard(out, "attention");

    if (rg) {
        tape.record(out, [q, k, v, out, probs, S, D, Dh, heads, scale]() {
            q->ensure_grad();
            k->ensure_grad();
            v->ensure_grad();
            std::vector<T> qh(S * Dh), kh(S * Dh), vh(S * Dh), doh(S * Dh);
            std::vector<T> dp(S * S), ds(S * S), tmp_t(S * Dh > S * S ? S * Dh : S * S);
            std::vector<T> dqh(S * Dh), dkh(S * Dh), dvh(S * Dh);
            for (std::size_t h = 0; h < heads; ++h) {
                const std::vector<T>& p = (*probs)[h];
                for (std::size_t t = 0; t < S; ++t) {
                    std::copy_n(q->data() + t * D + h * Dh, Dh, qh.data() + t * Dh);
                    std::copy_n(k->data() + t * D + h * Dh, Dh, kh.data() + t * Dh);
                    std::copy_n(v->data() + t * D + h * Dh, Dh, vh.data() + t * Dh);
                    std::copy_n(out->grad.data() + t * D + h * Dh, Dh, doh.data() + t * Dh);
                }
                // dV = P^T dO
                detail::transpose(S, S, p.data(), tmp_t.data());
                detail::gemm(S, S, Dh, tmp_t.data(), doh.data(), dvh.data());
                // dP = dO V^T
                detail::transpose(S, Dh, vh.data(), tmp_t.data());
                detail::gemm(S, Dh, S, doh.data(), tmp_t.data(), dp.data());
                // dS = P o (dP - rowsum(dP o P)), then scale
                for (std::size_t t = 0; t < S; ++t) {
                    detail::acc_t<T> dot = 0;
                    for (std::size_t j = 0; j < S; ++j)
                        dot += static_cast<detail::acc_t<T>>(dp[t * S + j]) * p[t * S + j];
                    for (std::size_t j = 0; j < S; ++j)
                        ds[t * S + j] =
                            static_cast<T>(p[t * S + j] * (dp[t * S + j] - dot) * scale);
                }
                // dQ = dS K ; dK = dS^T Q
                detail::gemm(S, S, Dh, ds.data(), kh.data(), dqh.data());
                detail::transpose(S, S, ds.data(), tmp_t.data());
                detail::gemm(S, S, Dh, tmp_t.data(), qh.data(), dkh.data());
                for (std::size_t t = 0; t < S; ++t) {
                    for (std::size_t j = 0; j < Dh; ++j) {
                        q->grad[t * D + h * Dh + j] += dqh[t * Dh + j];
                        k->grad[t * D + h * Dh + j] += dkh[t * Dh + j];
                        v->grad[t * D + h * Dh + j] += dvh[t * Dh + j];
                    }
                }
            }
        });
    }
    return out;
}

/// View with a new shape over the same storage.
template <typename T>
Var<T> reshape(Tape<T>& tape, const Var<T>& x, Shape shape) {
    detail::require(mowe::numel(shape) == x->numel(), "reshape " + shape_str(x->shape) + " -> " +
                                                          shape_str(shape) + " changes size");
    auto out = std::make_shared<VarData<T>>();
    out->shape = std::move(shape);
    out->val = x->val;
    out->requires_grad = x->requires_grad;
    if (x->requires_grad || x->node >= 0) {
        const std::size_t n = x->numel();
        tape.record(out, [x, out, n]() {
            x->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) x->grad[i] += out->grad[i];
        });
    }
    return out;
}

/// Split x[K x H x W] into p-by-p patches: token t = (H/p)(W/p) index in
/// row-major patch order; within a token values are channel-major, each
/// channel's patch flattened row-major.
template <typename T>
Var<T> patchify(Tape<T>& tape, const Var<T>& x, std::size_t p) {
    detail::require(x->shape.size() == 3, "patchify wants [K x H x W], got " + shape_str(x->shape));
    const std::size_t K = x->shape[0], H = x->shape[1], W = x->shape[2];
    if (p == 0 || H % p != 0 || W % p != 0)
        throw ConfigError("patch size " + std::to_string(p) + " does not divide grid " +
                          std::to_string(H) + "x" + std::to_string(W));
    const std::size_t gh = H / p, gw = W / p, tokens = gh * gw, width = K * p * p;
    Var<T> out = tape.make_output({tokens, width}, x->requires_grad);
    const T* px = x->data();
    T* po = out->data();
    for (std::size_t pr = 0; pr < gh; ++pr)
        for (std::size_t pc = 0; pc < gw; ++pc) {
            T* tok = po + (pr * gw + pc) * width;
            for (std::size_t kk = 0; kk < K; ++kk)
                for (std::size_t dy = 0; dy < p; ++dy)
                    for (std::size_t dx = 0; dx < p; ++dx)
                        tok[kk * p * p + dy * p + dx] =
                            px[(kk * H + pr * p + dy) * W + pc * p + dx];
        }
    if (out->requires_grad) {
        tape.record(out, [x, out, K, H, W, p, gh, gw, width]() {
            x->ensure_grad();
            for (std::size_t pr = 0; pr < gh; ++pr)
                for (std::size_t pc = 0; pc < gw; ++pc) {
                    const T* tok = out->grad.data() + (pr * gw + pc) * width;
                    for (std::size_t kk = 0; kk < K; ++kk)
                        for (std::size_t dy = 0; dy < p; ++dy)
                            for (std::size_t dx = 0; dx < p; ++dx)
                                x->grad[(kk * H + pr * p + dy) * W + pc * p + dx] +=
                                    tok[kk * p * p + dy * p + dx];
                }
        });
    }
    return out;
}

/// Exact inverse of patchify's layout: tokens [T x (K p^2)] -> [K x H x W].
template <typename T>
Var<T> unpatchify(Tape<T>& tape, const Var<T>& tokens, std::size_t p, std::size_t H,
                  std::size_t W) {
    detail::require(tokens->shape.size() == 2,
                    "unpatchify wants rank-2 tokens, got " + shape_str(tokens->shape));
    if (p == 0 || H % p != 0 || W % p != 0)
        throw ConfigError("patch size " + std::to_string(p) + " does not divide grid " +
                          std::to_string(H) + "x" + std::to_string(W));
    const std::size_t gh = H / p, gw = W / p;
    if (tokens->shape[0] != gh * gw || tokens->shape[1] % (p * p) != 0)
        throw ConfigError("token matrix " + shape_str(tokens->shape) +
                          " inconsistent with grid " + std::to_string(H) + "x" +
                          std::to_string(W) + ", patch " + std::to_string(p));
    const std::size_t K = tokens->shape[1] / (p * p), width = tokens->shape[1];
    Var<T> out = tape.make_output({K, H, W}, tokens->requires_grad);
    const T* pt = tokens->data();
    T* po = out->data();
    for (std::size_t pr = 0; pr < gh; ++pr)
        for (std::size_t pc = 0; pc < gw; ++pc) {
            const T* tok = pt + (pr * gw + pc) * width;
            for (std::size_t kk = 0; kk < K; ++kk)
                for (std::size_t dy = 0; dy < p; ++dy)
                    for (std::size_t dx = 0; dx < p; ++dx)
                        po[(kk * H + pr * p + dy) * W + pc * p + dx] =
                            tok[kk * p * p + dy * p + dx];
        }
    if (out->requires_grad) {
        tape.record(out, [tokens, out, K, H, W, p, gh, gw, width]() {
            tokens->ensure_grad();
            for (std::size_t pr = 0; pr < gh; ++pr)
                for (std::size_t pc = 0; pc < gw; ++pc) {
                    T* tok = tokens->grad.data() + (pr * gw + pc) * width;
                    for (std::size_t kk = 0; kk < K; ++kk)
                        for (std::size_t dy = 0; dy < p; ++dy)
                            for (std::size_t dx = 0; dx < p; ++dx)
                                tok[kk * p * p + dy * p + dx] +=
                                    out->grad[(kk * H + pr * p + dy) * W + pc * p + dx];
                }
        });
    }
    return out;
}

/// Contiguous row slice of a rank-2 tensor.
template <typename T>
Var<T> take_rows(Tape<T>& tape, const Var<T>& x, std::size_t from, std::size_t count) {
    detail::require(x->shape.size() == 2, "take_rows wants rank-2, got " + shape_str(x->shape));
    const std::size_t R = x->shape[0], C = x->shape[1];
    detail::require(from + count <= R, "take_rows [" + std::to_string(from) + ", " +
                                           std::to_string(from + count) + ") out of " +
                                           std::to_string(R) + " rows");
    Var<T> out = tape.make_output({count, C}, x->requires_grad);
    std::copy_n(x->data() + from * C, count * C, out->data());
    if (out->requires_grad) {
        tape.record(out, [x, out, from, count, C]() {
            x->ensure_grad();
            for (std::size_t i = 0; i < count * C; ++i) x->grad[from * C + i] += out->grad[i];
        });
    }
    return out;
}

/// Sum all elements to a scalar (shape {1}).
template <typename T>
Var<T> sum(Tape<T>& tape, const Var<T>& x) {
    Var<T> out = tape.make_output({1}, x->requires_grad);
    detail::acc_t<T> acc = 0, comp = 0;
    const std::size_t n = x->numel();
    for (std::size_t i = 0; i < n; ++i) {
        const detail::acc_t<T> term = x->data()[i] - comp;
        const detail::acc_t<T> next = acc + term;
        comp = (next - acc) - term;
        acc = next;
    }
    out->data()[0] = static_cast<T>(acc);
    tape.finite_guard(out, "sum");
    if (out->requires_grad) {
        tape.record(out, [x, out, n]() {
            x->ensure_grad();
            const T g = out->grad[0];
            for (std::size_t i = 0; i < n; ++i) x->grad[i] += g;
        });
    }
    return out;
}

/// Collapse the leading axis by summation: [K x rest] -> [rest].
template <typename T>
Var<T> sum_axis0(Tape<T>& tape, const Var<T>& x) {
    detail::require(x->shape.size() >= 2, "sum_axis0 wants rank >= 2, got " + shape_str(x->shape));
    const std::size_t K = x->shape[0];
    Shape rest(x->shape.begin() + 1, x->shape.end());
    const std::size_t inner = mowe::numel(rest);
    Var<T> out = tape.make_output(rest, x->requires_grad);
    T* po = out->data();
    std::copy_n(x->data(), inner, po);
    for (std::size_t kk = 1; kk < K; ++kk) {
        const T* px = x->data() + kk * inner;
        for (std::size_t i = 0; i < inner; ++i) po[i] += px[i];
    }
    tape.finite_guard(out, "sum_axis0");
    if (out->requires_grad) {
        tape.record(out, [x, out, K, inner]() {
            x->ensure_grad();
            for (std::size_t kk = 0; kk < K; ++kk)
                for (std::size_t i = 0; i < inner; ++i)
                    x->grad[kk * inner + i] += out->grad[i];
        });
    }
    return out;
}

/// Mean over all elements of the squared difference.
template <typename T>
Var<T> mse_loss(Tape<T>& tape, const Var<T>& pred, const Var<T>& truth) {
    detail::require(pred->shape == truth->shape, "mse_loss shapes differ: " +
                                                     shape_str(pred->shape) + " vs " +
                                                     shape_str(truth->shape));
    const std::size_t n = pred->numel();
    bool rg = pred->requires_grad || truth->requires_grad;
    Var<T> out = tape.make_output({1}, rg);
    detail::acc_t<T> acc = 0, comp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const detail::acc_t<T> d =
            static_cast<detail::acc_t<T>>(pred->data()[i]) - truth->data()[i];
        const detail::acc_t<T> term = d * d - comp;
        const detail::acc_t<T> next = acc + term;
        comp = (next - acc) - term;
        acc = next;
    }
    out->data()[0] = static_cast<T>(acc / static_cast<detail::acc_t<T>>(n));
    tape.finite_guard(out, "mse_loss");
    if (rg) {
        tape.record(out, [pred, truth, out, n]() {
            const T g = out->grad[0];
            const T c = static_cast<T>(detail::acc_t<T>(2) / static_cast<detail::acc_t<T>>(n));
            if (pred->requires_grad || pred->node >= 0) {
                pred->ensure_grad();
                for (std::size_t i = 0; i < n; ++i)
                    pred->grad[i] += g * c * (pred->data()[i] - truth->data()[i]);
            }
            if (truth->requires_grad || truth->node >= 0) {
                truth->ensure_grad();
                for (std::size_t i = 0; i < n; ++i)
                    truth->grad[i] -= g * c * (pred->data()[i] - truth->data()[i]);
            }
        });
    }
    return out;
}

}  // namespace mowe
