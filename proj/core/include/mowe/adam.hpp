#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mowe/common.hpp"

namespace mowe {

/// Adam with bias correction. Moment buffers are created lazily on the first
/// step and afterwards must keep matching the parameter list.
template <typename T>
struct AdamState {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step_count = 0;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;

    void step(std::span<std::vector<T>* const> params, std::span<const std::vector<T>* const> grads) {
        if (params.size() != grads.size())
            throw InternalError("adam: parameter/gradient list sizes differ");
        if (m.empty()) {
            m.resize(params.size());
            v.resize(params.size());
            for (std::size_t p = 0; p < params.size(); ++p) {
                m[p].assign(params[p]->size(), T(0));
                v[p].assign(params[p]->size(), T(0));
            }
        }
        if (m.size() != params.size())
            throw InternalError("adam: state tracks " + std::to_string(m.size()) +
                                " tensors, got " + std::to_string(params.size()));
        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (std::size_t p = 0; p < params.size(); ++p) {
            std::vector<T>& th = *params[p];
            const std::vector<T>& g = *grads[p];
            if (th.size() != g.size() || th.size() != m[p].size())
                throw InternalError("adam: shape mismatch on tensor " + std::to_string(p));
            std::vector<T>& mp = m[p];
            std::vector<T>& vp = v[p];
            for (std::size_t i = 0; i < th.size(); ++i) {
                const double gi = g[i];
                const double mi = beta1 * mp[i] + (1.0 - beta1) * gi;
                const double vi = beta2 * vp[i] + (1.0 - beta2) * gi * gi;
                mp[i] = static_cast<T>(mi);
                vp[i] = static_cast<T>(vi);
                th[i] = static_cast<T>(th[i] - lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps));
            }
        }
    }
};

}  // namespace mowe
