#pragma once

#include <vector>

#include "mowe/kernels.hpp"

namespace mowe {

/// Softmax across the expert axis of [N x C x H x W] logits, independently
/// at every (channel, row, column). Output weights sum to one over experts.
template <typename T>
Var<T> normalize_weights(Tape<T>& tape, const Var<T>& logits) {
    if (logits->shape.size() != 4)
        throw ShapeError("normalize_weights wants [N x C x H x W], got " +
                         shape_str(logits->shape));
    if (logits->shape[0] < 2)
        throw ConfigError("fusion needs at least 2 experts, got " +
                          std::to_string(logits->shape[0]));
    return softmax(tape, logits, 0);
}

/// Eq.-style blend: out[c,h,w] = sum_i weights[i,c,h,w] * experts[i,c,h,w]
/// + bias[c,h,w]. Weights must already be normalized; a unit-sum violation
/// beyond 1e-4 means un-normalized logits reached this point and is rejected.
template <typename T>
Var<T> fuse(Tape<T>& tape, const Var<T>& experts, const Var<T>& weights, const Var<T>& bias) {
    if (experts->shape.size() != 4 || experts->shape != weights->shape)
        throw ShapeError("fuse experts/weights shapes differ: " + shape_str(experts->shape) +
                         " vs " + shape_str(weights->shape));
    const std::size_t N = experts->shape[0];
    Shape field(experts->shape.begin() + 1, experts->shape.end());
    if (bias->shape != field)
        throw ShapeError("fuse bias must be " + shape_str(field) + ", got " +
                         shape_str(bias->shape));
    const std::size_t inner = mowe::numel(field);
    for (std::size_t i = 0; i < inner; ++i) {
        T s = T(0);
        for (std::size_t e = 0; e < N; ++e) s += weights->data()[e * inner + i];
        if (std::abs(static_cast<double>(s) - 1.0) > 1e-4)
            throw InternalError("fuse weights sum to " + std::to_string(static_cast<double>(s)) +
                                " at flat index " + std::to_string(i) +
                                "; pass weights through normalize_weights first");
    }
    Var<T> blended = sum_axis0(tape, mul(tape, weights, experts));
    return add(tape, blended, bias);
}

/// Standardize physical expert fields per channel, blend with the gate's
/// weights and bias, and map the result back to physical units. Because the
/// weights are unit-sum the blend commutes with the per-channel affine map,
/// so the learned bias scales by the channel std.
template <typename T>
Tensor<T> fuse_standardized(const Tensor<T>& experts_physical, const std::vector<double>& mean,
                            const std::vector<double>& std_dev, const Var<T>& expert_logits,
                            const Var<T>& bias_field) {
    if (experts_physical.shape.size() != 4)
        throw ShapeError("fuse_standardized wants [N x C x H x W], got " +
                         shape_str(experts_physical.shape));
    const std::size_t N = experts_physical.shape[0], C = experts_physical.shape[1];
    const std::size_t hw = experts_physical.shape[2] * experts_physical.shape[3];
    if (mean.size() != C || std_dev.size() != C)
        throw ShapeError("per-channel stats must have " + std::to_string(C) + " entries");
    for (std::size_t c = 0; c < C; ++c)
        if (!(std_dev[c] > 0))
            throw DataError("channel " + std::to_string(c) + " has non-positive std " +
                            std::to_string(std_dev[c]));

    Tensor<T> std_stack(experts_physical.shape);
    for (std::size_t e = 0; e < N; ++e)
        for (std::size_t c = 0; c < C; ++c) {
            const T* src = experts_physical.data() + (e * C + c) * hw;
            T* dst = std_stack.data() + (e * C + c) * hw;
            for (std::size_t i = 0; i < hw; ++i)
                dst[i] = static_cast<T>((static_cast<double>(src[i]) - mean[c]) / std_dev[c]);
        }

    Tape<T> tape;
    Var<T> ex = tape.leaf(std::move(std_stack));
    Var<T> w = normalize_weights(tape, tape.leaf(Tensor<T>(expert_logits->shape,
                                                           *expert_logits->val)));
    Var<T> b = tape.leaf(Tensor<T>(bias_field->shape, *bias_field->val));
    Var<T> fused = fuse(tape, ex, w, b);

    Tensor<T> out(fused->shape, *fused->val);
    for (std::size_t c = 0; c < C; ++c) {
        T* dst = out.data() + c * hw;
        for (std::size_t i = 0; i < hw; ++i)
            dst[i] = static_cast<T>(static_cast<double>(dst[i]) * std_dev[c] + mean[c]);
    }
    return out;
}

}  // namespace mowe
