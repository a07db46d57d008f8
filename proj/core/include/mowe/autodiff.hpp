#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mowe/common.hpp"
#include "mowe/tensor.hpp"

namespace mowe {

/// A value tracked on a tape. Storage is shared so parameters can be bound
/// into several concurrent tapes without copying; gradients are private to
/// each binding.
template <typename T>
struct VarData {
    Shape shape;
    std::shared_ptr<std::vector<T>> val;
    std::vector<T> grad;  // sized lazily, zero-filled
    bool requires_grad = false;
    std::int64_t node = -1;  // producing tape node; -1 for leaves

    std::size_t numel() const { return val->size(); }
    const T* data() const { return val->data(); }
    T* data() { return val->data(); }

    void ensure_grad() {
        if (grad.size() != val->size()) grad.assign(val->size(), T(0));
    }
};

template <typename T>
using Var = std::shared_ptr<VarData<T>>;

/// Records kernel applications in execution order. Inputs of a node always
/// precede it, so the reverse sweep is a valid topological order and each
/// node's backward runs exactly once.
template <typename T>
class Tape {
public:
    /// When set, every kernel output is scanned and a non-finite value raises
    /// InternalError naming the kernel. Used by the verification path.
    bool check_finite = false;

    Var<T> leaf(Tensor<T> t, bool requires_grad = false) {
        auto d = std::make_shared<VarData<T>>();
        d->shape = std::move(t.shape);
        d->val = std::make_shared<std::vector<T>>(std::move(t.v));
        d->requires_grad = requires_grad;
        if (requires_grad) d->ensure_grad();
        return d;
    }

    /// Bind existing storage (e.g. a parameter) without copying. The storage
    /// is treated as read-only for the lifetime of this tape.
    Var<T> leaf_shared(Shape shape, std::shared_ptr<std::vector<T>> storage,
                       bool requires_grad = false) {
        if (storage->size() != mowe::numel(shape))
            throw ShapeError("leaf storage does not match shape " + shape_str(shape));
        auto d = std::make_shared<VarData<T>>();
        d->shape = std::move(shape);
        d->val = std::move(storage);
        d->requires_grad = requires_grad;
        if (requires_grad) d->ensure_grad();
        return d;
    }

    Var<T> make_output(Shape shape, bool requires_grad) {
        auto d = std::make_shared<VarData<T>>();
        d->val = std::make_shared<std::vector<T>>(mowe::numel(shape), T(0));
        d->shape = std::move(shape);
        d->requires_grad = requires_grad;
        return d;
    }

    /// Attach a backward closure to `out`. Call only when an input requires
    /// gradient; the closure must accumulate (not overwrite) input grads.
    void record(const Var<T>& out, std::function<void()> backward) {
        out->ensure_grad();
        out->node = static_cast<std::int64_t>(nodes_.size());
        nodes_.push_back(std::move(backward));
    }

    void finite_guard(const Var<T>& out, const char* kernel) const {
        if (!check_finite) return;
        for (T x : *out->val)
            if (!std::isfinite(static_cast<double>(x)))
                throw InternalError(std::string("non-finite value in output of kernel '") +
                                    kernel + "'");
    }

    /// Reverse sweep from `loss` (a scalar) back to the first node. Leaves
    /// that the loss does not reach keep their zero gradient.
    void backward(const Var<T>& loss) {
        if (loss->numel() != 1)
            throw InternalError("backward requires a scalar loss, got shape " +
                                shape_str(loss->shape));
        loss->ensure_grad();
        loss->grad[0] = T(1);
        std::int64_t start = loss->node;
        for (std::int64_t i = start; i >= 0; --i) nodes_[static_cast<std::size_t>(i)]();
    }

    std::size_t size() const { return nodes_.size(); }

private:
    std::vector<std::function<void()>> nodes_;
};

}  // namespace mowe
