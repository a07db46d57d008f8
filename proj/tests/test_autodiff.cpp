#include <functional>

#include "doctest.h"
#include "helpers.hpp"
#include "mowe/gradcheck.hpp"
#include "mowe/kernels.hpp"

using namespace mowe;
using testutil::random_tensor;

TEST_CASE("backward of sum gives ones") {
    Tape<double> tape;
    auto x = tape.leaf(random_tensor<double>({3}, 1), true);
    auto loss = sum(tape, x);
    tape.backward(loss);
    for (double g : x->grad) CHECK(g == 1.0);
}

TEST_CASE("backward of sum of squares") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>({2}, {1, 2}), true);
    auto loss = sum(tape, mul(tape, x, x));
    tape.backward(loss);
    CHECK(x->grad[0] == doctest::Approx(2).epsilon(1e-12));
    CHECK(x->grad[1] == doctest::Approx(4).epsilon(1e-12));
}

TEST_CASE("backward rejects a non-scalar loss") {
    Tape<double> tape;
    auto x = tape.leaf(random_tensor<double>({3}, 1), true);
    auto y = mul(tape, x, x);
    CHECK_THROWS_AS(tape.backward(y), InternalError);
}

TEST_CASE("leaves untouched by the loss keep zero gradients") {
    Tape<double> tape;
    auto x = tape.leaf(random_tensor<double>({3}, 1), true);
    auto unused = tape.leaf(random_tensor<double>({4}, 2), true);
    auto loss = sum(tape, x);
    tape.backward(loss);
    unused->ensure_grad();
    for (double g : unused->grad) CHECK(g == 0.0);
}

namespace {

/// Finite-difference check of a single kernel wrapped into a scalar loss.
template <typename Fn>
void check_kernel(const std::string& name, Fn&& fn, std::vector<Tensor<double>> point,
                  double tol = 1e-4) {
    auto rep = grad_check(fn, std::move(point), 1e-5);
    CHECK_MESSAGE(rep.max_rel_err < tol, name, ": rel err ", rep.max_rel_err, " tensor ",
                  rep.worst_tensor, " idx ", rep.worst_index);
}

}  // namespace

TEST_CASE("every kernel passes finite differences over 20 seeds") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        check_kernel(
            "matmul",
            [](auto& t, const auto& l) {
                return sum(t, mul(t, matmul(t, l[0], l[1]), matmul(t, l[0], l[1])));
            },
            {random_tensor<double>({3, 4}, seed * 10 + 1),
             random_tensor<double>({4, 5}, seed * 10 + 2)});

        check_kernel(
            "add_mul",
            [](auto& t, const auto& l) {
                return sum(t, mul(t, add(t, l[0], l[1]), l[0]));
            },
            {random_tensor<double>({2, 3}, seed * 10 + 1),
             random_tensor<double>({2, 3}, seed * 10 + 2)});

        check_kernel(
            "scalar_ops",
            [](auto& t, const auto& l) {
                return sum(t, mul_scalar(t, add_scalar(t, l[0], 0.7), -1.3));
            },
            {random_tensor<double>({5}, seed * 10 + 1)});

        check_kernel(
            "rowvec_ops",
            [](auto& t, const auto& l) {
                auto y = add_rowvec(t, mul_rowvec(t, l[0], l[1]), l[2]);
                return sum(t, mul(t, y, y));
            },
            {random_tensor<double>({4, 3}, seed * 10 + 1),
             random_tensor<double>({3}, seed * 10 + 2),
             random_tensor<double>({3}, seed * 10 + 3)});

        check_kernel(
            "layer_norm",
            [](auto& t, const auto& l) {
                auto y = layer_norm(t, l[0], l[1], l[2], 1e-5);
                return sum(t, mul(t, y, y));
            },
            {random_tensor<double>({3, 6}, seed * 10 + 1),
             random_tensor<double>({6}, seed * 10 + 2),
             random_tensor<double>({6}, seed * 10 + 3)});

        check_kernel(
            "softmax",
            [](auto& t, const auto& l) {
                auto y = softmax(t, l[0], 1);
                return sum(t, mul(t, y, l[1]));
            },
            {random_tensor<double>({3, 5}, seed * 10 + 1),
             random_tensor<double>({3, 5}, seed * 10 + 2)});

        check_kernel(
            "softmax_axis0",
            [](auto& t, const auto& l) {
                auto y = softmax(t, l[0], 0);
                return sum(t, mul(t, y, l[1]));
            },
            {random_tensor<double>({3, 2, 2}, seed * 10 + 1),
             random_tensor<double>({3, 2, 2}, seed * 10 + 2)});

        check_kernel(
            "gelu",
            [](auto& t, const auto& l) {
                return sum(t, gelu(t, l[0]));
            },
            {random_tensor<double>({7}, seed * 10 + 1, 2.0)});

        check_kernel(
            "attention",
            [](auto& t, const auto& l) {
                auto o = attention(t, l[0], l[1], l[2], 2);
                return sum(t, mul(t, o, o));
            },
            {random_tensor<double>({4, 6}, seed * 10 + 1),
             random_tensor<double>({4, 6}, seed * 10 + 2),
             random_tensor<double>({4, 6}, seed * 10 + 3)});

        check_kernel(
            "patchify_roundtrip",
            [](auto& t, const auto& l) {
                auto tok = patchify(t, l[0], 2);
                auto back = unpatchify(t, tok, 2, 4, 4);
                return sum(t, mul(t, back, l[0]));
            },
            {random_tensor<double>({2, 4, 4}, seed * 10 + 1)});

        check_kernel(
            "take_rows_reshape",
            [](auto& t, const auto& l) {
                auto r = reshape(t, l[0], {4, 3});
                auto s = take_rows(t, r, 1, 2);
                return sum(t, mul(t, s, s));
            },
            {random_tensor<double>({12}, seed * 10 + 1)});

        check_kernel(
            "sum_axis0",
            [](auto& t, const auto& l) {
                auto s = sum_axis0(t, l[0]);
                return sum(t, mul(t, s, s));
            },
            {random_tensor<double>({3, 2, 2}, seed * 10 + 1)});

        check_kernel(
            "mse_loss",
            [](auto& t, const auto& l) {
                return mse_loss(t, l[0], l[1]);
            },
            {random_tensor<double>({3, 4}, seed * 10 + 1),
             random_tensor<double>({3, 4}, seed * 10 + 2)});
    }
}

TEST_CASE("finite guard names the offending kernel") {
    Tape<double> tape;
    tape.check_finite = true;
    auto x = tape.leaf(Tensor<double>({2}, {1e308, 1e308}), true);
    try {
        auto y = mul(tape, x, x);  // overflows to inf
        FAIL("expected InternalError");
    } catch (const InternalError& e) {
        CHECK(std::string(e.what()).find("mul") != std::string::npos);
    }
}
