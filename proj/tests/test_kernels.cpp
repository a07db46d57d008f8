#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "mowe/kernels.hpp"

using namespace mowe;
using testutil::max_abs_diff;
using testutil::random_tensor;

TEST_CASE("matmul identity") {
    Tape<double> tape;
    auto I = tape.leaf(Tensor<double>({2, 2}, {1, 0, 0, 1}));
    auto a = tape.leaf(Tensor<double>({2, 2}, {1, 2, 3, 4}));
    auto c = matmul(tape, I, a);
    CHECK(c->val->at(0) == 1);
    CHECK(c->val->at(1) == 2);
    CHECK(c->val->at(2) == 3);
    CHECK(c->val->at(3) == 4);
}

TEST_CASE("matmul 1x2 by 2x1") {
    Tape<double> tape;
    auto a = tape.leaf(Tensor<double>({1, 2}, {1, 2}));
    auto b = tape.leaf(Tensor<double>({2, 1}, {3, 4}));
    auto c = matmul(tape, a, b);
    CHECK(c->shape == Shape{1, 1});
    CHECK(c->val->at(0) == 11.0);
}

TEST_CASE("matmul matches triple loop, 5x7x3") {
    Tape<double> tape;
    auto a = tape.leaf(random_tensor<double>({5, 7}, 11));
    auto b = tape.leaf(random_tensor<double>({7, 3}, 12));
    auto c = matmul(tape, a, b);
    auto ref = testutil::matmul_ref<double>(5, 7, 3, *a->val, *b->val);
    CHECK(max_abs_diff(*c->val, ref) < 1e-12);
}

TEST_CASE("matmul matches triple loop on random shapes up to 16") {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        Rng rng(seed_of(seed, 777));
        std::size_t M = 1 + rng.below(16), K = 1 + rng.below(16), P = 1 + rng.below(16);
        Tape<double> tape;
        auto a = tape.leaf(random_tensor<double>({M, K}, seed * 2 + 1));
        auto b = tape.leaf(random_tensor<double>({K, P}, seed * 2 + 2));
        auto c = matmul(tape, a, b);
        auto ref = testutil::matmul_ref<double>(M, K, P, *a->val, *b->val);
        CHECK(max_abs_diff(*c->val, ref) < 1e-12);
    }
}

TEST_CASE("matmul rejects mismatched inner extents") {
    Tape<double> tape;
    auto a = tape.leaf(Tensor<double>({2, 3}));
    auto b = tape.leaf(Tensor<double>({4, 2}));
    CHECK_THROWS_WITH_AS(matmul(tape, a, b),
                         doctest::Contains("[2x3]"), ShapeError);
}

TEST_CASE("matmul is pure: identical inputs give bit-identical outputs") {
    Tape<double> tape;
    auto a = tape.leaf(random_tensor<double>({9, 13}, 5));
    auto b = tape.leaf(random_tensor<double>({13, 6}, 6));
    auto c1 = matmul(tape, a, b);
    auto c2 = matmul(tape, a, b);
    CHECK(*c1->val == *c2->val);
}

TEST_CASE("layer_norm constant row goes to zero") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>({1, 3}, {1, 1, 1}));
    auto g = tape.leaf(Tensor<double>::full({3}, 1.0));
    auto b = tape.leaf(Tensor<double>({3}));
    auto y = layer_norm(tape, x, g, b, 1e-5);
    for (double v : *y->val) CHECK(std::abs(v) < 1e-9);
}

TEST_CASE("layer_norm symmetric pair") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>({1, 2}, {0, 2}));
    auto g = tape.leaf(Tensor<double>::full({2}, 1.0));
    auto b = tape.leaf(Tensor<double>({2}));
    auto y = layer_norm(tape, x, g, b, 1e-12);
    CHECK(y->val->at(0) == doctest::Approx(-1).epsilon(1e-6));
    CHECK(y->val->at(1) == doctest::Approx(1).epsilon(1e-6));
}

TEST_CASE("layer_norm matches the direct formula") {
    Rng rng(99);
    const std::size_t D = 17;
    Tape<double> tape;
    auto x = tape.leaf(random_tensor<double>({2, D}, 31, 3.0));
    auto g = tape.leaf(random_tensor<double>({D}, 32));
    auto b = tape.leaf(random_tensor<double>({D}, 33));
    const double eps = 1e-5;
    auto y = layer_norm(tape, x, g, b, eps);
    for (std::size_t r = 0; r < 2; ++r) {
        double mu = 0, var = 0;
        for (std::size_t j = 0; j < D; ++j) mu += (*x->val)[r * D + j];
        mu /= D;
        for (std::size_t j = 0; j < D; ++j) {
            double d = (*x->val)[r * D + j] - mu;
            var += d * d;
        }
        var /= D;
        for (std::size_t j = 0; j < D; ++j) {
            double ref =
                ((*x->val)[r * D + j] - mu) / std::sqrt(var + eps) * (*g->val)[j] + (*b->val)[j];
            CHECK(std::abs((*y->val)[r * D + j] - ref) < 1e-10);
        }
    }
}

TEST_CASE("layer_norm normalizes the mean away") {
    Tape<double> tape;
    auto x = tape.leaf(random_tensor<double>({4, 32}, 77, 10.0));
    auto g = tape.leaf(Tensor<double>::full({32}, 1.0));
    auto b = tape.leaf(Tensor<double>({32}));
    auto y = layer_norm(tape, x, g, b, 1e-5);
    for (std::size_t r = 0; r < 4; ++r) {
        double mu = 0;
        for (std::size_t j = 0; j < 32; ++j) mu += (*y->val)[r * 32 + j];
        CHECK(std::abs(mu / 32) < 1e-6);
    }
}

TEST_CASE("softmax uniform logits") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>({3}, {0, 0, 0}));
    auto y = softmax(tape, x, 0);
    for (double v : *y->val) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("softmax stable under large equal logits") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>({2}, {1000, 1000}));
    auto y = softmax(tape, x, 0);
    CHECK(y->val->at(0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(y->val->at(1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("softmax of log(1,2,3)") {
    Tape<double> tape;
    auto x = tape.leaf(
        Tensor<double>({3}, {std::log(1.0), std::log(2.0), std::log(3.0)}));
    auto y = softmax(tape, x, 0);
    CHECK(y->val->at(0) == doctest::Approx(1.0 / 6).epsilon(1e-12));
    CHECK(y->val->at(1) == doctest::Approx(2.0 / 6).epsilon(1e-12));
    CHECK(y->val->at(2) == doctest::Approx(3.0 / 6).epsilon(1e-12));
}

TEST_CASE("softmax sums to one for magnitudes up to 1e4") {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        Rng rng(seed_of(seed, 31337));
        Tape<double> tape;
        Tensor<double> t({4, 7});
        for (auto& v : t.v) v = rng.uniform(-1e4, 1e4);
        auto y = softmax(tape, tape.leaf(std::move(t)), 1);
        for (std::size_t r = 0; r < 4; ++r) {
            double s = 0;
            for (std::size_t j = 0; j < 7; ++j) {
                double w = (*y->val)[r * 7 + j];
                CHECK(w >= 0);  // extreme spreads underflow to exact zero
                CHECK(w <= 1.0);
                s += w;
            }
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("softmax rejects invalid axis") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>({2, 2}));
    CHECK_THROWS_AS(softmax(tape, x, 2), ShapeError);
}

TEST_CASE("gelu at zero and at the asymptote") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>({2}, {0.0, 10.0}));
    auto y = gelu(tape, x);
    CHECK(y->val->at(0) == 0.0);
    CHECK(std::abs(y->val->at(1) - 10.0) < 1e-6);
}

TEST_CASE("gelu matches the erf formula at x=1") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>({1}, {1.0}));
    auto y = gelu(tape, x);
    double ref = 0.5 * 1.0 * (1.0 + std::erf(1.0 / std::sqrt(2.0)));
    CHECK(std::abs(y->val->at(0) - ref) < 1e-10);
}

TEST_CASE("gelu is monotone right of its minimum") {
    Tape<double> tape;
    Tensor<double> t({201});
    for (std::size_t i = 0; i < 201; ++i) t.v[i] = -0.5 + 0.04 * static_cast<double>(i);
    auto y = gelu(tape, tape.leaf(std::move(t)));
    for (std::size_t i = 1; i < 201; ++i) CHECK((*y->val)[i] >= (*y->val)[i - 1]);
}

TEST_CASE("attention with a single token returns v") {
    Tape<double> tape;
    auto q = tape.leaf(random_tensor<double>({1, 4}, 1));
    auto k = tape.leaf(random_tensor<double>({1, 4}, 2));
    auto v = tape.leaf(random_tensor<double>({1, 4}, 3));
    auto o = attention(tape, q, k, v, 2);
    CHECK(max_abs_diff(*o->val, *v->val) < 1e-14);
}

TEST_CASE("attention with zero logits averages v rows") {
    Tape<double> tape;
    auto q = tape.leaf(Tensor<double>({3, 4}));
    auto k = tape.leaf(Tensor<double>({3, 4}));
    auto v = tape.leaf(random_tensor<double>({3, 4}, 17));
    auto o = attention(tape, q, k, v, 1);
    for (std::size_t j = 0; j < 4; ++j) {
        double mean = ((*v->val)[j] + (*v->val)[4 + j] + (*v->val)[8 + j]) / 3.0;
        for (std::size_t t = 0; t < 3; ++t) CHECK(std::abs((*o->val)[t * 4 + j] - mean) < 1e-12);
    }
}

TEST_CASE("attention matches a dense single-head oracle") {
    const std::size_t T = 3, D = 4;
    Tape<double> tape;
    auto q = tape.leaf(random_tensor<double>({T, D}, 21));
    auto k = tape.leaf(random_tensor<double>({T, D}, 22));
    auto v = tape.leaf(random_tensor<double>({T, D}, 23));
    auto o = attention(tape, q, k, v, 1);

    // explicit small-matrix reference
    double s[T][T], p[T][T], ref[T][D];
    const double scale = 1.0 / std::sqrt(static_cast<double>(D));
    for (std::size_t i = 0; i < T; ++i)
        for (std::size_t j = 0; j < T; ++j) {
            double acc = 0;
            for (std::size_t d = 0; d < D; ++d) acc += (*q->val)[i * D + d] * (*k->val)[j * D + d];
            s[i][j] = acc * scale;
        }
    for (std::size_t i = 0; i < T; ++i) {
        double mx = std::max({s[i][0], s[i][1], s[i][2]});
        double sum = 0;
        for (std::size_t j = 0; j < T; ++j) {
            p[i][j] = std::exp(s[i][j] - mx);
            sum += p[i][j];
        }
        for (std::size_t j = 0; j < T; ++j) p[i][j] /= sum;
    }
    for (std::size_t i = 0; i < T; ++i)
        for (std::size_t d = 0; d < D; ++d) {
            ref[i][d] = 0;
            for (std::size_t j = 0; j < T; ++j) ref[i][d] += p[i][j] * (*v->val)[j * D + d];
        }
    for (std::size_t i = 0; i < T; ++i)
        for (std::size_t d = 0; d < D; ++d)
            CHECK(std::abs((*o->val)[i * D + d] - ref[i][d]) < 1e-10);
}

TEST_CASE("attention rows are stochastic under multiple heads") {
    Tape<double> tape;
    auto q = tape.leaf(random_tensor<double>({5, 8}, 41));
    auto k = tape.leaf(random_tensor<double>({5, 8}, 42));
    auto v = tape.leaf(Tensor<double>::full({5, 8}, 1.0));
    auto o = attention(tape, q, k, v, 4);
    // with constant v every output must be exactly the constant
    for (double x : *o->val) CHECK(x == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("attention rejects an indivisible head split") {
    Tape<double> tape;
    auto q = tape.leaf(Tensor<double>({2, 6}));
    CHECK_THROWS_AS(attention(tape, q, q, q, 4), ConfigError);
}
