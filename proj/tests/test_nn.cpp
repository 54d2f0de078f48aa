#include "doctest.h"

#include <cmath>
#include <limits>

#include "tspformer/gradcheck.hpp"
#include "tspformer/nn.hpp"
#include "tspformer/rng.hpp"

using namespace tspformer;
using num::Node;
using num::Tape;
using num::Tensor;

namespace {

Tensor<double> identity(std::size_t d) {
    Tensor<double> t({d, d});
    for (std::size_t i = 0; i < d; ++i) t.at(i, i) = 1.0;
    return t;
}

num::MhaParams<double> identity_mha(std::size_t d) {
    Rng rng(0);
    num::MhaParams<double> p("mha", d, rng);
    p.q.w.value = identity(d);
    p.wk.value = identity(d);
    p.v.w.value = identity(d);
    p.o.w.value = identity(d);
    p.q.b.value.fill(0);
    p.v.b.value.fill(0);
    p.o.b.value.fill(0);
    return p;
}

} // namespace

TEST_CASE("single-token attention with identity projections returns v") {
    auto p = identity_mha(4);
    Tape<double> tape;
    auto* q = tape.constant(Tensor<double>({1, 1, 4}, {0.3, -0.2, 0.9, 0.5}));
    auto* out = num::multi_head_attention(tape, q, q, q, 1, nullptr, p);
    for (int i = 0; i < 4; ++i) CHECK(out->value[i] == doctest::Approx(q->value[i]).epsilon(1e-12));
}

TEST_CASE("causal first row sees only position 0") {
    auto p = identity_mha(4);
    Tape<double> tape;
    Rng rng(2);
    Tensor<double> x({1, 3, 4});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform_sym(1.0);
    const double ninf = -std::numeric_limits<double>::infinity();
    Tensor<double> mask({3, 3});
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = i + 1; j < 3; ++j) mask.at(i, j) = ninf;
    auto* n = tape.constant(x);
    auto* out = num::multi_head_attention(tape, n, n, n, 1, &mask, p);
    // row 0 attends only to itself; with identity projections that is v row 0
    for (int c = 0; c < 4; ++c) CHECK(out->value[c] == doctest::Approx(x[c]).epsilon(1e-12));
}

TEST_CASE("mha rejects bad head counts and mask shapes") {
    Rng rng(1);
    num::MhaParams<double> p("mha", 6, rng);
    Tape<double> tape;
    auto* x = tape.constant(Tensor<double>({1, 2, 6}));
    CHECK_THROWS_AS(num::multi_head_attention(tape, x, x, x, 4, nullptr, p), ConfigError);
    Tensor<double> bad_mask({2, 5});
    CHECK_THROWS_AS(num::multi_head_attention(tape, x, x, x, 2, &bad_mask, p), ShapeError);
}

TEST_CASE("mha gradient vs finite differences (3 tokens, d=8, h=2)") {
    Rng rng(3);
    num::MhaParams<double> p("mha", 8, rng);
    Tensor<double> x({1, 3, 8});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform_sym(1.0);

    Tensor<double> readout({3, 8});
    for (std::size_t i = 0; i < readout.numel(); ++i) readout[i] = rng.uniform_sym(1.0);

    std::vector<Tensor<double>> inputs{x,      p.q.w.value, p.q.b.value, p.wk.value,
                                       p.v.w.value, p.v.b.value, p.o.w.value, p.o.b.value};
    const double err = num::grad_check(
        [&](Tape<double>& t, const std::vector<Node<double>*>& xs) {
            // wire leaves straight in so their grads are checked
            auto* q = num::add(t, num::matmul(t, xs[0], xs[1]), xs[2]);
            auto* k = num::matmul(t, xs[0], xs[3]);
            auto* v = num::add(t, num::matmul(t, xs[0], xs[4]), xs[5]);
            auto* qh = num::split_heads(t, q, 2);
            auto* kh = num::split_heads(t, k, 2);
            auto* vh = num::split_heads(t, v, 2);
            auto* s = num::scale(t, num::matmul(t, qh, kh, true), 0.5); // 1/sqrt(4)
            auto* a = num::softmax_masked(t, s);
            auto* ctx = num::merge_heads(t, num::matmul(t, a, vh));
            auto* out = num::add(t, num::matmul(t, ctx, xs[6]), xs[7]);
            return num::sum_all(t, num::matmul(t, out, t.constant(readout), true));
        },
        inputs);
    CHECK(err < 1e-4);
}

TEST_CASE("ffn values and gradient") {
    Rng rng(4);
    num::FfnParams<double> p("ffn", 2, 8, rng);

    SUBCASE("zero weights give zero output") {
        p.lin1.w.value.fill(0);
        p.lin2.w.value.fill(0);
        Tape<double> tape;
        auto* x = tape.constant(Tensor<double>({1, 1, 2}, {0.4, -0.7}));
        auto* y = num::ffn(tape, x, p);
        CHECK(y->value[0] == 0.0);
        CHECK(y->value[1] == 0.0);
    }

    SUBCASE("identity-shaped construction reproduces max(x,0)") {
        num::FfnParams<double> idp("ffn", 2, 2, rng);
        idp.lin1.w.value = identity(2);
        idp.lin1.b.value.fill(0);
        idp.lin2.w.value = identity(2);
        idp.lin2.b.value.fill(0);
        Tape<double> tape;
        auto* x = tape.constant(Tensor<double>({1, 1, 2}, {0.4, -0.7}));
        auto* y = num::ffn(tape, x, idp);
        CHECK(y->value[0] == doctest::Approx(0.4).epsilon(1e-12));
        CHECK(y->value[1] == 0.0);
    }

    SUBCASE("gradient") {
        Tensor<double> x({2, 3, 2});
        for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform_sym(1.0);
        std::vector<Tensor<double>> inputs{x, p.lin1.w.value, p.lin1.b.value, p.lin2.w.value,
                                           p.lin2.b.value};
        const double err = num::grad_check(
            [&](Tape<double>& t, const std::vector<Node<double>*>& xs) {
                auto* h = num::relu(t, num::add(t, num::matmul(t, xs[0], xs[1]), xs[2]));
                auto* y = num::add(t, num::matmul(t, h, xs[3]), xs[4]);
                return num::sum_all(t, y);
            },
            inputs);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("xavier init is fan-scaled and reproducible") {
    Rng a(7), b(7);
    const auto w1 = num::xavier_uniform<double>(16, 48, a);
    const auto w2 = num::xavier_uniform<double>(16, 48, b);
    const double limit = std::sqrt(6.0 / 64.0);
    for (std::size_t i = 0; i < w1.numel(); ++i) {
        CHECK(w1[i] == w2[i]);
        CHECK(std::abs(w1[i]) <= limit);
    }
}
