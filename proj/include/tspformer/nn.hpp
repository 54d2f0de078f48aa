#pragma once

#include <cmath>
#include <string>
#include <type_traits>
#include <vector>

#include "tspformer/autograd.hpp"
#include "tspformer/error.hpp"
#include "tspformer/rng.hpp"
#include "tspformer/tensor.hpp"

namespace tspformer::num {

/// Xavier-style fan-based uniform init; draws happen in double so float and
/// double instantiations see the same values (modulo rounding).
template <class Scalar>
Tensor<Scalar> xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    Tensor<Scalar> t({fan_in, fan_out});
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<Scalar>(rng.uniform_sym(limit));
    return t;
}

template <class Scalar>
struct LinearParams {
    Parameter<Scalar> w; // [in, out]
    Parameter<Scalar> b; // [out]

    LinearParams() = default;
    LinearParams(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
        : w(name + ".w", xavier_uniform<Scalar>(in, out, rng)),
          b(name + ".b", Tensor<Scalar>({out})) {}

    void collect(std::vector<Parameter<Scalar>*>& out) {
        out.push_back(&w);
        out.push_back(&b);
    }
};

template <class Scalar>
Node<Scalar>* linear(Tape<Scalar>& tape, Node<Scalar>* x, LinearParams<Scalar>& p) {
    return add(tape, matmul(tape, x, tape.param(p.w)), tape.param(p.b));
}

template <class Scalar>
struct LayerNormParams {
    Parameter<Scalar> gamma;
    Parameter<Scalar> beta;

    LayerNormParams() = default;
    LayerNormParams(const std::string& name, std::size_t d)
        : gamma(name + ".gamma", Tensor<Scalar>::full({d}, Scalar(1))),
          beta(name + ".beta", Tensor<Scalar>({d})) {}

    void collect(std::vector<Parameter<Scalar>*>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }
};

template <class Scalar>
Node<Scalar>* layer_norm(Tape<Scalar>& tape, Node<Scalar>* x, LayerNormParams<Scalar>& p) {
    return layer_norm(tape, x, tape.param(p.gamma), tape.param(p.beta));
}

template <class Scalar>
struct MhaParams {
    LinearParams<Scalar> q;
    // no key bias: a shared key offset shifts every score in a row equally
    // and cancels in the softmax, so the parameter would be dead weight
    Parameter<Scalar> wk;
    LinearParams<Scalar> v, o;

    MhaParams() = default;
    MhaParams(const std::string& name, std::size_t d, Rng& rng)
        : q(name + ".q", d, d, rng),
          wk(name + ".k.w", xavier_uniform<Scalar>(d, d, rng)),
          v(name + ".v", d, d, rng),
          o(name + ".o", d, d, rng) {}

    void collect(std::vector<Parameter<Scalar>*>& out) {
        q.collect(out);
        out.push_back(&wk);
        v.collect(out);
        o.collect(out);
    }
};

/// Scaled-dot-product multi-head attention with input/output projections.
/// q/k/v are [B, L, d]; the optional additive {0,-inf} mask broadcasts over
/// batch and heads (shape suffix of [B, h, Lq, Lk]).
template <class Scalar>
Node<Scalar>* multi_head_attention(Tape<Scalar>& tape, Node<Scalar>* q, Node<Scalar>* k,
                                   Node<Scalar>* v, std::size_t heads,
                                   const std::type_identity_t<Tensor<Scalar>>* mask,
                                   MhaParams<Scalar>& p) {
    const std::size_t d = q->value.dim(q->value.rank() - 1);
    if (heads == 0 || d % heads != 0) {
        throw ConfigError("multi_head_attention: dim " + std::to_string(d) +
                          " not divisible by " + std::to_string(heads) + " heads");
    }
    Node<Scalar>* qh = split_heads(tape, linear(tape, q, p.q), heads);
    Node<Scalar>* kh = split_heads(tape, matmul(tape, k, tape.param(p.wk)), heads);
    Node<Scalar>* vh = split_heads(tape, linear(tape, v, p.v), heads);
    const Scalar inv_sqrt = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(d / heads)));
    Node<Scalar>* scores = scale(tape, matmul(tape, qh, kh, /*transpose_b=*/true), inv_sqrt);
    Node<Scalar>* attn = softmax_masked(tape, scores, mask);
    Node<Scalar>* ctx = merge_heads(tape, matmul(tape, attn, vh));
    return linear(tape, ctx, p.o);
}

template <class Scalar>
struct FfnParams {
    LinearParams<Scalar> lin1, lin2;

    FfnParams() = default;
    FfnParams(const std::string& name, std::size_t d, std::size_t hidden, Rng& rng)
        : lin1(name + ".1", d, hidden, rng), lin2(name + ".2", hidden, d, rng) {}

    void collect(std::vector<Parameter<Scalar>*>& out) {
        lin1.collect(out);
        lin2.collect(out);
    }
};

/// linear -> ReLU -> linear
template <class Scalar>
Node<Scalar>* ffn(Tape<Scalar>& tape, Node<Scalar>* x, FfnParams<Scalar>& p) {
    return linear(tape, relu(tape, linear(tape, x, p.lin1)), p.lin2);
}

} // namespace tspformer::num
