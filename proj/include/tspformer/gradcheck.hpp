#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "tspformer/autograd.hpp"
#include "tspformer/error.hpp"
#include "tspformer/tensor.hpp"

namespace tspformer::num {

/// Central-difference check of a scalar-valued function built on a tape.
///
/// `build(tape, leaves)` must construct the forward graph from the given leaf
/// nodes (one per input tensor, in order) and return the scalar root. It is
/// re-invoked for every probe, so it has to be deterministic. Returns the
/// maximum relative error between analytic and numeric gradients with the
/// denominator max(|analytic|, |numeric|, 1e-8). Run with double tensors.
template <class Build>
double grad_check(Build&& build, const std::vector<Tensor<double>>& inputs, double h = 1e-5) {
    auto evaluate = [&](const std::vector<Tensor<double>>& xs, std::vector<Tensor<double>>* grads) {
        Tape<double> tape;
        std::vector<Node<double>*> leaves;
        leaves.reserve(xs.size());
        for (const auto& x : xs) leaves.push_back(tape.leaf(x));
        Node<double>* root = build(tape, leaves);
        const double y = root->value[0];
        if (!std::isfinite(y)) throw NumericError("grad_check: non-finite function value");
        if (grads) {
            tape.backward(root);
            grads->clear();
            for (Node<double>* leaf : leaves) {
                grads->push_back(leaf->grad.empty() ? Tensor<double>(leaf->value.shape())
                                                    : leaf->grad);
            }
        }
        return y;
    };

    std::vector<Tensor<double>> analytic;
    evaluate(inputs, &analytic);

    double max_rel = 0.0;
    std::vector<Tensor<double>> probe = inputs;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        for (std::size_t i = 0; i < inputs[t].numel(); ++i) {
            const double x0 = probe[t][i];
            probe[t][i] = x0 + h;
            const double fp = evaluate(probe, nullptr);
            probe[t][i] = x0 - h;
            const double fm = evaluate(probe, nullptr);
            probe[t][i] = x0;
            const double numeric = (fp - fm) / (2.0 * h);
            if (!std::isfinite(numeric)) throw NumericError("grad_check: non-finite difference");
            const double a = analytic[t][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
        }
    }
    return max_rel;
}

/// Same check for losses that read their inputs from Parameter objects (the
/// whole model). `forward(with_grad)` must rebuild the computation from the
/// parameters' current values, run backward when asked, and return the
/// scalar loss.
template <class Forward>
double grad_check_params(Forward&& forward, const std::vector<Parameter<double>*>& params,
                         double h = 1e-5) {
    for (Parameter<double>* p : params) p->zero_grad();
    const double base = forward(true);
    if (!std::isfinite(base)) throw NumericError("grad_check: non-finite function value");

    std::vector<Tensor<double>> analytic;
    analytic.reserve(params.size());
    for (Parameter<double>* p : params) analytic.push_back(p->grad);

    double max_rel = 0.0;
    for (std::size_t t = 0; t < params.size(); ++t) {
        Tensor<double>& value = params[t]->value;
        for (std::size_t i = 0; i < value.numel(); ++i) {
            const double x0 = value[i];
            value[i] = x0 + h;
            const double fp = forward(false);
            value[i] = x0 - h;
            const double fm = forward(false);
            value[i] = x0;
            const double numeric = (fp - fm) / (2.0 * h);
            if (!std::isfinite(numeric)) throw NumericError("grad_check: non-finite difference");
            const double a = analytic[t][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
        }
    }
    for (Parameter<double>* p : params) p->zero_grad();
    return max_rel;
}

} // namespace tspformer::num
