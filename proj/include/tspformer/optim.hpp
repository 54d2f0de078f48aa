#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "tspformer/autograd.hpp"
#include "tspformer/error.hpp"

namespace tspformer::num {

/// AdamW with decoupled weight decay. Moments live on the parameters; grads
/// are zeroed after every step.
template <class Scalar>
class AdamW {
public:
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
    double weight_decay = 0.0;

    std::uint64_t step_count() const { return t_; }
    void set_step_count(std::uint64_t t) { t_ = t; }

    void step(const std::vector<Parameter<Scalar>*>& params, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        for (Parameter<Scalar>* p : params) {
            for (std::size_t i = 0; i < p->grad.numel(); ++i) {
                if (!std::isfinite(static_cast<double>(p->grad[i]))) {
                    throw NumericError("non-finite gradient in parameter '" + p->name + "'");
                }
            }
            for (std::size_t i = 0; i < p->value.numel(); ++i) {
                const double g = static_cast<double>(p->grad[i]);
                const double m = beta1 * static_cast<double>(p->adam_m[i]) + (1.0 - beta1) * g;
                const double v = beta2 * static_cast<double>(p->adam_v[i]) + (1.0 - beta2) * g * g;
                p->adam_m[i] = static_cast<Scalar>(m);
                p->adam_v[i] = static_cast<Scalar>(v);
                const double mhat = m / bc1;
                const double vhat = v / bc2;
                double x = static_cast<double>(p->value[i]);
                x -= lr * weight_decay * x;
                x -= lr * mhat / (std::sqrt(vhat) + eps);
                p->value[i] = static_cast<Scalar>(x);
            }
            p->zero_grad();
        }
    }

private:
    std::uint64_t t_ = 0;
};

/// Global-norm gradient clipping; a no-op when max_norm <= 0.
template <class Scalar>
void clip_grad_norm(const std::vector<Parameter<Scalar>*>& params, double max_norm) {
    if (max_norm <= 0.0) return;
    double sq = 0.0;
    for (const Parameter<Scalar>* p : params) {
        for (std::size_t i = 0; i < p->grad.numel(); ++i) {
            const double g = static_cast<double>(p->grad[i]);
            sq += g * g;
        }
    }
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) return;
    const Scalar s = static_cast<Scalar>(max_norm / norm);
    for (Parameter<Scalar>* p : params) {
        for (std::size_t i = 0; i < p->grad.numel(); ++i) p->grad[i] *= s;
    }
}

} // namespace tspformer::num
