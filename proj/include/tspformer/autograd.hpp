#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "tspformer/error.hpp"
#include "tspformer/rng.hpp"
#include "tspformer/tensor.hpp"

namespace tspformer::num {

/// A learnable array with its accumulated gradient and AdamW moment buffers.
template <class Scalar>
struct Parameter {
    std::string name;
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    Tensor<Scalar> adam_m;
    Tensor<Scalar> adam_v;

    Parameter() = default;
    Parameter(std::string n, Tensor<Scalar> v)
        : name(std::move(n)),
          value(std::move(v)),
          grad(value.shape()),
          adam_m(value.shape()),
          adam_v(value.shape()) {}

    void zero_grad() { grad.fill(Scalar(0)); }
};

template <class Scalar>
class Tape;

/// One recorded operation result. `backward` pulls this node's grad into its
/// parents (captured in the closure); it is empty for constants and leaves.
template <class Scalar>
struct Node {
    Tensor<Scalar> value;
    Tensor<Scalar> grad; // allocated lazily during backward
    bool requires_grad = false;
    std::function<void(Node<Scalar>&)> backward;
};

/// Ensures the node's grad buffer exists (zeroed) and returns it.
template <class Scalar>
Tensor<Scalar>& grad_of(Node<Scalar>& n) {
    if (n.grad.empty()) n.grad = Tensor<Scalar>(n.value.shape());
    return n.grad;
}

/// Reverse-mode record of one forward computation. Creation order is a valid
/// topological order, so backward is a single reverse sweep. Single-threaded:
/// one tape per training step, one writer.
template <class Scalar>
class Tape {
public:
    using NodeT = Node<Scalar>;

    NodeT* constant(Tensor<Scalar> v) { return push(std::move(v), false, nullptr); }

    NodeT* leaf(Tensor<Scalar> v) { return push(std::move(v), true, nullptr); }

    /// Leaf whose gradient is routed into the parameter's grad buffer.
    NodeT* param(Parameter<Scalar>& p) {
        NodeT* n = push(p.value, true, nullptr);
        Parameter<Scalar>* pp = &p;
        n->backward = [pp](NodeT& self) {
            for (std::size_t i = 0; i < self.grad.numel(); ++i) pp->grad[i] += self.grad[i];
        };
        return n;
    }

    NodeT* push(Tensor<Scalar> v, bool requires_grad, std::function<void(NodeT&)> fn) {
        nodes_.push_back(std::make_unique<NodeT>());
        NodeT* n = nodes_.back().get();
        n->value = std::move(v);
        n->requires_grad = requires_grad;
        n->backward = std::move(fn);
        return n;
    }

    /// Seeds d(root)/d(root) = 1 and sweeps the tape in reverse creation
    /// order. Root must be a scalar (one element).
    void backward(NodeT* root) {
        if (root->value.numel() != 1) {
            throw ShapeError("backward root must be scalar, got " + root->value.shape_str());
        }
        grad_of(*root)[0] = Scalar(1);
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            NodeT& n = *nodes_[i];
            if (n.grad.empty() || !n.backward) continue;
            n.backward(n);
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    std::vector<std::unique_ptr<NodeT>> nodes_;
};

namespace detail {

/// Folds a tensor shape into [batch, rows, cols] over the last two dims.
struct MatView {
    std::size_t batch, rows, cols;
};

template <class Scalar>
MatView mat_view(const Tensor<Scalar>& t, const char* ctx) {
    if (t.rank() < 2) throw ShapeError(std::string(ctx) + ": need rank >= 2, got " + t.shape_str());
    MatView v;
    v.rows = t.dim(t.rank() - 2);
    v.cols = t.dim(t.rank() - 1);
    v.batch = 1;
    for (std::size_t i = 0; i + 2 < t.rank(); ++i) v.batch *= t.dim(i);
    return v;
}

template <class Scalar>
void add_into(Tensor<Scalar>& dst, const Tensor<Scalar>& src) {
    for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

} // namespace detail

// ---- matmul -----------------------------------------------------------------

/// C = A * B (or A * B^T with transpose_b). Leading dims of A are batch dims;
/// B is either shared 2D weights or carries the same batch dims as A.
template <class Scalar>
Node<Scalar>* matmul(Tape<Scalar>& tape, Node<Scalar>* a, Node<Scalar>* b, bool transpose_b = false) {
    using NodeT = Node<Scalar>;
    const auto av = detail::mat_view(a->value, "matmul lhs");
    const auto bv = detail::mat_view(b->value, "matmul rhs");
    const bool shared_b = b->value.rank() == 2 && a->value.rank() > 2;
    if (!shared_b && av.batch != bv.batch) {
        throw ShapeError("matmul: batch dims differ, " + a->value.shape_str() + " vs " +
                         b->value.shape_str());
    }
    const std::size_t k = av.cols;
    const std::size_t bk = transpose_b ? bv.cols : bv.rows;
    const std::size_t n = transpose_b ? bv.rows : bv.cols;
    if (k != bk) {
        throw ShapeError("matmul: inner dims differ, " + a->value.shape_str() + " vs " +
                         b->value.shape_str());
    }

    std::vector<std::size_t> out_shape(a->value.shape().begin(), a->value.shape().end() - 1);
    out_shape.push_back(n);
    Tensor<Scalar> out = Tensor<Scalar>::uninit(std::move(out_shape));

    // With shared 2D weights the batch collapses into the row dimension, so
    // the whole product is one kernel call (and one accumulation in backward).
    const std::size_t batch = shared_b ? 1 : av.batch;
    const std::size_t m = shared_b ? av.batch * av.rows : av.rows;
    const std::size_t a_stride = m * k;
    const std::size_t b_stride = shared_b ? 0 : bv.rows * bv.cols;
    const std::size_t c_stride = m * n;
    for (std::size_t bi = 0; bi < batch; ++bi) {
        const Scalar* A = a->value.data() + bi * a_stride;
        const Scalar* B = b->value.data() + bi * b_stride;
        Scalar* C = out.data() + bi * c_stride;
        if (transpose_b) {
            gemm_nt(A, B, C, m, k, n, false);
        } else {
            gemm_nn(A, B, C, m, k, n, false);
        }
    }

    const bool rg = a->requires_grad || b->requires_grad;
    std::function<void(NodeT&)> fn;
    if (rg) {
        fn = [a, b, transpose_b, batch, m, k, n, a_stride, b_stride, c_stride](NodeT& self) {
            // dA = G * B^T runs as plain NN on a transposed copy of B; the
            // copy is tiny next to the m*n*k product and the NN kernel is
            // the fastest of the three.
            std::vector<Scalar> bt;
            if (a->requires_grad && !transpose_b) bt.resize(k * n);
            for (std::size_t bi = 0; bi < batch; ++bi) {
                const Scalar* G = self.grad.data() + bi * c_stride;
                const Scalar* A = a->value.data() + bi * a_stride;
                const Scalar* B = b->value.data() + bi * b_stride;
                if (a->requires_grad) {
                    Scalar* dA = grad_of(*a).data() + bi * a_stride;
                    if (transpose_b) {
                        gemm_nn(G, B, dA, m, n, k, true); // dA = G * B
                    } else {
                        for (std::size_t kk = 0; kk < k; ++kk) {
                            for (std::size_t j = 0; j < n; ++j) bt[j * k + kk] = B[kk * n + j];
                        }
                        gemm_nn(G, bt.data(), dA, m, n, k, true); // dA = G * B^T
                    }
                }
                if (b->requires_grad) {
                    Scalar* dB = grad_of(*b).data() + bi * b_stride;
                    if (transpose_b) {
                        gemm_tn(G, A, dB, n, m, k, true); // dB = G^T * A
                    } else {
                        gemm_tn(A, G, dB, k, m, n, true); // dB = A^T * G
                    }
                }
            }
        };
    }
    return tape.push(std::move(out), rg, std::move(fn));
}

// ---- elementwise / broadcast --------------------------------------------------

/// a + b where b's shape is a suffix of a's shape (bias, positional table,
/// additive masks). Gradient for b sums over the repeated leading dims.
template <class Scalar>
Node<Scalar>* add(Tape<Scalar>& tape, Node<Scalar>* a, Node<Scalar>* b) {
    using NodeT = Node<Scalar>;
    if (!is_suffix_shape(a->value.shape(), b->value.shape())) {
        throw ShapeError("add: " + b->value.shape_str() + " is not a suffix of " +
                         a->value.shape_str());
    }
    const std::size_t bn = b->value.numel();
    Tensor<Scalar> out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b->value[i % bn];

    const bool rg = a->requires_grad || b->requires_grad;
    std::function<void(NodeT&)> fn;
    if (rg) {
        fn = [a, b, bn](NodeT& self) {
            if (a->requires_grad) detail::add_into(grad_of(*a), self.grad);
            if (b->requires_grad) {
                Tensor<Scalar>& db = grad_of(*b);
                for (std::size_t i = 0; i < self.grad.numel(); ++i) db[i % bn] += self.grad[i];
            }
        };
    }
    return tape.push(std::move(out), rg, std::move(fn));
}

template <class Scalar>
Node<Scalar>* scale(Tape<Scalar>& tape, Node<Scalar>* a, Scalar c) {
    using NodeT = Node<Scalar>;
    Tensor<Scalar> out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c;
    std::function<void(NodeT&)> fn;
    if (a->requires_grad) {
        fn = [a, c](NodeT& self) {
            Tensor<Scalar>& da = grad_of(*a);
            for (std::size_t i = 0; i < self.grad.numel(); ++i) da[i] += c * self.grad[i];
        };
    }
    return tape.push(std::move(out), a->requires_grad, std::move(fn));
}

template <class Scalar>
Node<Scalar>* relu(Tape<Scalar>& tape, Node<Scalar>* a) {
    using NodeT = Node<Scalar>;
    Tensor<Scalar> out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) {
        if (out[i] < Scalar(0)) out[i] = Scalar(0);
    }
    std::function<void(NodeT&)> fn;
    if (a->requires_grad) {
        fn = [a](NodeT& self) {
            Tensor<Scalar>& da = grad_of(*a);
            for (std::size_t i = 0; i < self.grad.numel(); ++i) {
                if (a->value[i] > Scalar(0)) da[i] += self.grad[i];
            }
        };
    }
    return tape.push(std::move(out), a->requires_grad, std::move(fn));
}

template <class Scalar>
Node<Scalar>* reshape(Tape<Scalar>& tape, Node<Scalar>* a, std::vector<std::size_t> shape) {
    using NodeT = Node<Scalar>;
    if (Tensor<Scalar>::numel_of(shape) != a->value.numel()) {
        throw ShapeError("reshape: element count mismatch for " + a->value.shape_str());
    }
    Tensor<Scalar> out = Tensor<Scalar>::uninit(std::move(shape));
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i];
    std::function<void(NodeT&)> fn;
    if (a->requires_grad) {
        fn = [a](NodeT& self) {
            Tensor<Scalar>& da = grad_of(*a);
            for (std::size_t i = 0; i < self.grad.numel(); ++i) da[i] += self.grad[i];
        };
    }
    return tape.push(std::move(out), a->requires_grad, std::move(fn));
}

template <class Scalar>
Node<Scalar>* sum_all(Tape<Scalar>& tape, Node<Scalar>* a) {
    using NodeT = Node<Scalar>;
    Scalar total(0);
    for (std::size_t i = 0; i < a->value.numel(); ++i) total += a->value[i];
    std::function<void(NodeT&)> fn;
    if (a->requires_grad) {
        fn = [a](NodeT& self) {
            Tensor<Scalar>& da = grad_of(*a);
            const Scalar g = self.grad[0];
            for (std::size_t i = 0; i < da.numel(); ++i) da[i] += g;
        };
    }
    return tape.push(Tensor<Scalar>::scalar(total), a->requires_grad, std::move(fn));
}

// ---- head split / merge -------------------------------------------------------

/// [B, S, d] -> [B, h, S, d/h]
template <class Scalar>
Node<Scalar>* split_heads(Tape<Scalar>& tape, Node<Scalar>* x, std::size_t heads) {
    using NodeT = Node<Scalar>;
    if (x->value.rank() != 3) throw ShapeError("split_heads: need [B,S,d], got " + x->value.shape_str());
    const std::size_t B = x->value.dim(0), S = x->value.dim(1), d = x->value.dim(2);
    if (d % heads != 0) throw ConfigError("split_heads: dim not divisible by head count");
    const std::size_t hd = d / heads;
    Tensor<Scalar> out = Tensor<Scalar>::uninit({B, heads, S, hd});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t c = 0; c < hd; ++c)
                    out[((b * heads + h) * S + s) * hd + c] = x->value[(b * S + s) * d + h * hd + c];
    std::function<void(NodeT&)> fn;
    if (x->requires_grad) {
        fn = [x, B, S, d, heads, hd](NodeT& self) {
            Tensor<Scalar>& dx = grad_of(*x);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t s = 0; s < S; ++s)
                    for (std::size_t h = 0; h < heads; ++h)
                        for (std::size_t c = 0; c < hd; ++c)
                            dx[(b * S + s) * d + h * hd + c] +=
                                self.grad[((b * heads + h) * S + s) * hd + c];
        };
    }
    return tape.push(std::move(out), x->requires_grad, std::move(fn));
}

/// [B, h, S, d/h] -> [B, S, d]
template <class Scalar>
Node<Scalar>* merge_heads(Tape<Scalar>& tape, Node<Scalar>* x) {
    using NodeT = Node<Scalar>;
    if (x->value.rank() != 4) throw ShapeError("merge_heads: need [B,h,S,hd], got " + x->value.shape_str());
    const std::size_t B = x->value.dim(0), heads = x->value.dim(1), S = x->value.dim(2), hd = x->value.dim(3);
    const std::size_t d = heads * hd;
    Tensor<Scalar> out = Tensor<Scalar>::uninit({B, S, d});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t s = 0; s < S; ++s)
                for (std::size_t c = 0; c < hd; ++c)
                    out[(b * S + s) * d + h * hd + c] = x->value[((b * heads + h) * S + s) * hd + c];
    std::function<void(NodeT&)> fn;
    if (x->requires_grad) {
        fn = [x, B, S, d, heads, hd](NodeT& self) {
            Tensor<Scalar>& dx = grad_of(*x);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t h = 0; h < heads; ++h)
                    for (std::size_t s = 0; s < S; ++s)
                        for (std::size_t c = 0; c < hd; ++c)
                            dx[((b * heads + h) * S + s) * hd + c] +=
                                self.grad[(b * S + s) * d + h * hd + c];
        };
    }
    return tape.push(std::move(out), x->requires_grad, std::move(fn));
}

// ---- row gather ---------------------------------------------------------------

/// out[b, v, :] = x[b, indices[b][v], :]; x may also be 2D [N, d] shared
/// across the index batch. Backward scatter-adds into the gathered rows.
template <class Scalar>
Node<Scalar>* gather_rows(Tape<Scalar>& tape, Node<Scalar>* x,
                          const std::vector<std::vector<int>>& indices) {
    using NodeT = Node<Scalar>;
    const bool shared = x->value.rank() == 2;
    if (!shared && x->value.rank() != 3) {
        throw ShapeError("gather_rows: need [N,d] or [B,N,d], got " + x->value.shape_str());
    }
    const std::size_t B = indices.size();
    if (!shared && x->value.dim(0) != B) throw ShapeError("gather_rows: batch dim mismatch");
    const std::size_t N = shared ? x->value.dim(0) : x->value.dim(1);
    const std::size_t d = shared ? x->value.dim(1) : x->value.dim(2);
    const std::size_t V = indices.empty() ? 0 : indices.front().size();
    for (const auto& row : indices) {
        if (row.size() != V) throw ShapeError("gather_rows: ragged index batch");
        for (int ix : row) {
            if (ix < 0 || static_cast<std::size_t>(ix) >= N) {
                throw ValidationError("gather_rows: index out of range");
            }
        }
    }
    Tensor<Scalar> out = Tensor<Scalar>::uninit({B, V, d});
    for (std::size_t b = 0; b < B; ++b) {
        const Scalar* src = x->value.data() + (shared ? 0 : b * N * d);
        for (std::size_t v = 0; v < V; ++v) {
            const Scalar* row = src + static_cast<std::size_t>(indices[b][v]) * d;
            Scalar* dst = out.data() + (b * V + v) * d;
            for (std::size_t c = 0; c < d; ++c) dst[c] = row[c];
        }
    }
    std::function<void(NodeT&)> fn;
    if (x->requires_grad) {
        fn = [x, indices, shared, B, N, d, V](NodeT& self) {
            Tensor<Scalar>& dx = grad_of(*x);
            for (std::size_t b = 0; b < B; ++b) {
                Scalar* dst = dx.data() + (shared ? 0 : b * N * d);
                for (std::size_t v = 0; v < V; ++v) {
                    Scalar* row = dst + static_cast<std::size_t>(indices[b][v]) * d;
                    const Scalar* g = self.grad.data() + (b * V + v) * d;
                    for (std::size_t c = 0; c < d; ++c) row[c] += g[c];
                }
            }
        };
    }
    return tape.push(std::move(out), x->requires_grad, std::move(fn));
}

// ---- softmax family -------------------------------------------------------------

namespace detail {

/// Returns the additive mask entry for flat row `r`, column `j`, where the
/// mask's shape is a suffix of the input's shape.
template <class Scalar>
struct MaskLookup {
    const Tensor<Scalar>* mask = nullptr;
    std::size_t period = 1; // rows in the mask before it repeats

    MaskLookup(const Tensor<Scalar>* m, const std::vector<std::size_t>& xshape) {
        mask = m;
        if (!mask) return;
        if (!is_suffix_shape(xshape, mask->shape()) || mask->rank() < 1 ||
            mask->dim(mask->rank() - 1) != xshape.back()) {
            throw ShapeError("mask shape " + mask->shape_str() + " does not broadcast over " +
                             Tensor<Scalar>::shape_str(xshape));
        }
        period = mask->numel() / mask->dim(mask->rank() - 1);
    }

    Scalar operator()(std::size_t row, std::size_t j, std::size_t cols) const {
        if (!mask) return Scalar(0);
        return (*mask)[(row % period) * cols + j];
    }
};

} // namespace detail

/// Row softmax over the last dim with an optional additive {0, -inf} mask
/// (suffix-broadcast). Max-subtracted; masked entries come out exactly 0.
/// A fully masked row is an error.
template <class Scalar>
Node<Scalar>* softmax_masked(Tape<Scalar>& tape, Node<Scalar>* x,
                             const Tensor<Scalar>* mask = nullptr) {
    using NodeT = Node<Scalar>;
    const std::size_t cols = x->value.dim(x->value.rank() - 1);
    const std::size_t rows = x->value.numel() / cols;
    detail::MaskLookup<Scalar> m(mask, x->value.shape());
    Tensor<Scalar> out = x->value;
    for (std::size_t r = 0; r < rows; ++r) {
        Scalar* row = out.data() + r * cols;
        Scalar mx = -std::numeric_limits<Scalar>::infinity();
        for (std::size_t j = 0; j < cols; ++j) {
            row[j] += m(r, j, cols);
            if (row[j] > mx) mx = row[j];
        }
        if (!(mx > -std::numeric_limits<Scalar>::infinity())) {
            throw ValidationError("softmax_masked: fully masked row " + std::to_string(r));
        }
        Scalar sum(0);
        for (std::size_t j = 0; j < cols; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        const Scalar inv = Scalar(1) / sum;
        for (std::size_t j = 0; j < cols; ++j) row[j] *= inv;
    }
    std::function<void(NodeT&)> fn;
    if (x->requires_grad) {
        fn = [x, rows, cols](NodeT& self) {
            Tensor<Scalar>& dx = grad_of(*x);
            for (std::size_t r = 0; r < rows; ++r) {
                const Scalar* y = self.value.data() + r * cols;
                const Scalar* g = self.grad.data() + r * cols;
                Scalar dot(0);
                for (std::size_t j = 0; j < cols; ++j) dot += g[j] * y[j];
                Scalar* d = dx.data() + r * cols;
                for (std::size_t j = 0; j < cols; ++j) d[j] += y[j] * (g[j] - dot);
            }
        };
    }
    return tape.push(std::move(out), x->requires_grad, std::move(fn));
}

/// Log of the masked row softmax; masked entries are exactly -inf. Used for
/// the numerically stable loss path.
template <class Scalar>
Node<Scalar>* log_softmax_masked(Tape<Scalar>& tape, Node<Scalar>* x,
                                 const Tensor<Scalar>* mask = nullptr) {
    using NodeT = Node<Scalar>;
    const std::size_t cols = x->value.dim(x->value.rank() - 1);
    const std::size_t rows = x->value.numel() / cols;
    detail::MaskLookup<Scalar> m(mask, x->value.shape());
    Tensor<Scalar> out = x->value;
    for (std::size_t r = 0; r < rows; ++r) {
        Scalar* row = out.data() + r * cols;
        Scalar mx = -std::numeric_limits<Scalar>::infinity();
        for (std::size_t j = 0; j < cols; ++j) {
            row[j] += m(r, j, cols);
            if (row[j] > mx) mx = row[j];
        }
        if (!(mx > -std::numeric_limits<Scalar>::infinity())) {
            throw ValidationError("log_softmax_masked: fully masked row " + std::to_string(r));
        }
        Scalar sum(0);
        for (std::size_t j = 0; j < cols; ++j) sum += std::exp(row[j] - mx);
        const Scalar lse = mx + std::log(sum);
        for (std::size_t j = 0; j < cols; ++j) row[j] -= lse;
    }
    std::function<void(NodeT&)> fn;
    if (x->requires_grad) {
        fn = [x, rows, cols](NodeT& self) {
            Tensor<Scalar>& dx = grad_of(*x);
            for (std::size_t r = 0; r < rows; ++r) {
                const Scalar* lp = self.value.data() + r * cols;
                const Scalar* g = self.grad.data() + r * cols;
                Scalar gsum(0);
                for (std::size_t j = 0; j < cols; ++j) gsum += g[j];
                Scalar* d = dx.data() + r * cols;
                for (std::size_t j = 0; j < cols; ++j) {
                    const Scalar p = std::exp(lp[j]); // 0 on masked entries
                    d[j] += g[j] - p * gsum;
                }
            }
        };
    }
    return tape.push(std::move(out), x->requires_grad, std::move(fn));
}

// ---- layer norm -----------------------------------------------------------------

/// Per-row normalization over the last dim, then gamma/beta affine.
template <class Scalar>
Node<Scalar>* layer_norm(Tape<Scalar>& tape, Node<Scalar>* x, Node<Scalar>* gamma,
                         Node<Scalar>* beta, Scalar eps = Scalar(1e-5)) {
    using NodeT = Node<Scalar>;
    const std::size_t d = x->value.dim(x->value.rank() - 1);
    if (gamma->value.numel() != d || beta->value.numel() != d) {
        throw ShapeError("layer_norm: gamma/beta must have dim " + std::to_string(d));
    }
    const std::size_t rows = x->value.numel() / d;
    Tensor<Scalar> out = Tensor<Scalar>::uninit(x->value.shape());
    auto xhat = std::make_shared<Tensor<Scalar>>(Tensor<Scalar>::uninit(x->value.shape()));
    auto invstd = std::make_shared<std::vector<Scalar>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const Scalar* xr = x->value.data() + r * d;
        Scalar mean(0);
        for (std::size_t j = 0; j < d; ++j) mean += xr[j];
        mean /= Scalar(d);
        Scalar var(0);
        for (std::size_t j = 0; j < d; ++j) {
            const Scalar c = xr[j] - mean;
            var += c * c;
        }
        var /= Scalar(d);
        const Scalar inv = Scalar(1) / std::sqrt(var + eps);
        (*invstd)[r] = inv;
        Scalar* hr = xhat->data() + r * d;
        Scalar* yr = out.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
            hr[j] = (xr[j] - mean) * inv;
            yr[j] = gamma->value[j] * hr[j] + beta->value[j];
        }
    }
    const bool rg = x->requires_grad || gamma->requires_grad || beta->requires_grad;
    std::function<void(NodeT&)> fn;
    if (rg) {
        fn = [x, gamma, beta, xhat, invstd, rows, d](NodeT& self) {
            for (std::size_t r = 0; r < rows; ++r) {
                const Scalar* g = self.grad.data() + r * d;
                const Scalar* h = xhat->data() + r * d;
                if (gamma->requires_grad) {
                    Tensor<Scalar>& dg = grad_of(*gamma);
                    for (std::size_t j = 0; j < d; ++j) dg[j] += g[j] * h[j];
                }
                if (beta->requires_grad) {
                    Tensor<Scalar>& db = grad_of(*beta);
                    for (std::size_t j = 0; j < d; ++j) db[j] += g[j];
                }
                if (x->requires_grad) {
                    Scalar sum_gg(0), sum_ggh(0);
                    for (std::size_t j = 0; j < d; ++j) {
                        const Scalar gg = g[j] * gamma->value[j];
                        sum_gg += gg;
                        sum_ggh += gg * h[j];
                    }
                    const Scalar mean_gg = sum_gg / Scalar(d);
                    const Scalar mean_ggh = sum_ggh / Scalar(d);
                    Tensor<Scalar>& dx = grad_of(*x);
                    Scalar* dr = dx.data() + r * d;
                    const Scalar inv = (*invstd)[r];
                    for (std::size_t j = 0; j < d; ++j) {
                        const Scalar gg = g[j] * gamma->value[j];
                        dr[j] += inv * (gg - mean_gg - h[j] * mean_ggh);
                    }
                }
            }
        };
    }
    return tape.push(std::move(out), rg, std::move(fn));
}

// ---- dropout --------------------------------------------------------------------

/// Inverted dropout: zero with probability p and scale survivors by 1/(1-p)
/// during training; identity in eval mode. The mask is drawn here, on the
/// calling thread, so the random stream is consumed in a fixed order.
template <class Scalar>
Node<Scalar>* dropout(Tape<Scalar>& tape, Node<Scalar>* x, double p, bool training, Rng& rng) {
    using NodeT = Node<Scalar>;
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: rate must be in [0,1)");
    if (!training || p == 0.0) {
        // identity node keeps the graph uniform between modes
        Tensor<Scalar> out = x->value;
        std::function<void(NodeT&)> fn;
        if (x->requires_grad) {
            fn = [x](NodeT& self) { detail::add_into(grad_of(*x), self.grad); };
        }
        return tape.push(std::move(out), x->requires_grad, std::move(fn));
    }
    const Scalar keep_scale = Scalar(1.0 / (1.0 - p));
    auto mask = std::make_shared<Tensor<Scalar>>(x->value.shape());
    Tensor<Scalar> out = x->value;
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const Scalar m = rng.uniform01() < p ? Scalar(0) : keep_scale;
        (*mask)[i] = m;
        out[i] *= m;
    }
    std::function<void(NodeT&)> fn;
    if (x->requires_grad) {
        fn = [x, mask](NodeT& self) {
            Tensor<Scalar>& dx = grad_of(*x);
            for (std::size_t i = 0; i < self.grad.numel(); ++i) dx[i] += self.grad[i] * (*mask)[i];
        };
    }
    return tape.push(std::move(out), x->requires_grad, std::move(fn));
}

// ---- smoothed cross entropy -------------------------------------------------------

/// Summed label-smoothed cross entropy over all rows of log-probabilities.
/// Row r's target gets mass 1-eps; eps is spread uniformly over the row's
/// other *feasible* entries (mask entry 0). With no other feasible entry the
/// target takes all mass. Masked targets and zero-probability targets are
/// errors.
template <class Scalar>
Node<Scalar>* cross_entropy_smoothed(Tape<Scalar>& tape, Node<Scalar>* log_probs,
                                     const std::vector<int>& targets, double eps,
                                     const Tensor<Scalar>* feasible_mask = nullptr) {
    using NodeT = Node<Scalar>;
    const std::size_t cols = log_probs->value.dim(log_probs->value.rank() - 1);
    const std::size_t rows = log_probs->value.numel() / cols;
    if (targets.size() != rows) {
        throw ShapeError("cross_entropy: expected " + std::to_string(rows) + " targets, got " +
                         std::to_string(targets.size()));
    }
    if (eps < 0.0 || eps >= 1.0) throw ConfigError("cross_entropy: smoothing must be in [0,1)");
    detail::MaskLookup<Scalar> m(feasible_mask, log_probs->value.shape());

    auto weights = std::make_shared<Tensor<Scalar>>(log_probs->value.shape());
    Scalar total(0);
    for (std::size_t r = 0; r < rows; ++r) {
        const int t = targets[r];
        if (t < 0 || static_cast<std::size_t>(t) >= cols) {
            throw ValidationError("cross_entropy: target index out of range in row " + std::to_string(r));
        }
        if (m(r, static_cast<std::size_t>(t), cols) != Scalar(0)) {
            throw ValidationError("cross_entropy: target is masked in row " + std::to_string(r));
        }
        std::size_t feasible = 0;
        for (std::size_t j = 0; j < cols; ++j) {
            if (m(r, j, cols) == Scalar(0)) ++feasible;
        }
        const Scalar* lp = log_probs->value.data() + r * cols;
        if (!std::isfinite(lp[static_cast<std::size_t>(t)])) {
            throw NumericError("cross_entropy: target has probability 0 in row " + std::to_string(r));
        }
        Scalar* w = weights->data() + r * cols;
        const Scalar off = feasible > 1 ? Scalar(eps / double(feasible - 1)) : Scalar(0);
        const Scalar on = feasible > 1 ? Scalar(1.0 - eps) : Scalar(1);
        for (std::size_t j = 0; j < cols; ++j) {
            if (m(r, j, cols) != Scalar(0)) continue;
            const Scalar wj = j == static_cast<std::size_t>(t) ? on : off;
            if (wj == Scalar(0)) continue;
            w[j] = wj;
            total -= wj * lp[j];
        }
    }
    std::function<void(NodeT&)> fn;
    if (log_probs->requires_grad) {
        fn = [log_probs, weights](NodeT& self) {
            Tensor<Scalar>& dl = grad_of(*log_probs);
            const Scalar g = self.grad[0];
            for (std::size_t i = 0; i < dl.numel(); ++i) dl[i] -= g * (*weights)[i];
        };
    }
    return tape.push(Tensor<Scalar>::scalar(total), log_probs->requires_grad, std::move(fn));
}

} // namespace tspformer::num
