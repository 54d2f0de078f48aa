#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <memory>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "tspformer/error.hpp"

namespace tspformer::num {

namespace detail {

/// Leaves elements default-initialized (i.e. uninitialized for floats) so
/// buffers that are fully overwritten right away skip the zero-fill pass.
/// Explicit fills (assign/fill) behave as usual.
template <class T>
struct DefaultInitAllocator : std::allocator<T> {
    template <class U>
    struct rebind {
        using other = DefaultInitAllocator<U>;
    };
    using std::allocator<T>::allocator;

    template <class U>
    void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
        ::new (static_cast<void*>(p)) U;
    }
    template <class U, class... Args>
    void construct(U* p, Args&&... args) {
        ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
};

} // namespace detail

/// Dense row-major tensor. Scalar is float for model math and double for the
/// verification mode used by gradient checks.
template <class Scalar>
class Tensor {
public:
    using Storage = std::vector<Scalar, detail::DefaultInitAllocator<Scalar>>;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
        check_dims(shape_);
        data_.assign(numel_of(shape_), Scalar(0));
    }

    Tensor(std::vector<std::size_t> shape, std::initializer_list<Scalar> data)
        : shape_(std::move(shape)), data_(data.begin(), data.end()) {
        if (data_.size() != numel_of(shape_)) {
            throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
        }
    }

    /// Allocation without the zero-fill; every element must be written before
    /// it is read.
    static Tensor uninit(std::vector<std::size_t> shape) {
        Tensor t;
        t.shape_ = std::move(shape);
        check_dims(t.shape_);
        t.data_.resize(numel_of(t.shape_));
        return t;
    }

    static Tensor full(std::vector<std::size_t> shape, Scalar v) {
        Tensor t = uninit(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }

    static Tensor scalar(Scalar v) { return Tensor({1}, {v}); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    Scalar* data() { return data_.data(); }
    const Scalar* data() const { return data_.data(); }

    Scalar& operator[](std::size_t i) { return data_[i]; }
    Scalar operator[](std::size_t i) const { return data_[i]; }

    Scalar& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    Scalar at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    Scalar& at(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    Scalar at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    void fill(Scalar v) {
        for (auto& x : data_) x = v;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    static std::size_t numel_of(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return n;
    }

    static void check_dims(const std::vector<std::size_t>& shape) {
        for (std::size_t d : shape) {
            if (d == 0) throw ShapeError("tensor dims must be >= 1, got " + shape_str(shape));
        }
    }

    static std::string shape_str(const std::vector<std::size_t>& shape) {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

    std::string shape_str() const { return shape_str(shape_); }

private:
    std::vector<std::size_t> shape_;
    Storage data_;
};

template <class Scalar>
bool all_finite(const Tensor<Scalar>& t) {
    for (std::size_t i = 0; i < t.numel(); ++i) {
        if (!std::isfinite(t[i])) return false;
    }
    return true;
}

template <class Scalar>
void require_finite(const Tensor<Scalar>& t, const std::string& what) {
    if (!all_finite(t)) throw NumericError("non-finite values in " + what);
}

/// True when `small` equals the trailing dimensions of `big`, so that adding
/// `small` repeats it over the leading dimensions.
inline bool is_suffix_shape(const std::vector<std::size_t>& big, const std::vector<std::size_t>& small) {
    if (small.size() > big.size()) return false;
    const std::size_t off = big.size() - small.size();
    for (std::size_t i = 0; i < small.size(); ++i) {
        if (big[off + i] != small[i]) return false;
    }
    return true;
}



// ---- raw matrix kernels (row-major, 2D views) -------------------------------

/// C[m x n] (+)= A[m x k] * B[k x n]
template <class Scalar>
void gemm_nn(const Scalar* __restrict__ A, const Scalar* __restrict__ B, Scalar* __restrict__ C, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        Scalar* ci = C + i * n;
        if (!accumulate) {
            for (std::size_t j = 0; j < n; ++j) ci[j] = Scalar(0);
        }
        const Scalar* ai = A + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const Scalar a = ai[kk];
            const Scalar* bk = B + kk * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += a * bk[j];
        }
    }
}

/// C[m x n] (+)= A[m x k] * B[n x k]^T
///
/// The dot products accumulate over eight independent lanes with a fixed
/// reduction tree, which vectorizes without asking the compiler to
/// reassociate a strict sequential sum.
template <class Scalar>
void gemm_nt(const Scalar* __restrict__ A, const Scalar* __restrict__ B, Scalar* __restrict__ C, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
    constexpr std::size_t kLanes = 8;
    for (std::size_t i = 0; i < m; ++i) {
        const Scalar* ai = A + i * k;
        Scalar* ci = C + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const Scalar* bj = B + j * k;
            Scalar lane[kLanes] = {};
            std::size_t kk = 0;
            for (; kk + kLanes <= k; kk += kLanes) {
                for (std::size_t l = 0; l < kLanes; ++l) lane[l] += ai[kk + l] * bj[kk + l];
            }
            Scalar acc = ((lane[0] + lane[4]) + (lane[2] + lane[6])) +
                         ((lane[1] + lane[5]) + (lane[3] + lane[7]));
            for (; kk < k; ++kk) acc += ai[kk] * bj[kk];
            if (accumulate) {
                ci[j] += acc;
            } else {
                ci[j] = acc;
            }
        }
    }
}

/// C[m x n] (+)= A[k x m]^T * B[k x n]
template <class Scalar>
void gemm_tn(const Scalar* __restrict__ A, const Scalar* __restrict__ B, Scalar* __restrict__ C, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
    if (!accumulate) {
        for (std::size_t i = 0; i < m * n; ++i) C[i] = Scalar(0);
    }
    for (std::size_t kk = 0; kk < k; ++kk) {
        const Scalar* ak = A + kk * m;
        const Scalar* bk = B + kk * n;
        for (std::size_t i = 0; i < m; ++i) {
            const Scalar a = ak[i];
            Scalar* ci = C + i * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += a * bk[j];
        }
    }
}

} // namespace tspformer::num
