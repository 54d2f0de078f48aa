#pragma once

#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace tspformer {

/// Runs fn(i) for i in [0, count) across up to `threads` workers.
///
/// Work is split into contiguous index ranges and every fn(i) must write only
/// to i-indexed state, so results are bitwise identical for any thread count
/// (including 1). Reductions over the results belong to the caller, who can
/// then sum in index order.
template <class Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
    if (count == 0) return;
    unsigned n = threads == 0 ? std::thread::hardware_concurrency() : threads;
    if (n < 1) n = 1;
    if (n > count) n = static_cast<unsigned>(count);
    if (n == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(n);
    const std::size_t chunk = (count + n - 1) / n;
    for (unsigned t = 0; t < n; ++t) {
        const std::size_t lo = t * chunk;
        const std::size_t hi = lo + chunk < count ? lo + chunk : count;
        pool.emplace_back([&, t, lo, hi] {
            try {
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

} // namespace tspformer
