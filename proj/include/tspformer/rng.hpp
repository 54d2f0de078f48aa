#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace tspformer {

/// Deterministic random source used everywhere randomness is needed.
///
/// Wraps std::mt19937_64, whose output sequence is fully specified by the
/// C++ standard, and maps raw draws to doubles/ints explicitly instead of
/// going through the distribution classes (those are implementation-defined
/// and would break bit-reproducibility across standard libraries).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1): top 53 bits of a 64-bit draw.
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [0, bound) by rejection; bound must be > 0.
    std::uint64_t below(std::uint64_t bound) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return x % bound;
    }

    bool coin() { return (engine_() & 1u) != 0; }

    /// Uniform on [-a, a).
    double uniform_sym(double a) { return (2.0 * uniform01() - 1.0) * a; }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
};

} // namespace tspformer
