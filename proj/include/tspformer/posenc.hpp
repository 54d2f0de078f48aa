#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "tspformer/error.hpp"
#include "tspformer/tensor.hpp"
#include "tspformer/tsp.hpp"

namespace tspformer::pe {

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

enum class Kind { sinusoidal, circular, spatial };

inline const char* kind_name(Kind k) {
    switch (k) {
        case Kind::sinusoidal: return "sinusoidal";
        case Kind::circular: return "circular";
        case Kind::spatial: return "spatial";
    }
    return "?";
}

/// Classic transformer encoding: slot 2i is sin(pos / 10000^(2i/d)), slot
/// 2i+1 the matching cos.
template <class Scalar>
std::vector<Scalar> sinusoidal_pe(double pos, int d) {
    if (d <= 0 || d % 2 != 0) throw ConfigError("sinusoidal_pe: dim must be even and positive");
    std::vector<Scalar> out(static_cast<std::size_t>(d));
    for (int i = 0; 2 * i < d; ++i) {
        const double freq = std::pow(10000.0, 2.0 * i / d);
        const double arg = pos / freq;
        out[static_cast<std::size_t>(2 * i)] = static_cast<Scalar>(std::sin(arg));
        out[static_cast<std::size_t>(2 * i + 1)] = static_cast<Scalar>(std::cos(arg));
    }
    return out;
}

/// Ring-aware encoding: the sinusoidal argument gains a 2*pi*pos/n phase so
/// positions that are close on the cycle stay close, including across the
/// wrap-around.
template <class Scalar>
std::vector<Scalar> circular_pe(int pos, int n, int d) {
    if (d <= 0 || d % 2 != 0) throw ConfigError("circular_pe: dim must be even and positive");
    if (n <= 0) throw ConfigError("circular_pe: n must be positive");
    std::vector<Scalar> out(static_cast<std::size_t>(d));
    const double ring = kTwoPi * pos / n;
    for (int i = 0; 2 * i < d; ++i) {
        const double freq = std::pow(10000.0, 2.0 * i / d);
        const double arg = pos / freq + ring;
        out[static_cast<std::size_t>(2 * i)] = static_cast<Scalar>(std::sin(arg));
        out[static_cast<std::size_t>(2 * i + 1)] = static_cast<Scalar>(std::cos(arg));
    }
    return out;
}

/// 2D coordinate encoding: sinusoidal halves for scale*x and scale*y,
/// concatenated. Coordinates sit in the unit square, so without the scale
/// most frequencies would barely move; 2*pi spreads them over a full period.
template <class Scalar>
std::vector<Scalar> spatial_pe(const Point& p, int d, double scale = kTwoPi) {
    if (d <= 0 || d % 4 != 0) throw ConfigError("spatial_pe: dim must be divisible by 4");
    std::vector<Scalar> out;
    out.reserve(static_cast<std::size_t>(d));
    auto xs = sinusoidal_pe<Scalar>(scale * p.x, d / 2);
    auto ys = sinusoidal_pe<Scalar>(scale * p.y, d / 2);
    out.insert(out.end(), xs.begin(), xs.end());
    out.insert(out.end(), ys.begin(), ys.end());
    return out;
}

/// N x d table of one encoding kind; rows are positions (or nodes, for
/// spatial tables built from an instance).
template <class Scalar>
struct PETable {
    num::Tensor<Scalar> values;
    Kind kind = Kind::sinusoidal;
    int n = 0;
    int d = 0;
};

template <class Scalar>
PETable<Scalar> sinusoidal_table(int n, int d) {
    PETable<Scalar> t{num::Tensor<Scalar>({static_cast<std::size_t>(n), static_cast<std::size_t>(d)}),
                      Kind::sinusoidal, n, d};
    for (int pos = 0; pos < n; ++pos) {
        auto row = sinusoidal_pe<Scalar>(pos, d);
        for (int j = 0; j < d; ++j) t.values.at(static_cast<std::size_t>(pos), static_cast<std::size_t>(j)) = row[static_cast<std::size_t>(j)];
    }
    return t;
}

/// `positions` rows encoded on a ring of circumference `ring_n`; ring_n
/// defaults to positions (a full table).
template <class Scalar>
PETable<Scalar> circular_table(int positions, int d, int ring_n = 0) {
    if (ring_n == 0) ring_n = positions;
    PETable<Scalar> t{num::Tensor<Scalar>({static_cast<std::size_t>(positions), static_cast<std::size_t>(d)}),
                      Kind::circular, positions, d};
    for (int pos = 0; pos < positions; ++pos) {
        auto row = circular_pe<Scalar>(pos, ring_n, d);
        for (int j = 0; j < d; ++j) t.values.at(static_cast<std::size_t>(pos), static_cast<std::size_t>(j)) = row[static_cast<std::size_t>(j)];
    }
    return t;
}

template <class Scalar>
PETable<Scalar> spatial_table(const Instance& inst, int d, double scale = kTwoPi) {
    const int n = inst.n();
    PETable<Scalar> t{num::Tensor<Scalar>({static_cast<std::size_t>(n), static_cast<std::size_t>(d)}),
                      Kind::spatial, n, d};
    for (int i = 0; i < n; ++i) {
        auto row = spatial_pe<Scalar>(inst.points[static_cast<std::size_t>(i)], d, scale);
        for (int j = 0; j < d; ++j) t.values.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = row[static_cast<std::size_t>(j)];
    }
    return t;
}

/// Pairwise inner products of table rows. For constant-norm rows (sinusoidal
/// and circular both have squared norm d/2) this orders pairs exactly like
/// cosine similarity.
template <class Scalar>
num::Tensor<Scalar> pe_similarity_matrix(const PETable<Scalar>& t) {
    const std::size_t n = static_cast<std::size_t>(t.n);
    const std::size_t d = static_cast<std::size_t>(t.d);
    num::Tensor<Scalar> sim({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            Scalar dot(0);
            for (std::size_t c = 0; c < d; ++c) dot += t.values.at(i, c) * t.values.at(j, c);
            sim.at(i, j) = dot;
            sim.at(j, i) = dot;
        }
    }
    return sim;
}

/// Row-major CSV with 9 significant digits.
template <class Scalar>
std::string similarity_csv(const num::Tensor<Scalar>& sim) {
    std::string out;
    const std::size_t n = sim.dim(0);
    char buf[48];
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(sim.at(i, j)));
            if (j) out += ',';
            out += buf;
        }
        out += '\n';
    }
    return out;
}

/// Binary 8-bit PGM, min..max linearly mapped to 0..255.
template <class Scalar>
std::string similarity_pgm(const num::Tensor<Scalar>& sim) {
    const std::size_t n = sim.dim(0);
    double lo = static_cast<double>(sim[0]), hi = lo;
    for (std::size_t i = 0; i < sim.numel(); ++i) {
        const double v = static_cast<double>(sim[i]);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi > lo ? hi - lo : 1.0;
    std::string out = "P5\n" + std::to_string(n) + " " + std::to_string(n) + "\n255\n";
    out.reserve(out.size() + sim.numel());
    for (std::size_t i = 0; i < sim.numel(); ++i) {
        const double v = (static_cast<double>(sim[i]) - lo) / span;
        out += static_cast<char>(static_cast<unsigned char>(v * 255.0 + 0.5));
    }
    return out;
}

} // namespace tspformer::pe
