#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tspformer/error.hpp"
#include "tspformer/rng.hpp"

namespace tspformer {

/// A city in the unit square.
struct Point {
    double x = 0.0;
    double y = 0.0;
};

inline double dist(const Point& a, const Point& b) {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    return std::sqrt(dx * dx + dy * dy);
}

/// A TSP instance: n points, Euclidean symmetric distances.
struct Instance {
    std::vector<Point> points;

    int n() const { return static_cast<int>(points.size()); }
};

/// A Hamiltonian cycle as a permutation of node indices (0-based).
/// The closing edge order.back() -> order.front() is implicit.
struct Tour {
    std::vector<int> order;

    int n() const { return static_cast<int>(order.size()); }
};

/// n uniform points on [0,1)^2. Deterministic: mt19937_64 seeded with `seed`,
/// coordinates mapped via (draw >> 11) * 2^-53, drawn x then y per point.
inline Instance gen_instance(int n, std::uint64_t seed) {
    if (n < 3) throw ConfigError("gen_instance: n must be >= 3, got " + std::to_string(n));
    Rng rng(seed);
    Instance inst;
    inst.points.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double x = rng.uniform01();
        const double y = rng.uniform01();
        inst.points.push_back(Point{x, y});
    }
    return inst;
}

inline bool is_permutation_of_n(const std::vector<int>& order, int n) {
    if (static_cast<int>(order.size()) != n) return false;
    std::vector<bool> seen(static_cast<std::size_t>(n), false);
    for (int v : order) {
        if (v < 0 || v >= n || seen[static_cast<std::size_t>(v)]) return false;
        seen[static_cast<std::size_t>(v)] = true;
    }
    return true;
}

inline void validate_tour(const Instance& inst, const Tour& tour) {
    if (!is_permutation_of_n(tour.order, inst.n())) {
        throw ValidationError("tour is not a permutation of 0.." + std::to_string(inst.n() - 1));
    }
}

/// Cycle length: consecutive edges plus the closing edge, in 64-bit floats.
inline double tour_length(const Instance& inst, const Tour& tour) {
    validate_tour(inst, tour);
    const auto& o = tour.order;
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < o.size(); ++i) {
        total += dist(inst.points[static_cast<std::size_t>(o[i])],
                      inst.points[static_cast<std::size_t>(o[i + 1])]);
    }
    total += dist(inst.points[static_cast<std::size_t>(o.back())],
                  inst.points[static_cast<std::size_t>(o.front())]);
    return total;
}

/// Percentage excess over the reference length. May be slightly negative when
/// the reference was rounded.
inline double optimality_gap(double length, double optimal_length) {
    if (!(optimal_length > 0.0)) {
        throw ValidationError("optimality_gap: reference length must be > 0");
    }
    return 100.0 * (length - optimal_length) / optimal_length;
}

/// Same cycle re-expressed starting `rotation` steps along; with flip the
/// direction is reversed while keeping the new start node in front.
inline Tour augment_tour(const Tour& tour, int rotation, bool flip) {
    const int n = tour.n();
    if (rotation < 0 || rotation >= n) {
        throw ValidationError("augment_tour: rotation out of range");
    }
    Tour out;
    out.order.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        out.order[static_cast<std::size_t>(i)] =
            tour.order[static_cast<std::size_t>((rotation + i) % n)];
    }
    if (flip) {
        std::reverse(out.order.begin() + 1, out.order.end());
    }
    return out;
}

/// Canonical representative of a cycle: rotated so node 0 is first, direction
/// chosen so order[1] < order[n-1]. All 2n representations of one cycle map
/// to the same list.
inline Tour canonicalize_tour(const Tour& tour) {
    const int n = tour.n();
    if (n < 3) throw ValidationError("canonicalize_tour: tour too short");
    int zero_pos = -1;
    for (int i = 0; i < n; ++i) {
        if (tour.order[static_cast<std::size_t>(i)] == 0) {
            zero_pos = i;
            break;
        }
    }
    if (zero_pos < 0) throw ValidationError("canonicalize_tour: node 0 missing");
    Tour out = augment_tour(tour, zero_pos, false);
    if (out.order[1] > out.order[static_cast<std::size_t>(n - 1)]) {
        std::reverse(out.order.begin() + 1, out.order.end());
    }
    return out;
}

} // namespace tspformer
