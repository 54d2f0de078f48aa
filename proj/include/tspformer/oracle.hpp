#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "tspformer/dataset.hpp"
#include "tspformer/error.hpp"
#include "tspformer/parallel.hpp"
#include "tspformer/tsp.hpp"

namespace tspformer::oracle {

enum class Method { held_karp, brute_force, nearest_neighbor, two_opt };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::held_karp: return "held_karp";
        case Method::brute_force: return "brute_force";
        case Method::nearest_neighbor: return "nearest_neighbor";
        case Method::two_opt: return "two_opt";
    }
    return "?";
}

struct SolveResult {
    Tour tour;
    double length = 0.0;
    Method method = Method::held_karp;
};

/// Exact solver, O(n^2 * 2^n) subset DP anchored at node 0.
///
/// f[mask][i] = cheapest way to stand at i with `mask` already visited, cover
/// the rest, and close at node 0. The tour is rebuilt by walking forward and
/// taking the smallest next node that still achieves f, which makes exact
/// ties resolve to the lexicographically smallest canonical tour among the
/// optima. The result is canonicalized and its length recomputed edge by
/// edge, so it compares bit-for-bit with other solvers on the same cycle.
inline SolveResult held_karp(const Instance& inst) {
    const int n = inst.n();
    if (n < 3) throw ConfigError("held_karp: n must be >= 3");
    if (n > 16) throw ConfigError("held_karp: n=" + std::to_string(n) + " exceeds the n<=16 cap");

    const std::uint32_t full = (n == 32) ? ~0u : ((1u << n) - 1u);
    std::vector<double> f(static_cast<std::size_t>(full + 1) * static_cast<std::size_t>(n),
                          std::numeric_limits<double>::infinity());
    auto at = [n](std::uint32_t mask, int i) {
        return static_cast<std::size_t>(mask) * static_cast<std::size_t>(n) + static_cast<std::size_t>(i);
    };

    for (std::uint32_t mask = full; mask >= 1; --mask) {
        if ((mask & 1u) == 0) continue;
        for (int i = 0; i < n; ++i) {
            if ((mask >> i & 1u) == 0) continue;
            if (mask == full) {
                f[at(mask, i)] = dist(inst.points[static_cast<std::size_t>(i)], inst.points[0]);
                continue;
            }
            double best = std::numeric_limits<double>::infinity();
            for (int j = 0; j < n; ++j) {
                if (mask >> j & 1u) continue;
                const double cand = dist(inst.points[static_cast<std::size_t>(i)],
                                         inst.points[static_cast<std::size_t>(j)]) +
                                    f[at(mask | (1u << j), j)];
                if (cand < best) best = cand;
            }
            f[at(mask, i)] = best;
        }
    }

    SolveResult res;
    res.method = Method::held_karp;
    res.tour.order.reserve(static_cast<std::size_t>(n));
    res.tour.order.push_back(0);
    std::uint32_t mask = 1u;
    int cur = 0;
    while (mask != full) {
        const double remaining = f[at(mask, cur)];
        for (int j = 0; j < n; ++j) {
            if (mask >> j & 1u) continue;
            const double cand = dist(inst.points[static_cast<std::size_t>(cur)],
                                     inst.points[static_cast<std::size_t>(j)]) +
                                f[at(mask | (1u << j), j)];
            if (cand == remaining) {
                res.tour.order.push_back(j);
                mask |= 1u << j;
                cur = j;
                break;
            }
        }
    }
    res.tour = canonicalize_tour(res.tour);
    res.length = tour_length(inst, res.tour);
    return res;
}

/// Visits every distinct cycle once: node 0 fixed first, and the second node
/// kept smaller than the last to drop mirrored duplicates. (n-1)!/2 calls.
template <class Fn>
void for_each_cycle(int n, Fn&& fn) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    do {
        if (order[1] > order[static_cast<std::size_t>(n - 1)]) continue;
        fn(static_cast<const std::vector<int>&>(order));
    } while (std::next_permutation(order.begin() + 1, order.end()));
}

inline SolveResult brute_force(const Instance& inst) {
    const int n = inst.n();
    if (n < 3) throw ConfigError("brute_force: n must be >= 3");
    if (n > 10) throw ConfigError("brute_force: n=" + std::to_string(n) + " exceeds the n<=10 cap");
    SolveResult res;
    res.method = Method::brute_force;
    res.length = std::numeric_limits<double>::infinity();
    Tour cand;
    for_each_cycle(n, [&](const std::vector<int>& order) {
        cand.order = order;
        const double len = tour_length(inst, cand);
        if (len < res.length) {
            res.length = len;
            res.tour = cand;
        }
    });
    return res;
}

/// Greedy construction from `start`; distance ties go to the lowest index.
inline SolveResult nearest_neighbor(const Instance& inst, int start) {
    const int n = inst.n();
    if (start < 0 || start >= n) throw ConfigError("nearest_neighbor: invalid start index");
    SolveResult res;
    res.method = Method::nearest_neighbor;
    res.tour.order.reserve(static_cast<std::size_t>(n));
    std::vector<bool> visited(static_cast<std::size_t>(n), false);
    int cur = start;
    visited[static_cast<std::size_t>(cur)] = true;
    res.tour.order.push_back(cur);
    for (int step = 1; step < n; ++step) {
        int best = -1;
        double best_d = std::numeric_limits<double>::infinity();
        for (int j = 0; j < n; ++j) {
            if (visited[static_cast<std::size_t>(j)]) continue;
            const double d = dist(inst.points[static_cast<std::size_t>(cur)],
                                  inst.points[static_cast<std::size_t>(j)]);
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        visited[static_cast<std::size_t>(best)] = true;
        res.tour.order.push_back(best);
        cur = best;
    }
    res.length = tour_length(inst, res.tour);
    return res;
}

/// First-improvement 2-opt: scans edge pairs in lexicographic order, applies
/// each improving exchange immediately, and stops once a full pass finds no
/// improvement beyond 1e-12.
inline SolveResult two_opt(const Instance& inst, const Tour& start) {
    validate_tour(inst, start);
    const int n = inst.n();
    constexpr double kEps = 1e-12;
    SolveResult res;
    res.method = Method::two_opt;
    res.tour = start;
    auto& o = res.tour.order;
    auto pt = [&](int pos) -> const Point& {
        return inst.points[static_cast<std::size_t>(o[static_cast<std::size_t>(pos)])];
    };
    bool improved = true;
    while (improved) {
        improved = false;
        for (int i = 0; i < n - 1; ++i) {
            for (int j = i + 2; j < n; ++j) {
                if (i == 0 && j == n - 1) continue; // shares node 0, a no-op reversal
                const int jn = (j + 1) % n;
                const double delta = dist(pt(i), pt(j)) + dist(pt(i + 1), pt(jn)) -
                                     dist(pt(i), pt(i + 1)) - dist(pt(j), pt(jn));
                if (delta < -kEps) {
                    std::reverse(o.begin() + i + 1, o.begin() + j + 1);
                    improved = true;
                }
            }
        }
    }
    res.length = tour_length(inst, res.tour);
    return res;
}

inline SolveResult solve(const Instance& inst, Method m, int start = 0) {
    switch (m) {
        case Method::held_karp: return held_karp(inst);
        case Method::brute_force: return brute_force(inst);
        case Method::nearest_neighbor: return nearest_neighbor(inst, start);
        case Method::two_opt: return two_opt(inst, nearest_neighbor(inst, start).tour);
    }
    throw ConfigError("unknown solve method");
}

/// Labels every instance with `m` (two_opt means 2-opt on a nearest-neighbor
/// tour), canonicalizing the tours. Instances are independent, so the work is
/// spread over `threads` workers; output order is by index either way.
inline std::vector<DatasetRecord> label_dataset(const std::vector<Instance>& instances, Method m,
                                                unsigned threads = 1) {
    std::vector<DatasetRecord> out(instances.size());
    parallel_for(instances.size(), threads, [&](std::size_t i) {
        try {
            SolveResult res = solve(instances[i], m);
            DatasetRecord rec;
            rec.instance = instances[i];
            rec.optimal_tour = canonicalize_tour(res.tour);
            rec.optimal_length = tour_length(rec.instance, *rec.optimal_tour);
            out[i] = std::move(rec);
        } catch (const std::exception& e) {
            throw ValidationError("instance " + std::to_string(i) + ": " + e.what());
        }
    });
    return out;
}

} // namespace tspformer::oracle
