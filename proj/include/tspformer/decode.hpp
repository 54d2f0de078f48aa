#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "tspformer/error.hpp"
#include "tspformer/model.hpp"
#include "tspformer/tsp.hpp"

namespace tspformer::infer {

namespace detail {

/// Masked argmax: the best unvisited score, ties to the lowest node index.
inline int next_node(const float* scores, const std::vector<bool>& visited) {
    int best = -1;
    float best_score = -std::numeric_limits<float>::infinity();
    for (std::size_t j = 0; j < visited.size(); ++j) {
        if (visited[j]) continue;
        const float s = scores[j];
        if (std::isnan(s)) throw NumericError("decode: NaN score");
        if (s > best_score) {
            best_score = s;
            best = static_cast<int>(j);
        }
    }
    if (best < 0) throw ValidationError("decode: no unvisited node left to pick");
    return best;
}

/// Batched decode of several prefixes against one cached memory, returning
/// the raw output scores [S, V, N].
template <class Scalar>
num::Tensor<Scalar> decode_scores_batch(model::ModelParams<Scalar>& params,
                                        const model::EncoderMemory<Scalar>& mem,
                                        const std::vector<std::vector<int>>& prefixes) {
    model::Tape<Scalar> tape;
    model::Fwd<Scalar> f{tape, params, false, nullptr};
    model::Node<Scalar>* z = tape.constant(mem.z);
    model::Node<Scalar>* e = tape.constant(mem.e);
    model::Node<Scalar>* dec = model::decode(f, z, e, prefixes, mem.n);
    const std::size_t S = prefixes.size();
    model::Node<Scalar>* logits = model::output_logits(
        f, dec, model::expand_rows(tape, z, S), model::expand_rows(tape, e, S));
    num::Tensor<Scalar> out = logits->value;
    return out;
}

} // namespace detail

/// Autoregressive greedy decoding from `start`: one encoder pass, then n-1
/// argmax picks over the masked next-node scores. The mask makes every
/// output a Hamiltonian cycle whatever the weights are.
inline Tour greedy_decode(model::ModelParams<float>& params, const Instance& inst, int start = 0) {
    const int n = inst.n();
    if (start < 0 || start >= n) throw ConfigError("greedy_decode: invalid start node");
    const model::EncoderMemory<float> mem = model::encode_instance(params, inst);
    Tour tour;
    tour.order.reserve(static_cast<std::size_t>(n));
    tour.order.push_back(start);
    std::vector<bool> visited(static_cast<std::size_t>(n), false);
    visited[static_cast<std::size_t>(start)] = true;
    while (static_cast<int>(tour.order.size()) < n) {
        const num::Tensor<float> scores =
            detail::decode_scores_batch(params, mem, {tour.order});
        const std::size_t last = tour.order.size() - 1;
        const int pick = detail::next_node(scores.data() + last * static_cast<std::size_t>(n), visited);
        tour.order.push_back(pick);
        visited[static_cast<std::size_t>(pick)] = true;
    }
    return tour;
}

struct MultiStartResult {
    Tour tour;
    int best_start = 0;
    std::vector<double> per_start_lengths;
};

/// Decodes from every start node and keeps the shortest tour; ties go to the
/// lowest start index. By default all starts advance together as one decoder
/// batch; `batched=false` runs them one by one and produces identical tours.
inline MultiStartResult multi_start_decode(model::ModelParams<float>& params, const Instance& inst,
                                           bool batched = true) {
    const int n = inst.n();
    std::vector<Tour> tours(static_cast<std::size_t>(n));
    if (!batched) {
        for (int s = 0; s < n; ++s) tours[static_cast<std::size_t>(s)] = greedy_decode(params, inst, s);
    } else {
        const model::EncoderMemory<float> mem = model::encode_instance(params, inst);
        std::vector<std::vector<int>> prefixes(static_cast<std::size_t>(n));
        std::vector<std::vector<bool>> visited(
            static_cast<std::size_t>(n), std::vector<bool>(static_cast<std::size_t>(n), false));
        for (int s = 0; s < n; ++s) {
            prefixes[static_cast<std::size_t>(s)].push_back(s);
            visited[static_cast<std::size_t>(s)][static_cast<std::size_t>(s)] = true;
        }
        for (int step = 1; step < n; ++step) {
            const num::Tensor<float> scores = detail::decode_scores_batch(params, mem, prefixes);
            const std::size_t v = scores.dim(1);
            for (int s = 0; s < n; ++s) {
                const float* row = scores.data() +
                                   (static_cast<std::size_t>(s) * v + (v - 1)) * static_cast<std::size_t>(n);
                const int pick = detail::next_node(row, visited[static_cast<std::size_t>(s)]);
                prefixes[static_cast<std::size_t>(s)].push_back(pick);
                visited[static_cast<std::size_t>(s)][static_cast<std::size_t>(s)] = true;
                visited[static_cast<std::size_t>(s)][static_cast<std::size_t>(pick)] = true;
            }
        }
        for (int s = 0; s < n; ++s) tours[static_cast<std::size_t>(s)].order = prefixes[static_cast<std::size_t>(s)];
    }

    MultiStartResult res;
    res.per_start_lengths.resize(static_cast<std::size_t>(n));
    double best = std::numeric_limits<double>::infinity();
    for (int s = 0; s < n; ++s) {
        const double len = tour_length(inst, tours[static_cast<std::size_t>(s)]);
        res.per_start_lengths[static_cast<std::size_t>(s)] = len;
        if (len < best) {
            best = len;
            res.best_start = s;
        }
    }
    res.tour = tours[static_cast<std::size_t>(res.best_start)];
    return res;
}

} // namespace tspformer::infer
