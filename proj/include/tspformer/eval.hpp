#pragma once

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "tspformer/dataset.hpp"
#include "tspformer/decode.hpp"
#include "tspformer/error.hpp"
#include "tspformer/model.hpp"
#include "tspformer/oracle.hpp"
#include "tspformer/parallel.hpp"
#include "tspformer/tsp.hpp"

namespace tspformer::eval {

struct EvalRow {
    std::string method;
    std::string decode; // greedy | multi-start | oracle
    double mean_length = 0.0;
    double mean_gap_percent = 0.0;   // mean of per-instance gaps (headline)
    double gap_of_means_percent = 0.0;
    double wall_time_s = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
};

namespace detail {

/// Builds one row from per-instance tour lengths, gaps computed against each
/// record's label. Lengths arrive in record order, so means are
/// order-deterministic no matter how they were produced.
inline EvalRow make_row(const std::string& method, const std::string& decode,
                        const std::vector<DatasetRecord>& records,
                        const std::vector<double>& lengths, double seconds) {
    EvalRow row;
    row.method = method;
    row.decode = decode;
    row.wall_time_s = seconds;
    double len_sum = 0.0, gap_sum = 0.0, opt_sum = 0.0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        len_sum += lengths[i];
        opt_sum += records[i].optimal_length;
        gap_sum += optimality_gap(lengths[i], records[i].optimal_length);
    }
    const double count = static_cast<double>(records.size());
    row.mean_length = len_sum / count;
    row.mean_gap_percent = gap_sum / count;
    row.gap_of_means_percent = optimality_gap(len_sum / count, opt_sum / count);
    return row;
}

template <class SolveFn>
EvalRow timed_row(const std::string& method, const std::string& decode,
                  const std::vector<DatasetRecord>& records, unsigned threads, SolveFn&& solve) {
    std::vector<double> lengths(records.size());
    const auto t0 = std::chrono::steady_clock::now();
    parallel_for(records.size(), threads, [&](std::size_t i) { lengths[i] = solve(records[i]); });
    const auto t1 = std::chrono::steady_clock::now();
    return make_row(method, decode, records, lengths, std::chrono::duration<double>(t1 - t0).count());
}

} // namespace detail

/// Rows: the labels themselves (gap 0 by construction), requested classical
/// baselines, and when a model is given its greedy and multi-start decodes.
/// Baseline names: nn, 2opt (2-opt on the nn tour), held_karp.
inline EvalReport evaluate(const std::vector<DatasetRecord>& records,
                           const std::vector<std::string>& baselines,
                           model::ModelParams<float>* params, unsigned threads = 1) {
    if (records.empty()) throw ValidationError("evaluate: empty test set");
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (!records[i].labeled()) {
            throw ValidationError("evaluate: record " + std::to_string(i) + " unlabeled");
        }
    }

    EvalReport report;
    report.rows.push_back(detail::timed_row(
        "optimal", "oracle", records, threads,
        [](const DatasetRecord& r) { return r.optimal_length; }));

    for (const std::string& b : baselines) {
        if (b == "nn") {
            report.rows.push_back(detail::timed_row(
                "nn", "greedy", records, threads,
                [](const DatasetRecord& r) { return oracle::nearest_neighbor(r.instance, 0).length; }));
        } else if (b == "2opt") {
            report.rows.push_back(detail::timed_row(
                "nn+2opt", "greedy", records, threads, [](const DatasetRecord& r) {
                    return oracle::two_opt(r.instance, oracle::nearest_neighbor(r.instance, 0).tour).length;
                }));
        } else if (b == "held_karp") {
            report.rows.push_back(detail::timed_row(
                "held_karp", "oracle", records, threads,
                [](const DatasetRecord& r) { return oracle::held_karp(r.instance).length; }));
        } else {
            throw ConfigError("evaluate: unknown baseline '" + b + "' (expected nn, 2opt, held_karp)");
        }
    }

    if (params) {
        report.rows.push_back(detail::timed_row(
            "model", "greedy", records, threads, [&](const DatasetRecord& r) {
                return tour_length(r.instance, infer::greedy_decode(*params, r.instance, 0));
            }));
        report.rows.push_back(detail::timed_row(
            "model", "multi-start", records, threads, [&](const DatasetRecord& r) {
                return tour_length(r.instance, infer::multi_start_decode(*params, r.instance).tour);
            }));
    }
    return report;
}

inline std::string report_csv(const EvalReport& report) {
    std::string out = "method,decode,mean_length,mean_gap_percent,wall_time_s\n";
    for (const auto& r : report.rows) {
        out += r.method + ',' + r.decode + ',' + format_double(r.mean_length) + ',' +
               format_double(r.mean_gap_percent) + ',' + format_double(r.wall_time_s) + '\n';
    }
    return out;
}

/// Aligned text table; per-instance mean gap is the headline number, the gap
/// of mean lengths sits beside it.
inline std::string report_table(const EvalReport& report) {
    char line[160];
    std::string out;
    std::snprintf(line, sizeof(line), "%-10s %-12s %12s %10s %14s %10s\n", "method", "decode",
                  "mean_len", "gap%", "gap_of_means%", "time_s");
    out += line;
    for (const auto& r : report.rows) {
        std::snprintf(line, sizeof(line), "%-10s %-12s %12.4f %10.2f %14.2f %10.2f\n",
                      r.method.c_str(), r.decode.c_str(), r.mean_length, r.mean_gap_percent,
                      r.gap_of_means_percent, r.wall_time_s);
        out += line;
    }
    return out;
}

} // namespace tspformer::eval
