#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "tspformer/error.hpp"
#include "tspformer/tsp.hpp"

namespace tspformer {

/// One training/eval record: an instance plus (when labeled) its reference
/// tour and that tour's 64-bit length.
struct DatasetRecord {
    Instance instance;
    std::optional<Tour> optimal_tour;
    double optimal_length = 0.0;

    bool labeled() const { return optimal_tour.has_value(); }
};

struct Dataset {
    std::vector<DatasetRecord> records;
    /// key=value pairs taken from leading `#` metadata lines.
    std::vector<std::pair<std::string, std::string>> metadata;
};

/// Shortest decimal string that round-trips the exact double.
inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace detail {

inline double parse_double_token(const std::string& tok, int line_no) {
    double v = 0.0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
        throw ParseError("line " + std::to_string(line_no) + ": bad number '" + tok + "'");
    }
    return v;
}

inline long parse_int_token(const std::string& tok, int line_no) {
    long v = 0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
        throw ParseError("line " + std::to_string(line_no) + ": bad index '" + tok + "'");
    }
    return v;
}

} // namespace detail

/// Generated data always sits in the unit square; imported files may not.
/// `clamp` pulls stray coordinates back into [0,1], `strict` rejects them.
enum class CoordPolicy { clamp, strict };

/// One record per line: `x1 y1 ... xN yN [output i1 ... iN i1]` with 1-based
/// tour indices and the start node repeated at the end. Lines starting with
/// `#` carry `key=value` metadata.
inline std::string format_record(const DatasetRecord& rec) {
    std::string line;
    for (const auto& p : rec.instance.points) {
        line += format_double(p.x);
        line += ' ';
        line += format_double(p.y);
        line += ' ';
    }
    if (rec.labeled()) {
        line += "output";
        for (int v : rec.optimal_tour->order) {
            line += ' ';
            line += std::to_string(v + 1);
        }
        line += ' ';
        line += std::to_string(rec.optimal_tour->order.front() + 1);
    } else if (!line.empty()) {
        line.pop_back();
    }
    return line;
}

inline DatasetRecord parse_record(const std::string& line, int line_no,
                                  CoordPolicy policy = CoordPolicy::clamp) {
    std::istringstream in(line);
    std::vector<std::string> tokens;
    std::string tok;
    while (in >> tok) tokens.push_back(tok);
    if (tokens.empty()) throw ParseError("line " + std::to_string(line_no) + ": empty record");

    std::size_t split = tokens.size();
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] == "output") {
            split = i;
            break;
        }
    }
    if (split < 6 || split % 2 != 0) {
        throw ParseError("line " + std::to_string(line_no) +
                         ": expected an even number (>= 6) of coordinates before 'output'");
    }
    auto fix = [&](double v) {
        if (v >= 0.0 && v <= 1.0) return v;
        if (policy == CoordPolicy::strict) {
            throw ValidationError("line " + std::to_string(line_no) + ": coordinate " +
                                  format_double(v) + " outside the unit square");
        }
        return v < 0.0 ? 0.0 : 1.0;
    };
    DatasetRecord rec;
    const int n = static_cast<int>(split / 2);
    rec.instance.points.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double x = fix(detail::parse_double_token(tokens[static_cast<std::size_t>(2 * i)], line_no));
        const double y = fix(detail::parse_double_token(tokens[static_cast<std::size_t>(2 * i + 1)], line_no));
        rec.instance.points.push_back(Point{x, y});
    }

    if (split == tokens.size()) return rec; // unlabeled

    const std::size_t ntour = tokens.size() - split - 1;
    if (ntour != static_cast<std::size_t>(n) + 1) {
        throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(n + 1) +
                         " tour indices, got " + std::to_string(ntour));
    }
    Tour tour;
    tour.order.reserve(static_cast<std::size_t>(n));
    for (std::size_t i = split + 1; i < tokens.size(); ++i) {
        const long idx = detail::parse_int_token(tokens[i], line_no);
        if (idx < 1 || idx > n) {
            throw ValidationError("line " + std::to_string(line_no) + ": tour index " +
                                  std::to_string(idx) + " out of 1.." + std::to_string(n));
        }
        if (i + 1 < tokens.size()) {
            tour.order.push_back(static_cast<int>(idx - 1));
        } else if (static_cast<int>(idx - 1) != tour.order.front()) {
            throw ValidationError("line " + std::to_string(line_no) +
                                  ": tour does not close on its start node");
        }
    }
    if (!is_permutation_of_n(tour.order, n)) {
        throw ValidationError("line " + std::to_string(line_no) + ": tour is not a permutation");
    }
    rec.optimal_length = tour_length(rec.instance, tour);
    rec.optimal_tour = std::move(tour);
    return rec;
}

/// Writes atomically: temp file in the same directory, then rename.
inline void write_text_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp + "' for writing");
        out << content;
        if (!out) throw IoError("write to '" + tmp + "' failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename '" + tmp + "' -> '" + path + "': " + ec.message());
}

inline void write_dataset(const std::string& path, const Dataset& ds) {
    std::string content;
    for (const auto& [k, v] : ds.metadata) {
        content += "# " + k + "=" + v + "\n";
    }
    for (const auto& rec : ds.records) {
        content += format_record(rec);
        content += '\n';
    }
    write_text_atomic(path, content);
}

inline Dataset read_dataset(const std::string& path, CoordPolicy policy = CoordPolicy::clamp) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    Dataset ds;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line.front() == '#') {
            std::string body = line.substr(1);
            const std::size_t start = body.find_first_not_of(' ');
            if (start == std::string::npos) continue;
            body = body.substr(start);
            const std::size_t eq = body.find('=');
            if (eq != std::string::npos) {
                ds.metadata.emplace_back(body.substr(0, eq), body.substr(eq + 1));
            }
            continue;
        }
        ds.records.push_back(parse_record(line, line_no, policy));
    }
    return ds;
}

/// All records labeled and of the same size; returns that size.
inline int require_uniform_labeled(const Dataset& ds) {
    if (ds.records.empty()) throw ValidationError("dataset is empty");
    const int n = ds.records.front().instance.n();
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        const auto& rec = ds.records[i];
        if (!rec.labeled()) {
            throw ValidationError("record " + std::to_string(i) + " is unlabeled");
        }
        if (rec.instance.n() != n) {
            throw ValidationError("record " + std::to_string(i) + " has n=" +
                                  std::to_string(rec.instance.n()) + ", expected " + std::to_string(n));
        }
    }
    return n;
}

} // namespace tspformer
