#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <string>

#include "tspformer/dataset.hpp"
#include "tspformer/rng.hpp"

using namespace tspformer;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("record line format matches the convention") {
    DatasetRecord rec;
    rec.instance.points = {{0.25, 0.5}, {0.75, 0.5}, {0.5, 0.9}};
    rec.optimal_tour = Tour{{0, 1, 2}};
    rec.optimal_length = tour_length(rec.instance, *rec.optimal_tour);
    CHECK(format_record(rec) == "0.25 0.5 0.75 0.5 0.5 0.9 output 1 2 3 1");
}

TEST_CASE("dataset round trip is exact") {
    Rng rng(3);
    Dataset ds;
    ds.metadata.emplace_back("method", "held_karp");
    for (int i = 0; i < 50; ++i) {
        DatasetRecord rec;
        const int n = 3 + static_cast<int>(rng.below(8));
        rec.instance = gen_instance(n, 1000 + i);
        std::vector<int> order(n);
        for (int j = 0; j < n; ++j) order[j] = j;
        rng.shuffle(order);
        rec.optimal_tour = Tour{order};
        rec.optimal_length = tour_length(rec.instance, *rec.optimal_tour);
        ds.records.push_back(rec);
    }
    const std::string path = temp_path("tspformer_roundtrip.txt");
    write_dataset(path, ds);
    const Dataset back = read_dataset(path);
    REQUIRE(back.records.size() == ds.records.size());
    REQUIRE(back.metadata.size() == 1);
    CHECK(back.metadata[0].first == "method");
    CHECK(back.metadata[0].second == "held_karp");
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        const auto& a = ds.records[i];
        const auto& b = back.records[i];
        REQUIRE(a.instance.n() == b.instance.n());
        for (int j = 0; j < a.instance.n(); ++j) {
            CHECK(a.instance.points[j].x == b.instance.points[j].x);
            CHECK(a.instance.points[j].y == b.instance.points[j].y);
        }
        CHECK(a.optimal_tour->order == b.optimal_tour->order);
        CHECK(b.optimal_length == doctest::Approx(a.optimal_length).epsilon(1e-12));
    }
    std::remove(path.c_str());
}

TEST_CASE("writing the same dataset twice gives identical bytes") {
    Dataset ds;
    for (int i = 0; i < 5; ++i) {
        DatasetRecord rec;
        rec.instance = gen_instance(6, 42 + i);
        ds.records.push_back(rec);
    }
    const std::string p1 = temp_path("tspformer_det1.txt");
    const std::string p2 = temp_path("tspformer_det2.txt");
    write_dataset(p1, ds);
    write_dataset(p2, ds);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    const std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    CHECK(!s1.empty());
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("parse errors carry line info and validation runs") {
    CHECK_THROWS_AS(parse_record("0.1 0.2 0.3", 4), ParseError);
    CHECK_THROWS_AS(parse_record("a b c d e f", 1), ParseError);
    // duplicate node in the tour
    CHECK_THROWS_AS(parse_record("0.1 0.1 0.2 0.2 0.3 0.3 output 1 2 2 1", 2), ValidationError);
    // does not close on the start
    CHECK_THROWS_AS(parse_record("0.1 0.1 0.2 0.2 0.3 0.3 output 1 2 3 2", 2), ValidationError);
    // out-of-range index
    CHECK_THROWS_AS(parse_record("0.1 0.1 0.2 0.2 0.3 0.3 output 1 2 4 1", 2), ValidationError);

    // unlabeled line parses fine
    const DatasetRecord rec = parse_record("0.1 0.1 0.2 0.2 0.3 0.3", 1);
    CHECK(rec.instance.n() == 3);
    CHECK(!rec.labeled());
}

TEST_CASE("imported coordinates outside the unit square: clamp vs strict") {
    const std::string line = "1.5 0.5 -0.25 0.5 0.5 0.9";
    const DatasetRecord clamped = parse_record(line, 1, CoordPolicy::clamp);
    CHECK(clamped.instance.points[0].x == 1.0);
    CHECK(clamped.instance.points[1].x == 0.0);
    CHECK(clamped.instance.points[2].y == 0.9);
    CHECK_THROWS_AS(parse_record(line, 1, CoordPolicy::strict), ValidationError);
}

TEST_CASE("require_uniform_labeled") {
    Dataset ds;
    ds.records.push_back(parse_record("0.1 0.1 0.2 0.2 0.3 0.3 output 1 2 3 1", 1));
    CHECK(require_uniform_labeled(ds) == 3);
    ds.records.push_back(parse_record("0.1 0.1 0.2 0.2 0.3 0.3 0.4 0.4", 2));
    CHECK_THROWS_AS(require_uniform_labeled(ds), ValidationError);
}
