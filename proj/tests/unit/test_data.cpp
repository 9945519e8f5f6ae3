#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "pafm/data.hpp"
#include "pafm/errors.hpp"

using namespace pafm;

namespace {

// Brute-force neighbour oracle, independent of the library's search.
std::vector<std::uint32_t> knn_oracle(const Dataset& ds, std::size_t i, std::size_t k, bool by_class) {
    std::vector<std::pair<double, std::uint32_t>> all;
    for (std::size_t j = 0; j < ds.size(); ++j) {
        if (j == i || (by_class && ds.label(j) != ds.label(i))) continue;
        all.emplace_back((ds.point(j) - ds.point(i)).squaredNorm(), static_cast<std::uint32_t>(j));
    }
    std::sort(all.begin(), all.end());
    std::vector<std::uint32_t> row{static_cast<std::uint32_t>(i)};
    for (std::size_t m = 0; m + 1 < k; ++m) row.push_back(all[m].second);
    return row;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("noise-free moons lie on their circles") {
    SeededRng rng(1);
    const Dataset ds = gen_two_moons(500, 0.0, rng);
    CHECK(ds.size() == 1000);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const double x = ds.point(i)[0], y = ds.point(i)[1];
        if (ds.label(i) == 0) {
            CHECK(std::abs(x * x + y * y - 1.0) < 1e-12);
            CHECK(y >= 0.0);
        } else {
            CHECK(std::abs((x - 1.0) * (x - 1.0) + (y - 0.5) * (y - 0.5) - 1.0) < 1e-12);
            CHECK(y <= 0.5);
        }
    }
    CHECK(ds.label_set() == std::vector<Label>{0, 1});
}

TEST_CASE("generation is reproducible and seed dependent") {
    SyntheticSpec spec;
    spec.n_per_class = 50;
    spec.seed = 3;
    const Dataset a = generate(spec), b = generate(spec);
    CHECK(a.points == b.points);
    spec.seed = 4;
    CHECK(generate(spec).points != a.points);
    spec.noise_std = -1.0;
    CHECK_THROWS_AS(generate(spec), ConfigError);
    CHECK_THROWS_AS(parse_family("spirals"), ConfigError);
    CHECK(parse_family("gaussian_mixture") == Family::GaussianMixture);
}

TEST_CASE("gaussian mixture means and labels") {
    SeededRng rng(2);
    const std::vector<Point> centers{Point{{-3.0, 0.0}}, Point{{2.0, 4.0}}};
    const Dataset ds = gen_gaussian_mixture(centers, {0.5, 0.5}, 20000, rng);
    for (Label y : {0, 1}) {
        const auto idx = ds.indices_with_label(y);
        CHECK(idx.size() == 20000);
        Point mean = Point::Zero(2);
        for (std::size_t i : idx) mean += ds.point(i);
        mean /= static_cast<double>(idx.size());
        // Standard error 0.5 / sqrt(20000) ~ 0.0035.
        CHECK((mean - centers[static_cast<std::size_t>(y)]).cwiseAbs().maxCoeff() < 0.02);
    }
    const Dataset exact = gen_gaussian_mixture(centers, {0.0, 0.0}, 3, rng);
    CHECK(Point(exact.point(4)) == centers[1]);
    CHECK_THROWS_AS(gen_gaussian_mixture(centers, {0.5}, 3, rng), InvalidArgument);
}

TEST_CASE("subsample is balanced, ordered and a subset") {
    SeededRng g(5);
    const Dataset ds = gen_two_moons(60, 0.05, g);
    SeededRng rng(6);
    const Dataset sub = subsample(ds, 25, rng);
    CHECK(sub.size() == 25);
    const auto c0 = sub.indices_with_label(0).size(), c1 = sub.indices_with_label(1).size();
    CHECK(std::max(c0, c1) - std::min(c0, c1) <= 1);
    std::size_t last = 0;
    for (std::size_t k = 0; k < sub.size(); ++k) {
        std::size_t found = ds.size();
        for (std::size_t i = 0; i < ds.size(); ++i)
            if (ds.point(i) == sub.point(k) && ds.label(i) == sub.label(k)) found = i;
        REQUIRE(found < ds.size());
        if (k > 0) CHECK(found > last);
        last = found;
    }
    SeededRng again(6);
    CHECK(subsample(ds, 25, again).points == sub.points);
    CHECK(subsample(ds, ds.size(), again).points == ds.points);
    CHECK_THROWS_AS(subsample(ds, ds.size() + 1, again), InvalidArgument);
}

TEST_CASE("precompute_knn matches a brute-force oracle") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Dataset ds = testing::random_dataset(seed, 40, 2, 2);
        for (bool by_class : {true, false}) {
            const KnnTable table = precompute_knn(ds, 6, by_class);
            REQUIRE(table.size() == ds.size());
            for (std::size_t i = 0; i < ds.size(); ++i) CHECK(table.rows[i] == knn_oracle(ds, i, 6, by_class));
        }
    }
    const Dataset small = testing::random_dataset(1, 6, 2, 2);
    CHECK_THROWS_AS(precompute_knn(small, 4, true), InvalidArgument);
    CHECK_NOTHROW(precompute_knn(small, 4, false));
}

TEST_CASE("dataset file round-trip") {
    const Dataset ds = testing::random_dataset(7, 30, 3, 3);
    std::stringstream buf;
    write_dataset(buf, ds);
    const std::string text = buf.str();
    CHECK(text.rfind("3,30,0;1;2\n", 0) == 0);
    const Dataset back = read_dataset(buf);
    CHECK(back.points == ds.points);
    CHECK(back.labels == ds.labels);

    const auto dir = testing::scratch_dir("data-io");
    write_dataset(dir / "d.csv", ds);
    CHECK(read_dataset(dir / "d.csv").points == ds.points);
    CHECK_THROWS_AS(read_dataset(dir / "missing.csv"), IoError);
}

TEST_CASE("dataset parse errors report line numbers") {
    std::istringstream empty("");
    CHECK_THROWS_AS(read_dataset(empty), ParseError);
    auto line_of = [](const std::string& text) {
        std::istringstream in(text);
        try {
            read_dataset(in);
        } catch (const ParseError& e) {
            return e.line();
        }
        return std::size_t{0};
    };
    CHECK(line_of("2,2,0\n0.1,0.2,0\n0.3,abc,0\n") == 3);
    CHECK(line_of("2,2,0\n0.1,0.2,0\n0.3,0.4,1\n") == 3);
    CHECK(line_of("2,3,0\n0.1,0.2,0\n") == 2);
    CHECK(line_of("2,1,0\n0.1,0.2\n") == 2);
    CHECK(line_of("two,1,0\n") == 1);
}

TEST_CASE("candidates file round-trip and parsing") {
    const Dataset ds = testing::random_dataset(8, 12, 2, 2);
    const KnnTable table = precompute_knn(ds, 4);
    std::stringstream buf;
    write_candidates(buf, table);
    CHECK(read_candidates(buf).rows == table.rows);

    std::istringstream row("0: 0,5,2\n1: 1,7,3\n");
    const KnnTable parsed = read_candidates(row);
    CHECK(parsed.rows[0] == std::vector<std::uint32_t>{0, 5, 2});
    std::istringstream missing_owner("0: 4,5\n");
    CHECK_THROWS_AS(read_candidates(missing_owner), ParseError);
    std::istringstream out_of_order("1: 1,2\n");
    CHECK_THROWS_AS(read_candidates(out_of_order), ParseError);
    std::istringstream nothing("");
    CHECK_THROWS_AS(read_candidates(nothing), ParseError);
}

TEST_CASE("samples file round-trip") {
    const Dataset ds = testing::random_dataset(9, 17);
    std::stringstream buf;
    write_samples(buf, ds.points);
    CHECK(read_samples(buf) == ds.points);
    std::istringstream ragged("1,2\n3\n");
    CHECK_THROWS_AS(read_samples(ragged), ParseError);
}

TEST_CASE("format_double round-trips exactly") {
    SeededRng rng(10);
    for (int k = 0; k < 10000; ++k) {
        const double x = std::ldexp(rng.normal(), static_cast<int>(rng.uniform_index(200)) - 100);
        CHECK(std::stod(format_double(x)) == x);
    }
    CHECK(format_double(0.5) == "0.5");
}

}
