#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "doctest.h"
#include "helpers.hpp"
#include "pafm/data.hpp"
#include "pafm/errors.hpp"
#include "pafm/eval.hpp"
#include "pafm/posterior.hpp"

using namespace pafm;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

PosteriorSettings standard_settings(Eigen::Index d = 2) { return PosteriorSettings{SourceDistribution::standard(d)}; }

Dataset from_points(std::initializer_list<std::pair<double, double>> pts, Label label = 0) {
    Dataset ds;
    ds.points.resize(2, static_cast<Eigen::Index>(pts.size()));
    Eigen::Index c = 0;
    for (const auto& [x, y] : pts) {
        ds.points(0, c) = x;
        ds.points(1, c) = y;
        ++c;
        ds.labels.push_back(label);
    }
    return ds;
}

}  // namespace

TEST_SUITE("posterior") {

TEST_CASE("condition_log_likelihood") {
    CHECK(condition_log_likelihood(3, 3) == 0.0);
    CHECK(condition_log_likelihood(0, 1) == kNegInf);
    CHECK(condition_log_likelihood(kUnconditional, 1) == 0.0);
    CHECK(condition_log_likelihood(2, kUnconditional) == 0.0);
}

TEST_CASE("single-entry pool reproduces the flow matching target bitwise") {
    const Dataset ds = testing::random_dataset(1, 10);
    SeededRng rng(4);
    for (int k = 0; k < 200; ++k) {
        const std::size_t i = rng.uniform_index(ds.size());
        const Point eps = gaussian_sample(rng, 2, Point::Zero(2), 1.0);
        const double t = rng.uniform();
        const PathPoint p = make_path_point(ds.point(i), eps, t, i);
        CandidatePool pool;
        pool.owner = i;
        pool.indices = {static_cast<std::uint32_t>(i)};
        const WeightedTarget w = snis_weights(p, kUnconditional, pool, ds, standard_settings());
        REQUIRE(w.weights.size() == 1);
        CHECK(w.weights[0] == 1.0);
        CHECK(w.ess == 1.0);
        const Point fm = eps - ds.point(i);
        CHECK(w.collapsed_velocity == fm);
    }
}

TEST_CASE("equal log-alphas give equal weights and the convex combination") {
    // At t = 0.5 and z_t = (a, a) the candidates z_t - 0.5 e_1 and z_t - 0.5 e_2
    // are equally likely, with velocities (1, 0) and (0, 1).
    const double a = 0.7, t = 0.5;
    const Dataset ds = from_points({{a - 0.5, a}, {a, a - 0.5}});
    const Point z_t{{a, a}};
    const Point eps = (z_t - (1.0 - t) * Point(ds.point(0))) / t;
    const PathPoint p = make_path_point(ds.point(0), eps, t, 0);
    CandidatePool pool = provider_full_support(ds, 0, kUnconditional);
    const WeightedTarget w = snis_weights(p, kUnconditional, pool, ds, standard_settings());
    CHECK(w.weights[0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(w.weights[1] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(w.ess == doctest::Approx(2.0).epsilon(1e-14));
    CHECK((w.collapsed_velocity - Point{{0.5, 0.5}}).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("weights are normalized and the collapsed target is their combination") {
    const Dataset ds = testing::random_dataset(2, 30, 2, 3);
    SeededRng rng(6);
    for (int k = 0; k < 300; ++k) {
        const std::size_t i = rng.uniform_index(ds.size());
        const bool conditioned = k % 2 == 0;
        const Label y = conditioned ? ds.label(i) : kUnconditional;
        const CandidatePool pool = provider_full_support(ds, i, y);
        const PathPoint p = make_path_point(ds.point(i), gaussian_sample(rng, 2, Point::Zero(2), 1.0),
                                            0.01 + 0.98 * rng.uniform(), i);
        const WeightedTarget w = snis_weights(p, y, pool, ds, standard_settings());
        double sum = 0.0;
        Point combo = Point::Zero(2);
        for (std::size_t s = 0; s < pool.size(); ++s) {
            CHECK((w.weights[s] >= 0.0 && w.weights[s] <= 1.0));
            sum += w.weights[s];
            combo += w.weights[s] * candidate_velocity(p, pool, s, ds);
            if (conditioned) CHECK(ds.label(pool.indices[s]) == y);
        }
        CHECK(std::abs(sum - 1.0) <= 1e-12);
        CHECK((w.collapsed_velocity - combo).cwiseAbs().maxCoeff() <= 1e-10);
        CHECK(w.ess >= 1.0 - 1e-12);
        CHECK(w.ess <= static_cast<double>(pool.size()) + 1e-9);
    }
}

TEST_CASE("condition indicator removes other classes from a mixed pool") {
    const Dataset ds = testing::random_dataset(3, 12, 2, 2);
    const CandidatePool pool = provider_full_support(ds, 0, kUnconditional);
    const PathPoint p = make_path_point(ds.point(0), Point{{0.1, -0.2}}, 0.6, 0);
    const WeightedTarget w = snis_weights(p, ds.label(0), pool, ds, standard_settings());
    for (std::size_t s = 0; s < pool.size(); ++s)
        if (ds.label(pool.indices[s]) != ds.label(0)) {
            CHECK(w.weights[s] == 0.0);
            CHECK(w.log_alphas[s] == kNegInf);
        }
}

TEST_CASE("below t_eps all weight goes to the owner") {
    const Dataset ds = testing::random_dataset(4, 8);
    const CandidatePool pool = provider_full_support(ds, 3, kUnconditional);
    const Point eps{{0.3, 0.4}};
    const PathPoint p = make_path_point(ds.point(3), eps, 0.5e-4, 3);
    const WeightedTarget w = snis_weights(p, kUnconditional, pool, ds, standard_settings());
    CHECK(w.weights[pool.owner_slot()] == 1.0);
    CHECK(w.ess == 1.0);
    CHECK(w.collapsed_velocity == Point(eps - ds.point(3)));
}

TEST_CASE("snis_weights rejects malformed inputs") {
    const Dataset ds = testing::random_dataset(4, 8);
    CandidatePool pool = provider_full_support(ds, 3, kUnconditional);
    const PathPoint p = make_path_point(ds.point(3), Point{{0.3, 0.4}}, 0.5, 3);
    CandidatePool empty;
    CHECK_THROWS_AS(snis_weights(p, kUnconditional, empty, ds, standard_settings()), InvalidArgument);
    CandidatePool no_owner = pool;
    no_owner.indices.erase(no_owner.indices.begin() + 3);
    CHECK_THROWS_AS(snis_weights(p, kUnconditional, no_owner, ds, standard_settings()), InvalidArgument);
    CHECK_THROWS_AS(snis_weights(p, kUnconditional, pool, ds, standard_settings(3)), InvalidArgument);
}

TEST_CASE("kish_ess examples") {
    const std::vector<double> one{1.0}, half{0.5, 0.5}, three{0.7, 0.2, 0.1};
    CHECK(kish_ess(one) == 1.0);
    CHECK(kish_ess(half) == 2.0);
    CHECK(kish_ess(three) == doctest::Approx(1.0 / 0.54).epsilon(1e-14));
    const std::vector<double> bad{0.5, 0.6};
    CHECK_THROWS_AS(kish_ess(bad), InvalidArgument);
    const std::vector<double> negative{1.5, -0.5};
    CHECK_THROWS_AS(kish_ess(negative), InvalidArgument);
}

TEST_CASE("normalize_log_weights is invariant to a common shift") {
    SeededRng rng(12);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t k = 1 + rng.uniform_index(64);
        std::vector<double> la(k), shifted(k), w1(k), w2(k);
        const double log_c = 50.0 * (rng.uniform() - 0.5);
        for (std::size_t j = 0; j < k; ++j) {
            la[j] = 10.0 * rng.normal();
            shifted[j] = la[j] + log_c;
        }
        const double e1 = normalize_log_weights(la, w1);
        const double e2 = normalize_log_weights(shifted, w2);
        CHECK(std::abs(e1 - e2) <= 1e-12 * e1);
        for (std::size_t j = 0; j < k; ++j) CHECK(std::abs(w1[j] - w2[j]) <= 1e-12);
        CHECK(e1 == doctest::Approx(kish_ess(w1)).epsilon(1e-12));
    }
    std::vector<double> all_neg_inf{kNegInf, kNegInf}, out(2);
    CHECK_THROWS_AS(normalize_log_weights(all_neg_inf, out), InternalInvariant);
}

TEST_CASE("provider_full_support examples") {
    const Dataset five = testing::random_dataset(5, 5);
    const CandidatePool pool = provider_full_support(five, 2, kUnconditional);
    CHECK(pool.size() == 5);
    CHECK(pool.owner_slot() < pool.size());

    const Dataset two_class = testing::random_dataset(6, 10, 2, 2);
    const CandidatePool class0 = provider_full_support(two_class, 4, 0);
    for (std::uint32_t j : class0.indices) CHECK(two_class.label(j) == 0);
    CHECK(class0.size() == two_class.indices_with_label(0).size());

    const Dataset single = testing::random_dataset(7, 1);
    const CandidatePool lone = provider_full_support(single, 0, kUnconditional);
    CHECK(lone.size() == 1);
    CHECK_THROWS_AS(provider_full_support(two_class, 4, 1), InvalidArgument);
}

TEST_CASE("provider_knn examples") {
    const Dataset ds = from_points({{0.0, 0.0}, {1.0, 0.0}, {3.0, 0.0}});
    const KnnTable table = precompute_knn(ds, 3);
    const CandidatePool pool = provider_knn(ds, table, 0, 2);
    CHECK(pool.indices == std::vector<std::uint32_t>{0, 1});
    CHECK_THROWS_AS(provider_knn(ds, table, 0, 4), InvalidArgument);

    // K = class size matches full support as a set.
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CandidatePool knn = provider_knn(ds, table, i, 3);
        std::sort(knn.indices.begin(), knn.indices.end());
        CHECK(knn.indices == provider_full_support(ds, i, 0).indices);
    }

    // Equidistant neighbours: the lower index comes first.
    const Dataset tie = from_points({{0.0, 0.0}, {5.0, 5.0}, {-1.0, 0.0}, {1.0, 0.0}});
    const KnnTable tie_table = precompute_knn(tie, 2);
    CHECK(provider_knn(tie, tie_table, 0, 2).indices == std::vector<std::uint32_t>{0, 2});
}

TEST_CASE("provider_perturbation") {
    const Dataset ds = testing::random_dataset(8, 6);
    SeededRng rng(3);
    const CandidatePool copies = provider_perturbation(ds, 2, 5, 0.0, rng);
    CHECK(copies.size() == 5);
    for (const Point& p : copies.explicit_points) CHECK(p == Point(ds.point(2)));
    const Point eps{{0.2, -0.9}};
    const PathPoint p = make_path_point(ds.point(2), eps, 0.4, 2);
    const WeightedTarget w = snis_weights(p, kUnconditional, copies, ds, standard_settings());
    for (double x : w.weights) CHECK(x == doctest::Approx(0.2).epsilon(1e-14));
    CHECK((w.collapsed_velocity - (eps - ds.point(2))).cwiseAbs().maxCoeff() < 1e-12);

    CHECK(provider_perturbation(ds, 2, 1, 0.05, rng).size() == 1);

    // Each of the 9 perturbed points exceeds 5 sigma sqrt(2) with probability
    // P(chi2_2 > 50) = e^-25, so pool-level violations must stay below 0.1%.
    const double sigma = 0.05, bound = 5.0 * sigma * std::sqrt(2.0);
    int violations = 0;
    const int pools = 20000;
    for (int k = 0; k < pools; ++k) {
        const CandidatePool pool = provider_perturbation(ds, 1, 10, sigma, rng);
        for (const Point& q : pool.explicit_points)
            if ((q - ds.point(1)).norm() > bound) {
                ++violations;
                break;
            }
    }
    CHECK(violations <= pools / 1000);
    CHECK_THROWS_AS(provider_perturbation(ds, 1, 3, -1.0, rng), InvalidArgument);
}

TEST_CASE("provider_augmentation") {
    const Dataset ds = testing::random_dataset(9, 6);
    const AugmentFn identity = [](const Point& z, std::size_t) { return z; };
    const CandidatePool copies = provider_augmentation(ds, 0, 4, identity);
    CHECK(copies.size() == 4);
    for (const Point& p : copies.explicit_points) CHECK(p == Point(ds.point(0)));

    const Point centroid = ds.points.rowwise().mean();
    const CandidatePool rotated = provider_augmentation(ds, 3, 3, make_rotation_augmenter(centroid, 0.3, 42));
    REQUIRE(rotated.size() == 3);
    const double r0 = (Point(ds.point(3)) - centroid).norm();
    for (const Point& p : rotated.explicit_points) {
        CHECK(std::abs((p - centroid).norm() - r0) < 1e-12);
        CHECK((p - ds.point(3)).norm() > 0.0);
    }
    CHECK(provider_augmentation(ds, 3, 1, identity).size() == 1);
    const AugmentFn wrong = [](const Point&, std::size_t) { return Point::Zero(3); };
    CHECK_THROWS_AS(provider_augmentation(ds, 0, 2, wrong), InvalidArgument);
}

TEST_CASE("owner weight grows as t shrinks") {
    SeededRng rng(31);
    double mean_weight[3] = {0.0, 0.0, 0.0};
    const double times[3] = {1e-1, 1e-2, 1e-3};
    const int trials = 300;
    for (int trial = 0; trial < trials; ++trial) {
        const Dataset ds = testing::random_dataset(100 + trial, 16, 2, 0, 0.05);
        const CandidatePool pool = provider_full_support(ds, 0, kUnconditional);
        const Point eps = gaussian_sample(rng, 2, Point::Zero(2), 1.0);
        for (int k = 0; k < 3; ++k) {
            const PathPoint p = make_path_point(ds.point(0), eps, times[k], 0);
            mean_weight[k] += snis_weights(p, kUnconditional, pool, ds, standard_settings()).weights[0] / trials;
        }
    }
    CHECK(mean_weight[0] <= mean_weight[1]);
    CHECK(mean_weight[1] <= mean_weight[2]);
    CHECK(mean_weight[2] > 0.9);
}

TEST_CASE("full-support collapsed target equals the marginal velocity oracle") {
    const Dataset ds = testing::random_dataset(10, 40);
    const SourceDistribution source = SourceDistribution::standard(2);
    SeededRng rng(77);
    for (int k = 0; k < 200; ++k) {
        const std::size_t i = rng.uniform_index(ds.size());
        const PathPoint p = make_path_point(ds.point(i), gaussian_sample(rng, 2, Point::Zero(2), 1.0),
                                            kDefaultTimeEps + (1.0 - kDefaultTimeEps) * rng.uniform(), i);
        const WeightedTarget w =
            snis_weights(p, kUnconditional, provider_full_support(ds, i, kUnconditional), ds, {source});
        const Point oracle = marginal_velocity_oracle(ds, source, p.z_t, p.t, kUnconditional);
        CHECK((w.collapsed_velocity - oracle).cwiseAbs().maxCoeff() <= 1e-10 * std::max(1.0, oracle.norm()));
    }
}

}
