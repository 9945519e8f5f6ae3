#include "pafm/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "pafm/errors.hpp"

namespace pafm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// exp() of anything below this is exactly zero in double precision.
constexpr double kExpUnderflow = -746.0;

}  // namespace

std::size_t CandidatePool::owner_slot() const noexcept {
    for (std::size_t k = 0; k < indices.size(); ++k)
        if (indices[k] == owner) return k;
    return size();
}

double normalize_log_weights(std::span<const double> log_alphas, std::span<double> weights) {
    if (log_alphas.empty() || weights.size() != log_alphas.size())
        throw InvalidArgument("normalize_log_weights: empty input or size mismatch");
    const double max = *std::max_element(log_alphas.begin(), log_alphas.end());
    if (max == kNegInf) throw InternalInvariant("normalize_log_weights: every entry has zero mass");
    if (std::isnan(max) || max == -kNegInf) throw InvalidArgument("normalize_log_weights: NaN or +inf entry");
    const auto n = static_cast<Eigen::Index>(log_alphas.size());
    Eigen::Map<const Eigen::ArrayXd> la(log_alphas.data(), n);
    // Evaluated into an aligned temporary: on a Map over caller memory Eigen
    // peels an address-dependent scalar head, which changes rounding.
    // The vectorized exp saturates near 1e-308 instead of reaching zero, so
    // entries past the double underflow point are cleared explicitly.
    Eigen::ArrayXd w = (la - max).exp();
    w = (la - max > kExpUnderflow).select(w, 0.0);
    std::copy(w.begin(), w.end(), weights.begin());
    const double inv_sum = 1.0 / w.sum();
    double sum_sq = 0.0;
    for (double& x : weights) {
        if (x == 0.0) continue;
        x *= inv_sum;
        sum_sq += x * x;
    }
    return 1.0 / sum_sq;
}

double condition_log_likelihood(Label y_i, Label y_j) {
    if (y_i == kUnconditional || y_j == kUnconditional) return 0.0;
    return y_i == y_j ? 0.0 : kNegInf;
}

WeightedTarget snis_weights(const PathPoint& point, Label y_i, const CandidatePool& pool,
                            const Dataset& dataset, const PosteriorSettings& settings) {
    const std::size_t k_total = pool.size();
    if (k_total == 0) throw InvalidArgument("snis_weights: empty candidate pool");
    const std::size_t owner_slot = pool.owner_slot();
    if (owner_slot == k_total) throw InvalidArgument("snis_weights: pool does not contain its owner");
    const double t = point.t;
    if (!(t >= 0.0 && t < 1.0)) throw InvalidArgument("snis_weights: t must lie in [0, 1)");
    const Eigen::Index d = dataset.dim();
    if (point.z_t.size() != d || point.eps.size() != d || settings.source.dim() != d)
        throw InvalidArgument("snis_weights: dimension mismatch");
    if (point.data_index != pool.owner)
        throw InvalidArgument("snis_weights: path point was not generated from the pool owner");

    WeightedTarget out;
    out.weights.assign(k_total, 0.0);
    out.log_alphas.assign(k_total, kNegInf);
    const Point owner_velocity = point.eps - dataset.point(pool.owner);

    if (t < settings.t_eps) {
        out.weights[owner_slot] = 1.0;
        out.log_alphas[owner_slot] = 0.0;
        out.ess = 1.0;
        out.collapsed_velocity = owner_velocity;
        return out;
    }

    const double scale = t * settings.source.std;
    const double inv_two_var = 1.0 / (2.0 * scale * scale);
    const double keep = 1.0 - t;
    const Point center = point.z_t - t * settings.source.mean;
    const std::size_t n_index = pool.indices.size();

    auto candidate = [&](std::size_t k) -> const double* {
        return k < n_index ? dataset.points.col(static_cast<Eigen::Index>(pool.indices[k])).data()
                           : pool.explicit_points[k - n_index].data();
    };

    auto log_path = [&](const double* z_j) {
        double sq = 0.0;
        for (Eigen::Index c = 0; c < d; ++c) {
            const double diff = center[c] - keep * z_j[c];
            sq += diff * diff;
        }
        return -sq * inv_two_var;
    };
    const double* base = dataset.points.data();
    const bool filter = y_i != kUnconditional;
    for (std::size_t k = 0; k < n_index; ++k) {
        const std::uint32_t j = pool.indices[k];
        if (filter && condition_log_likelihood(y_i, dataset.label(j)) == kNegInf) continue;
        out.log_alphas[k] = log_path(base + static_cast<std::ptrdiff_t>(j) * d);
    }
    const double explicit_cond = condition_log_likelihood(y_i, pool.owner_label);
    if (explicit_cond != kNegInf)
        for (std::size_t k = n_index; k < k_total; ++k)
            out.log_alphas[k] = log_path(pool.explicit_points[k - n_index].data());
    out.ess = normalize_log_weights(out.log_alphas, out.weights);

    // sum_j w_j v_j with v_owner = eps - z_i and v_j = (z_t - z_j) / t otherwise.
    out.collapsed_velocity = Point::Zero(d);
    double* acc = out.collapsed_velocity.data();
    const double inv_t = 1.0 / t;
    for (std::size_t k = 0; k < k_total; ++k) {
        const double w = out.weights[k];
        if (w == 0.0) continue;
        if (k == owner_slot) {
            for (Eigen::Index c = 0; c < d; ++c) acc[c] += w * owner_velocity[c];
        } else {
            const double* z_j = candidate(k);
            for (Eigen::Index c = 0; c < d; ++c) acc[c] += w * ((point.z_t[c] - z_j[c]) * inv_t);
        }
    }
    return out;
}

Point candidate_velocity(const PathPoint& point, const CandidatePool& pool, std::size_t slot,
                         const Dataset& dataset) {
    if (slot >= pool.size()) throw InvalidArgument("candidate_velocity: slot out of range");
    if (slot == pool.owner_slot()) return point.eps - dataset.point(pool.owner);
    if (!(point.t > 0.0)) throw DegenerateTime(point.t, "candidate_velocity: t must be > 0 for non-owner entries");
    const Point z_j = slot < pool.indices.size() ? Point(dataset.point(pool.indices[slot]))
                                                 : pool.explicit_points[slot - pool.indices.size()];
    return (point.z_t - z_j) / point.t;
}

double kish_ess(std::span<const double> weights) {
    if (weights.empty()) throw InvalidArgument("kish_ess: empty weight vector");
    double sum = 0.0;
    double sum_sq = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw InvalidArgument("kish_ess: negative or NaN weight");
        sum += w;
        sum_sq += w * w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw InvalidArgument("kish_ess: weights are not normalized");
    return 1.0 / sum_sq;
}

CandidatePool provider_full_support(const Dataset& dataset, std::size_t i, Label y_i) {
    if (dataset.empty()) throw InvalidArgument("provider_full_support: empty dataset");
    if (i >= dataset.size()) throw InvalidArgument("provider_full_support: index out of range");
    CandidatePool pool;
    pool.owner = i;
    pool.owner_label = dataset.label(i);
    for (std::size_t j = 0; j < dataset.size(); ++j)
        if (y_i == kUnconditional || dataset.label(j) == y_i)
            pool.indices.push_back(static_cast<std::uint32_t>(j));
    if (pool.owner_slot() == pool.size())
        throw InvalidArgument("provider_full_support: y_i does not match the owner's label");
    return pool;
}

CandidatePool provider_knn(const Dataset& dataset, const KnnTable& table, std::size_t i, std::size_t k) {
    if (table.size() != dataset.size())
        throw InvalidArgument("provider_knn: table was built for a different dataset");
    if (i >= table.size()) throw InvalidArgument("provider_knn: index out of range");
    if (k < 1) throw InvalidArgument("provider_knn: K must be >= 1");
    const auto& row = table.rows[i];
    if (k > row.size())
        throw InvalidArgument("provider_knn: K = " + std::to_string(k) + " exceeds the " +
                              std::to_string(row.size()) + " available neighbours");
    CandidatePool pool;
    pool.owner = i;
    pool.owner_label = dataset.label(i);
    pool.indices.assign(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k));
    // Rows are owner-first, but tolerate tables from other sources.
    if (pool.owner_slot() == pool.size()) pool.indices.back() = static_cast<std::uint32_t>(i);
    return pool;
}

CandidatePool provider_perturbation(const Dataset& dataset, std::size_t i, std::size_t k,
                                    double sigma, SeededRng& rng) {
    if (i >= dataset.size()) throw InvalidArgument("provider_perturbation: index out of range");
    if (k < 1) throw InvalidArgument("provider_perturbation: K must be >= 1");
    if (!(sigma >= 0.0)) throw InvalidArgument("provider_perturbation: sigma must be non-negative");
    CandidatePool pool;
    pool.owner = i;
    pool.owner_label = dataset.label(i);
    pool.indices.push_back(static_cast<std::uint32_t>(i));
    const Point z = dataset.point(i);
    for (std::size_t c = 1; c < k; ++c) pool.explicit_points.push_back(gaussian_sample(rng, z.size(), z, sigma));
    return pool;
}

CandidatePool provider_augmentation(const Dataset& dataset, std::size_t i, std::size_t k,
                                    const AugmentFn& augment_fn) {
    if (i >= dataset.size()) throw InvalidArgument("provider_augmentation: index out of range");
    if (k < 1) throw InvalidArgument("provider_augmentation: K must be >= 1");
    CandidatePool pool;
    pool.owner = i;
    pool.owner_label = dataset.label(i);
    pool.indices.push_back(static_cast<std::uint32_t>(i));
    const Point z = dataset.point(i);
    for (std::size_t c = 1; c < k; ++c) {
        Point aug = augment_fn(z, c);
        if (aug.size() != z.size())
            throw InvalidArgument("provider_augmentation: augment_fn returned dimension " +
                                  std::to_string(aug.size()) + ", expected " + std::to_string(z.size()));
        pool.explicit_points.push_back(std::move(aug));
    }
    return pool;
}

AugmentFn make_rotation_augmenter(Point center, double max_angle, std::uint64_t seed) {
    return [center = std::move(center), max_angle, seed](const Point& z, std::size_t k) {
        if (z.size() < 2 || center.size() != z.size())
            throw InvalidArgument("rotation augmenter: needs matching dimension >= 2");
        SeededRng rng = SeededRng::derive(seed, "augment", k);
        const double angle = max_angle * (2.0 * rng.uniform() - 1.0);
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        Point out = z;
        const double x = z[0] - center[0];
        const double y = z[1] - center[1];
        out[0] = center[0] + c * x - s * y;
        out[1] = center[1] + s * x + c * y;
        return out;
    };
}

}  // namespace pafm
