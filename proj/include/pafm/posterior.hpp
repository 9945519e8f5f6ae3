#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pafm/dataset.hpp"
#include "pafm/numeric.hpp"
#include "pafm/path.hpp"

namespace pafm {

/// The K candidate targets for one training index (the owner).
///
/// Entries are ordered: first the dataset-index entries in `indices`, then the
/// explicit points produced by perturbation or augmentation providers. The
/// owner always appears among `indices`. Explicit entries carry the owner's
/// label.
struct CandidatePool {
    std::size_t owner = 0;
    Label owner_label = kUnconditional;
    std::vector<std::uint32_t> indices;
    std::vector<Point> explicit_points;

    std::size_t size() const noexcept { return indices.size() + explicit_points.size(); }
    /// Position of the owner entry, or size() when absent.
    std::size_t owner_slot() const noexcept;
    bool index_only() const noexcept { return explicit_points.empty(); }
};

using PoolTable = std::vector<CandidatePool>;

/// SNIS weights over a pool for one intermediate point.
struct WeightedTarget {
    std::vector<double> weights;
    std::vector<double> log_alphas;
    double ess = 1.0;
    Point collapsed_velocity;
};

struct PosteriorSettings {
    SourceDistribution source;
    double t_eps = kDefaultTimeEps;
};

/// Normalizes weights from their logs in place (max subtraction, exact zero
/// for -inf and for entries past double underflow). Returns the Kish ESS.
/// Throws InternalInvariant if every entry is -inf.
double normalize_log_weights(std::span<const double> log_alphas, std::span<double> weights);

/// Indicator likelihood p(y_i | z_j): 0 when labels agree (or either side is
/// the unconditional sentinel), -inf otherwise.
double condition_log_likelihood(Label y_i, Label y_j);

/// Self-normalized importance weights of the pool entries for the
/// intermediate `point`, with the proposal fixed to the data prior.
///
/// log alpha_j = log p_t(z_t | z_j) + log p(y_i | z_j), normalized in log
/// space. The owner's conditional velocity is taken as eps - z_i exactly, so a
/// single-entry pool reproduces the flow matching target bit for bit. Below
/// t_eps all weight goes to the owner.
WeightedTarget snis_weights(const PathPoint& point, Label y_i, const CandidatePool& pool,
                            const Dataset& dataset, const PosteriorSettings& settings);

/// Conditional velocity toward pool entry `slot`: eps - z_i for the owner,
/// (z_t - z_j) / t otherwise.
Point candidate_velocity(const PathPoint& point, const CandidatePool& pool, std::size_t slot,
                         const Dataset& dataset);

/// 1 / sum(w^2) for weights that are non-negative and sum to 1 (within 1e-9).
double kish_ess(std::span<const double> weights);

/// Every point sharing label y_i (all points when y_i is the unconditional
/// sentinel), in dataset order.
CandidatePool provider_full_support(const Dataset& dataset, std::size_t i, Label y_i);

/// Nearest-neighbour table: row i lists candidate indices for i, the owner
/// first and then by ascending (distance, index). Rows are restricted to
/// points of the same class when built per class.
struct KnnTable {
    std::vector<std::vector<std::uint32_t>> rows;
    bool by_class = true;

    std::size_t size() const noexcept { return rows.size(); }
};

/// The first K entries of the precomputed row for i. Throws InvalidArgument
/// if K exceeds the row (class) size.
CandidatePool provider_knn(const Dataset& dataset, const KnnTable& table, std::size_t i, std::size_t k);

/// {z_i} plus K-1 Gaussian perturbations z_i + sigma * eta.
CandidatePool provider_perturbation(const Dataset& dataset, std::size_t i, std::size_t k,
                                    double sigma, SeededRng& rng);

/// Maps (z_i, k) to the k-th augmented copy of z_i; must be deterministic.
using AugmentFn = std::function<Point(const Point&, std::size_t)>;

/// {z_i} plus augment_fn(z_i, k) for k = 1..K-1.
CandidatePool provider_augmentation(const Dataset& dataset, std::size_t i, std::size_t k,
                                    const AugmentFn& augment_fn);

/// Rotation about `center` by an angle drawn uniformly from [-max_angle,
/// max_angle] (radians) in the plane of the first two coordinates; the angle
/// for copy k depends only on (seed, k).
AugmentFn make_rotation_augmenter(Point center, double max_angle, std::uint64_t seed);

}  // namespace pafm
