#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pafm/dataset.hpp"
#include "pafm/model.hpp"
#include "pafm/path.hpp"
#include "pafm/posterior.hpp"
#include "pafm/train.hpp"

namespace pafm {

/// Exact marginal velocity of the empirical data distribution:
/// sum_j softmax_j(log p_t(z_t | z_j)) (z_t - z_j) / t over the points with
/// label y (all points when y is the unconditional sentinel).
/// Throws DegenerateTime for t < t_eps.
Point marginal_velocity_oracle(const Dataset& dataset, const SourceDistribution& source, const PointRef& z_t,
                               double t, Label y, double t_eps = kDefaultTimeEps);

struct FieldGridSpec {
    std::size_t n_points = 4096;
    std::size_t n_times = 16;
    double t_eps = kDefaultTimeEps;
    bool conditioned = false;
    std::uint64_t seed = 0;
};

/// Evaluation points with their true velocities. Each of the n_points
/// (z, eps) draws is interpolated at every one of n_times evenly spaced times
/// t_k = t_eps + k (1 - t_eps) / n_times.
struct FieldGrid {
    Matrix z_t;
    std::vector<double> t;
    std::vector<Label> y;
    Matrix true_velocity;
    std::vector<double> times;  // the distinct t values, ascending

    std::size_t size() const noexcept { return t.size(); }
};

FieldGrid build_field_grid(const Dataset& dataset, const SourceDistribution& source, const FieldGridSpec& spec);

/// Model predictions over the grid (d x grid size).
Matrix predict_on_grid(const MlpModel& model, const FieldGrid& grid);

/// Mean over grid points of |f(z_t | t, y) - oracle(z_t, t, y)|^2.
double field_mse(const MlpModel& model, const FieldGrid& grid);
/// The same error for precomputed predictions (d x grid size).
double field_mse(const Matrix& predictions, const FieldGrid& grid);
double field_mse(const MlpModel& model, const Dataset& dataset, const SourceDistribution& source,
                 const FieldGridSpec& spec);
/// The same error broken down per distinct t (aligned with grid.times).
std::vector<double> field_mse_by_time(const MlpModel& model, const FieldGrid& grid);

struct VarianceReport {
    std::vector<double> traces;  // |g_b - g_mean|^2 per batch, indexed by batch id
    double mean_trace = 0.0;
    std::size_t batches = 0;
    std::size_t batch_size = 0;
};

struct GradVarOptions {
    std::size_t batches = 500;
    std::size_t batch_size = 256;
    std::uint64_t seed = 0;
    bool conditioned = false;
    double t_eps = kDefaultTimeEps;
    /// Every batch uses the same random stream.
    bool identical_batches = false;
    /// Fix (eps, t) per dataset element for the whole measurement; batches
    /// then differ only in which elements they contain.
    bool freeze_per_element = false;
    /// Order in which batch gradients are evaluated (a permutation of batch
    /// ids); empty means ascending.
    std::vector<std::size_t> order;
};

/// Reference gradient = mean of the given gradients; traces per gradient.
VarianceReport variance_report(std::span<const Eigen::VectorXd> gradients, std::size_t batch_size);

/// Trace of the mini-batch gradient covariance for a frozen model. The
/// reference gradient is the mean of the B measured batch gradients.
VarianceReport gradient_variance(const MlpModel& model, const Dataset& dataset, const SourceDistribution& source,
                                 Objective objective, const PoolTable* pools, const GradVarOptions& options);

/// Velocity field over a d x n block of states sharing one time t.
using VelocityField = std::function<Matrix(const Matrix& z, double t)>;

VelocityField model_velocity_field(const MlpModel& model, Label y);
VelocityField oracle_velocity_field(const Dataset& dataset, const SourceDistribution& source, Label y,
                                    double t_eps = kDefaultTimeEps);

/// Draws n points from the source and integrates dz/dt = f(z, t) from t = 1 to
/// t = 0 with n_steps explicit Euler steps evaluated at the larger-t end of
/// each step. Returns d x n samples. Throws NumericFailure with the step index
/// on a non-finite state.
Matrix euler_sample(const VelocityField& field, const SourceDistribution& source, std::size_t n_samples,
                    std::size_t n_steps, SeededRng& rng);
Matrix euler_sample(const MlpModel& model, const SourceDistribution& source, std::size_t n_samples,
                    std::size_t n_steps, SeededRng& rng, Label y = kUnconditional);

/// Gaussian kernel density estimate at `query` (points are d x n columns).
double kde(const Matrix& points, const PointRef& query, double bandwidth);
/// Scott's rule n^(-1/(d+4)) times the mean per-coordinate standard deviation.
double scott_bandwidth(const Matrix& points);

/// 2 E|a-b| - E|a-a'| - E|b-b'| over all pairs (V-statistic). Exactly
/// symmetric in its arguments and exactly zero for identical inputs.
double energy_distance(const Matrix& a, const Matrix& b);

/// Mean distance from each column of `points` to its nearest column of
/// `reference`.
double mean_nearest_distance(const Matrix& points, const Matrix& reference);
/// Mean distance from each point of `reference` to its nearest other point.
double mean_nearest_neighbor_spacing(const Matrix& reference);

struct Theorem1Result {
    double fm_mean = 0.0;
    double pafm_mean = 0.0;
    double fm_stderr = 0.0;
    double pafm_stderr = 0.0;
    std::size_t draws = 0;

    double combined_stderr() const;
};

/// Monte-Carlo comparison of the flow matching loss and the posterior
/// (resampled-target) loss for a frozen model. The posterior over the whole
/// dataset is enumerated exactly, so the dataset must be small (N <= 16).
Theorem1Result theorem1_mc_check(const Dataset& dataset, const SourceDistribution& source, const MlpModel& model,
                                 std::size_t n_draws, std::uint64_t seed, bool conditioned = false);

}  // namespace pafm
