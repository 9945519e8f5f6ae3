#pragma once

#include "pafm/numeric.hpp"

namespace pafm {

/// Below this time the posterior over candidates is treated as a point mass on
/// the generating datum.
inline constexpr double kDefaultTimeEps = 1e-4;

/// Isotropic Gaussian source N(mean, std^2 I). The path likelihood depends on
/// it; with the standard source it is -|z_t - (1-t) z|^2 / (2 t^2).
struct SourceDistribution {
    Point mean;
    double std = 1.0;

    static SourceDistribution standard(Eigen::Index d);
    Eigen::Index dim() const noexcept { return mean.size(); }
};

/// An intermediate point on the linear interpolant between data point
/// `data_index` (t = 0) and the noise draw `eps` (t -> 1).
struct PathPoint {
    Point z_t;
    double t = 0.0;
    Point eps;
    std::size_t data_index = 0;
};

/// t * eps + (1 - t) * z for t in [0, 1).
Point interpolate(const PointRef& z, const PointRef& eps, double t);

PathPoint make_path_point(const PointRef& z, const PointRef& eps, double t, std::size_t data_index);

/// (z_t - z_target) / t. Throws DegenerateTime for t <= t_eps; callers in that
/// regime use the self-target identity eps - z instead.
Point conditional_velocity(const PointRef& z_t, const PointRef& z_target, double t,
                           double t_eps = kDefaultTimeEps);

/// Unnormalized log p_t(z_t | z_target) for the standard source.
double log_path_likelihood(const PointRef& z_t, const PointRef& z_target, double t);

/// Unnormalized log p_t(z_t | z_target) = -|z_t - t*mu - (1-t) z|^2 / (2 t^2 s^2)
/// for the source N(mu, s^2 I).
double log_path_likelihood(const PointRef& z_t, const PointRef& z_target, double t,
                           const SourceDistribution& source);

}  // namespace pafm
