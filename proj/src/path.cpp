#include "pafm/path.hpp"

#include <string>

#include "pafm/errors.hpp"

namespace pafm {

SourceDistribution SourceDistribution::standard(Eigen::Index d) {
    return SourceDistribution{Point::Zero(d), 1.0};
}

Point interpolate(const PointRef& z, const PointRef& eps, double t) {
    if (!(t >= 0.0 && t < 1.0)) throw InvalidArgument("interpolate: t must lie in [0, 1)");
    if (z.size() != eps.size()) throw InvalidArgument("interpolate: dimension mismatch");
    return t * eps + (1.0 - t) * z;
}

PathPoint make_path_point(const PointRef& z, const PointRef& eps, double t, std::size_t data_index) {
    return PathPoint{interpolate(z, eps, t), t, eps, data_index};
}

Point conditional_velocity(const PointRef& z_t, const PointRef& z_target, double t, double t_eps) {
    if (!(t > t_eps))
        throw DegenerateTime(t, "conditional_velocity: t = " + std::to_string(t) +
                                    " is at or below t_eps; use eps - z");
    if (z_t.size() != z_target.size())
        throw InvalidArgument("conditional_velocity: dimension mismatch");
    return (z_t - z_target) / t;
}

double log_path_likelihood(const PointRef& z_t, const PointRef& z_target, double t) {
    if (!(t > 0.0)) throw DegenerateTime(t, "log_path_likelihood: t must be positive");
    if (z_t.size() != z_target.size())
        throw InvalidArgument("log_path_likelihood: dimension mismatch");
    return -(z_t - (1.0 - t) * z_target).squaredNorm() / (2.0 * t * t);
}

double log_path_likelihood(const PointRef& z_t, const PointRef& z_target, double t,
                           const SourceDistribution& source) {
    if (!(t > 0.0)) throw DegenerateTime(t, "log_path_likelihood: t must be positive");
    if (z_t.size() != z_target.size() || source.dim() != z_t.size())
        throw InvalidArgument("log_path_likelihood: dimension mismatch");
    const double scale = t * source.std;
    return -(z_t - t * source.mean - (1.0 - t) * z_target).squaredNorm() / (2.0 * scale * scale);
}

}  // namespace pafm
