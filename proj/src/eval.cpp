#include "pafm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "pafm/errors.hpp"

namespace pafm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kExpUnderflow = -746.0;

// Marginal velocity at one state; `members` lists the dataset columns that
// share the conditioning label. `scratch` holds one log-likelihood per member.
void oracle_at(const Dataset& dataset, const std::vector<std::size_t>& members, const SourceDistribution& source,
               const double* z_t, double t, std::vector<double>& scratch, double* out) {
    const Eigen::Index d = dataset.dim();
    const double scale = t * source.std;
    const double inv_two_var = 1.0 / (2.0 * scale * scale);
    const double keep = 1.0 - t;
    scratch.resize(members.size());
    double max = kNegInf;
    for (std::size_t m = 0; m < members.size(); ++m) {
        const double* z = dataset.points.col(static_cast<Eigen::Index>(members[m])).data();
        double sq = 0.0;
        for (Eigen::Index c = 0; c < d; ++c) {
            const double diff = z_t[c] - t * source.mean[c] - keep * z[c];
            sq += diff * diff;
        }
        scratch[m] = -sq * inv_two_var;
        max = std::max(max, scratch[m]);
    }
    double norm = 0.0;
    for (double& la : scratch) {
        const double shifted = la - max;
        la = shifted > kExpUnderflow ? std::exp(shifted) : 0.0;
        norm += la;
    }
    // sum_j w_j (z_t - z_j) / t = (z_t - sum_j w_j z_j) / t
    for (Eigen::Index c = 0; c < d; ++c) out[c] = 0.0;
    for (std::size_t m = 0; m < members.size(); ++m) {
        if (scratch[m] == 0.0) continue;
        const double w = scratch[m] / norm;
        const double* z = dataset.points.col(static_cast<Eigen::Index>(members[m])).data();
        for (Eigen::Index c = 0; c < d; ++c) out[c] += w * (z_t[c] - z[c]) / t;
    }
}

void check_oracle_args(const Dataset& dataset, const SourceDistribution& source, Eigen::Index z_dim, double t,
                       double t_eps) {
    if (dataset.empty()) throw InvalidArgument("marginal velocity: empty dataset");
    if (z_dim != dataset.dim() || source.dim() != dataset.dim())
        throw InvalidArgument("marginal velocity: dimension mismatch");
    if (t < t_eps) throw DegenerateTime(t, "marginal velocity: t = " + std::to_string(t) + " is below t_eps");
    if (!(t <= 1.0)) throw InvalidArgument("marginal velocity: t must be <= 1");
}

std::vector<std::size_t> members_for(const Dataset& dataset, Label y) {
    auto members = dataset.indices_with_label(y);
    if (members.empty()) throw InvalidArgument("marginal velocity: no data point carries label " + std::to_string(y));
    return members;
}

}  // namespace

Point marginal_velocity_oracle(const Dataset& dataset, const SourceDistribution& source, const PointRef& z_t,
                               double t, Label y, double t_eps) {
    check_oracle_args(dataset, source, z_t.size(), t, t_eps);
    const auto members = members_for(dataset, y);
    const Point z = z_t;
    Point out(dataset.dim());
    std::vector<double> scratch;
    oracle_at(dataset, members, source, z.data(), t, scratch, out.data());
    return out;
}

FieldGrid build_field_grid(const Dataset& dataset, const SourceDistribution& source, const FieldGridSpec& spec) {
    if (dataset.empty()) throw InvalidArgument("field grid: empty dataset");
    if (spec.n_points == 0 || spec.n_times == 0) throw InvalidArgument("field grid: grid must be non-empty");
    const Eigen::Index d = dataset.dim();
    SeededRng rng = SeededRng::derive(spec.seed, "field-grid");
    std::vector<std::size_t> idx(spec.n_points);
    Matrix eps(d, static_cast<Eigen::Index>(spec.n_points));
    for (std::size_t p = 0; p < spec.n_points; ++p) {
        idx[p] = rng.uniform_index(dataset.size());
        eps.col(static_cast<Eigen::Index>(p)) = gaussian_sample(rng, d, source.mean, source.std);
    }

    FieldGrid grid;
    for (std::size_t k = 0; k < spec.n_times; ++k)
        grid.times.push_back(spec.t_eps + static_cast<double>(k) * (1.0 - spec.t_eps) / static_cast<double>(spec.n_times));
    const auto total = static_cast<Eigen::Index>(spec.n_points * spec.n_times);
    grid.z_t.resize(d, total);
    grid.true_velocity.resize(d, total);

    std::vector<std::vector<std::size_t>> members_by_label;
    std::vector<Label> member_labels;
    auto members_of = [&](Label y) -> const std::vector<std::size_t>& {
        for (std::size_t k = 0; k < member_labels.size(); ++k)
            if (member_labels[k] == y) return members_by_label[k];
        member_labels.push_back(y);
        members_by_label.push_back(members_for(dataset, y));
        return members_by_label.back();
    };

    std::vector<double> scratch;
    Eigen::Index col = 0;
    for (double t : grid.times) {
        for (std::size_t p = 0; p < spec.n_points; ++p, ++col) {
            const Label y = spec.conditioned ? dataset.label(idx[p]) : kUnconditional;
            grid.z_t.col(col) = interpolate(dataset.point(idx[p]), eps.col(static_cast<Eigen::Index>(p)), t);
            grid.t.push_back(t);
            grid.y.push_back(y);
            oracle_at(dataset, members_of(y), source, grid.z_t.col(col).data(), t, scratch,
                      grid.true_velocity.col(col).data());
        }
    }
    return grid;
}

Matrix predict_on_grid(const MlpModel& model, const FieldGrid& grid) {
    const std::span<const Label> labels =
        model.shape().conditioned() ? std::span<const Label>(grid.y) : std::span<const Label>{};
    // Chunked so the activations stay cache-sized.
    constexpr Eigen::Index kChunk = 2048;
    Matrix out(grid.z_t.rows(), grid.z_t.cols());
    for (Eigen::Index start = 0; start < grid.z_t.cols(); start += kChunk) {
        const Eigen::Index n = std::min(kChunk, grid.z_t.cols() - start);
        const auto s = static_cast<std::size_t>(start);
        const auto ns = static_cast<std::size_t>(n);
        out.middleCols(start, n) = model.forward_batch(grid.z_t.middleCols(start, n),
                                                       std::span<const double>(grid.t).subspan(s, ns),
                                                       labels.empty() ? labels : labels.subspan(s, ns));
    }
    return out;
}

double field_mse(const Matrix& predictions, const FieldGrid& grid) {
    if (grid.size() == 0) throw InvalidArgument("field_mse: empty grid");
    if (predictions.rows() != grid.true_velocity.rows() || predictions.cols() != grid.true_velocity.cols())
        throw InvalidArgument("field_mse: prediction shape differs from the grid");
    return (predictions - grid.true_velocity).colwise().squaredNorm().sum() / static_cast<double>(grid.size());
}

double field_mse(const MlpModel& model, const FieldGrid& grid) { return field_mse(predict_on_grid(model, grid), grid); }

double field_mse(const MlpModel& model, const Dataset& dataset, const SourceDistribution& source,
                 const FieldGridSpec& spec) {
    return field_mse(model, build_field_grid(dataset, source, spec));
}

std::vector<double> field_mse_by_time(const MlpModel& model, const FieldGrid& grid) {
    const Eigen::RowVectorXd err = (predict_on_grid(model, grid) - grid.true_velocity).colwise().squaredNorm();
    std::vector<double> sums(grid.times.size(), 0.0);
    std::vector<std::size_t> counts(grid.times.size(), 0);
    for (std::size_t p = 0; p < grid.size(); ++p) {
        const auto k = static_cast<std::size_t>(
            std::lower_bound(grid.times.begin(), grid.times.end(), grid.t[p]) - grid.times.begin());
        sums[k] += err[static_cast<Eigen::Index>(p)];
        ++counts[k];
    }
    for (std::size_t k = 0; k < sums.size(); ++k)
        if (counts[k] > 0) sums[k] /= static_cast<double>(counts[k]);
    return sums;
}

VarianceReport variance_report(std::span<const Eigen::VectorXd> gradients, std::size_t batch_size) {
    if (gradients.size() < 2) throw InvalidArgument("variance_report: need at least two gradients");
    // Accumulated relative to the first gradient, so identical inputs give
    // a mean equal to each of them exactly.
    const Eigen::VectorXd& first = gradients.front();
    Eigen::VectorXd offset = Eigen::VectorXd::Zero(first.size());
    for (const auto& g : gradients) {
        if (g.size() != first.size()) throw InvalidArgument("variance_report: gradient sizes differ");
        offset += g - first;
    }
    const Eigen::VectorXd mean = first + offset / static_cast<double>(gradients.size());
    VarianceReport report;
    report.batches = gradients.size();
    report.batch_size = batch_size;
    for (const auto& g : gradients) report.traces.push_back((g - mean).squaredNorm());
    double sum = 0.0;
    for (double tr : report.traces) sum += tr;
    report.mean_trace = sum / static_cast<double>(report.traces.size());
    return report;
}

VarianceReport gradient_variance(const MlpModel& model, const Dataset& dataset, const SourceDistribution& source,
                                 Objective objective, const PoolTable* pools, const GradVarOptions& options) {
    if (options.batches < 2) throw InvalidArgument("gradient_variance: need B >= 2 batches");
    if (options.batch_size < 1) throw InvalidArgument("gradient_variance: batch size must be >= 1");
    if (objective == Objective::PAFM) {
        if (pools == nullptr) throw ConfigError("gradient_variance: PAFM needs candidate pools");
        check_pools(dataset, *pools);
    }
    std::vector<std::size_t> order = options.order;
    if (order.empty())
        for (std::size_t b = 0; b < options.batches; ++b) order.push_back(b);
    if (order.size() != options.batches) throw InvalidArgument("gradient_variance: order must list every batch");

    // Per-element (eps, t) for the frozen mode.
    Matrix frozen_eps;
    std::vector<double> frozen_t;
    if (options.freeze_per_element) {
        frozen_eps.resize(dataset.dim(), static_cast<Eigen::Index>(dataset.size()));
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            SeededRng rng = SeededRng::derive(options.seed, "grad-var-frozen", i);
            frozen_eps.col(static_cast<Eigen::Index>(i)) = gaussian_sample(rng, dataset.dim(), source.mean, source.std);
            frozen_t.push_back(rng.uniform());
        }
    }

    const PosteriorSettings settings{source, options.t_eps};
    auto batch_gradient = [&](std::size_t b) {
        SeededRng rng = SeededRng::derive(options.seed, "grad-var", options.identical_batches ? 0 : b);
        BatchDraw draw;
        if (options.freeze_per_element) {
            draw.indices.resize(options.batch_size);
            for (auto& i : draw.indices) i = rng.uniform_index(dataset.size());
            draw.eps.resize(dataset.dim(), static_cast<Eigen::Index>(options.batch_size));
            for (std::size_t e = 0; e < options.batch_size; ++e) {
                draw.eps.col(static_cast<Eigen::Index>(e)) = frozen_eps.col(static_cast<Eigen::Index>(draw.indices[e]));
                draw.t.push_back(frozen_t[draw.indices[e]]);
            }
        } else {
            draw = draw_batch(rng, dataset, source, options.batch_size);
        }
        const TrainingBatch batch = objective == Objective::FM
                                        ? fm_batch(draw, dataset, options.conditioned)
                                        : pafm_batch(draw, dataset, *pools, settings, options.conditioned).batch;
        return backward(model, batch).gradient;
    };

    // Two passes keep memory at O(parameters): the batch streams are
    // counter-derived, so the second pass regenerates identical gradients.
    // The mean is accumulated relative to batch 0's gradient, so identical
    // batches give a mean equal to each of them exactly.
    const Eigen::VectorXd reference = batch_gradient(0);
    Eigen::VectorXd offset = Eigen::VectorXd::Zero(model.parameters().size());
    for (std::size_t b : order) offset += batch_gradient(b) - reference;
    const Eigen::VectorXd mean = reference + offset / static_cast<double>(options.batches);

    VarianceReport report;
    report.batches = options.batches;
    report.batch_size = options.batch_size;
    report.traces.assign(options.batches, 0.0);
    for (std::size_t b : order) report.traces[b] = (batch_gradient(b) - mean).squaredNorm();
    double sum = 0.0;
    for (double tr : report.traces) sum += tr;
    report.mean_trace = sum / static_cast<double>(options.batches);
    return report;
}

VelocityField model_velocity_field(const MlpModel& model, Label y) {
    return [&model, y](const Matrix& z, double t) {
        const std::vector<double> ts(static_cast<std::size_t>(z.cols()), t);
        std::vector<Label> ys;
        if (model.shape().conditioned()) ys.assign(static_cast<std::size_t>(z.cols()), y);
        Matrix out(z.rows(), z.cols());
        constexpr Eigen::Index kChunk = 2048;
        for (Eigen::Index start = 0; start < z.cols(); start += kChunk) {
            const Eigen::Index n = std::min(kChunk, z.cols() - start);
            const auto s = static_cast<std::size_t>(start);
            const auto ns = static_cast<std::size_t>(n);
            out.middleCols(start, n) =
                model.forward_batch(z.middleCols(start, n), std::span<const double>(ts).subspan(s, ns),
                                    ys.empty() ? std::span<const Label>{} : std::span<const Label>(ys).subspan(s, ns));
        }
        return out;
    };
}

VelocityField oracle_velocity_field(const Dataset& dataset, const SourceDistribution& source, Label y, double t_eps) {
    auto members = members_for(dataset, y);
    return [&dataset, &source, members = std::move(members), t_eps](const Matrix& z, double t) {
        check_oracle_args(dataset, source, z.rows(), t, t_eps);
        Matrix out(z.rows(), z.cols());
        std::vector<double> scratch;
        for (Eigen::Index c = 0; c < z.cols(); ++c)
            oracle_at(dataset, members, source, z.col(c).data(), t, scratch, out.col(c).data());
        return out;
    };
}

Matrix euler_sample(const VelocityField& field, const SourceDistribution& source, std::size_t n_samples,
                    std::size_t n_steps, SeededRng& rng) {
    if (n_steps < 1) throw InvalidArgument("euler_sample: n_steps must be >= 1");
    const Eigen::Index d = source.dim();
    Matrix z(d, static_cast<Eigen::Index>(n_samples));
    for (Eigen::Index c = 0; c < z.cols(); ++c) z.col(c) = gaussian_sample(rng, d, source.mean, source.std);
    const double dt = 1.0 / static_cast<double>(n_steps);
    for (std::size_t k = 0; k < n_steps; ++k) {
        const double t = 1.0 - static_cast<double>(k) * dt;
        const Matrix v = field(z, t);
        if (v.rows() != z.rows() || v.cols() != z.cols())
            throw InvalidArgument("euler_sample: velocity field returned the wrong shape");
        z -= dt * v;
        if (!z.allFinite()) throw NumericFailure(k, "euler_sample: non-finite state at step " + std::to_string(k));
    }
    return z;
}

Matrix euler_sample(const MlpModel& model, const SourceDistribution& source, std::size_t n_samples,
                    std::size_t n_steps, SeededRng& rng, Label y) {
    return euler_sample(model_velocity_field(model, y), source, n_samples, n_steps, rng);
}

double kde(const Matrix& points, const PointRef& query, double bandwidth) {
    if (!(bandwidth > 0.0)) throw InvalidArgument("kde: bandwidth must be positive");
    if (points.cols() == 0) throw InvalidArgument("kde: no points");
    if (points.rows() != query.size()) throw InvalidArgument("kde: dimension mismatch");
    const double d = static_cast<double>(points.rows());
    const double h2 = bandwidth * bandwidth;
    const double norm = std::pow(2.0 * std::numbers::pi * h2, -0.5 * d);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < points.cols(); ++i) sum += std::exp(-(points.col(i) - query).squaredNorm() / (2.0 * h2));
    return norm * sum / static_cast<double>(points.cols());
}

double scott_bandwidth(const Matrix& points) {
    if (points.cols() < 2) throw InvalidArgument("scott_bandwidth: need at least two points");
    const double n = static_cast<double>(points.cols());
    const double d = static_cast<double>(points.rows());
    const Eigen::VectorXd mean = points.rowwise().mean();
    const Eigen::VectorXd var = (points.colwise() - mean).rowwise().squaredNorm() / (n - 1.0);
    const double sigma = var.cwiseSqrt().mean();
    return std::pow(n, -1.0 / (d + 4.0)) * sigma;
}

namespace {

double mean_pairwise_distance(const Matrix& a, const Matrix& b) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < a.cols(); ++i) {
        double row = 0.0;
        for (Eigen::Index j = 0; j < b.cols(); ++j) row += (a.col(i) - b.col(j)).norm();
        sum += row;
    }
    return sum / (static_cast<double>(a.cols()) * static_cast<double>(b.cols()));
}

// Strict weak order on sample sets, used to fix the loop order of the cross term.
bool canonical_less(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) return a.cols() < b.cols();
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

}  // namespace

double energy_distance(const Matrix& a, const Matrix& b) {
    if (a.cols() == 0 || b.cols() == 0) throw InvalidArgument("energy_distance: empty sample set");
    if (a.rows() != b.rows()) throw InvalidArgument("energy_distance: dimension mismatch");
    const bool swap = canonical_less(b, a);
    const double cross = swap ? mean_pairwise_distance(b, a) : mean_pairwise_distance(a, b);
    const double within = mean_pairwise_distance(a, a) + mean_pairwise_distance(b, b);
    return std::max(0.0, 2.0 * cross - within);
}

double mean_nearest_distance(const Matrix& points, const Matrix& reference) {
    if (points.cols() == 0 || reference.cols() == 0) throw InvalidArgument("mean_nearest_distance: empty input");
    double sum = 0.0;
    for (Eigen::Index i = 0; i < points.cols(); ++i)
        sum += std::sqrt((reference.colwise() - points.col(i)).colwise().squaredNorm().minCoeff());
    return sum / static_cast<double>(points.cols());
}

double mean_nearest_neighbor_spacing(const Matrix& reference) {
    if (reference.cols() < 2) throw InvalidArgument("mean_nearest_neighbor_spacing: need two points");
    double sum = 0.0;
    for (Eigen::Index i = 0; i < reference.cols(); ++i) {
        Eigen::RowVectorXd d2 = (reference.colwise() - reference.col(i)).colwise().squaredNorm();
        d2[i] = std::numeric_limits<double>::infinity();
        sum += std::sqrt(d2.minCoeff());
    }
    return sum / static_cast<double>(reference.cols());
}

double Theorem1Result::combined_stderr() const {
    return std::sqrt(fm_stderr * fm_stderr + pafm_stderr * pafm_stderr);
}

namespace {

// Welford accumulator for mean and standard error.
struct RunningMean {
    std::size_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double x) {
        ++n;
        const double delta = x - mean;
        mean += delta / static_cast<double>(n);
        m2 += delta * (x - mean);
    }
    double stderr_of_mean() const {
        return n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1) / static_cast<double>(n)) : 0.0;
    }
};

}  // namespace

Theorem1Result theorem1_mc_check(const Dataset& dataset, const SourceDistribution& source, const MlpModel& model,
                                 std::size_t n_draws, std::uint64_t seed, bool conditioned) {
    if (dataset.empty() || dataset.size() > 16)
        throw InvalidArgument("theorem1_mc_check: dataset must hold 1..16 points");
    if (n_draws < 2) throw InvalidArgument("theorem1_mc_check: need at least two draws");
    const Eigen::Index d = dataset.dim();
    const std::size_t n = dataset.size();
    constexpr std::size_t kChunk = 4096;

    SeededRng fm_rng = SeededRng::derive(seed, "theorem1-fm");
    SeededRng pafm_rng = SeededRng::derive(seed, "theorem1-pafm");
    RunningMean fm_acc;
    RunningMean pafm_acc;
    std::vector<double> log_post(n);

    Matrix z_t(d, static_cast<Eigen::Index>(kChunk));
    Matrix target(d, static_cast<Eigen::Index>(kChunk));
    std::vector<double> ts(kChunk);
    std::vector<Label> ys(kChunk);

    auto flush = [&](std::size_t count, RunningMean& acc) {
        const auto cols = static_cast<Eigen::Index>(count);
        const std::span<const Label> labels =
            model.shape().conditioned() ? std::span<const Label>(ys).first(count) : std::span<const Label>{};
        const Matrix pred = model.forward_batch(z_t.leftCols(cols), std::span<const double>(ts).first(count), labels);
        const Eigen::RowVectorXd loss = (pred - target.leftCols(cols)).colwise().squaredNorm();
        for (Eigen::Index c = 0; c < cols; ++c) acc.add(loss[c]);
    };

    for (std::size_t done = 0; done < n_draws; done += kChunk) {
        const std::size_t count = std::min(kChunk, n_draws - done);

        // Flow matching: the regression target is the generating datum's velocity.
        for (std::size_t k = 0; k < count; ++k) {
            const auto col = static_cast<Eigen::Index>(k);
            const std::size_t i = fm_rng.uniform_index(n);
            const Point eps = gaussian_sample(fm_rng, d, source.mean, source.std);
            const double t = fm_rng.uniform();
            z_t.col(col) = interpolate(dataset.point(i), eps, t);
            target.col(col) = eps - dataset.point(i);
            ts[k] = t;
            ys[k] = dataset.label(i);
        }
        flush(count, fm_acc);

        // Posterior side: realize z_t the same way, then resample the target
        // from the exact posterior p_t(z_j | z_t, y) by enumeration.
        for (std::size_t k = 0; k < count; ++k) {
            const auto col = static_cast<Eigen::Index>(k);
            const std::size_t i = pafm_rng.uniform_index(n);
            const Point eps = gaussian_sample(pafm_rng, d, source.mean, source.std);
            const double t = pafm_rng.uniform();
            const double u = pafm_rng.uniform();
            const Point zt = interpolate(dataset.point(i), eps, t);
            std::size_t j = i;
            if (t > 0.0) {
                double max = kNegInf;
                for (std::size_t c = 0; c < n; ++c) {
                    const bool compatible = !conditioned || dataset.label(c) == dataset.label(i);
                    log_post[c] = compatible ? log_path_likelihood(zt, dataset.point(c), t, source) : kNegInf;
                    max = std::max(max, log_post[c]);
                }
                double total = 0.0;
                for (double& lp : log_post) {
                    lp = std::exp(lp - max);
                    total += lp;
                }
                double cumulative = 0.0;
                const double threshold = u * total;
                for (std::size_t c = 0; c < n; ++c) {
                    if (log_post[c] == 0.0) continue;
                    cumulative += log_post[c];
                    j = c;
                    if (threshold < cumulative) break;
                }
            }
            z_t.col(col) = zt;
            target.col(col) = j == i ? Point(eps - dataset.point(i)) : Point((zt - dataset.point(j)) / t);
            ts[k] = t;
            ys[k] = dataset.label(i);
        }
        flush(count, pafm_acc);
    }

    Theorem1Result result;
    result.fm_mean = fm_acc.mean;
    result.pafm_mean = pafm_acc.mean;
    result.fm_stderr = fm_acc.stderr_of_mean();
    result.pafm_stderr = pafm_acc.stderr_of_mean();
    result.draws = n_draws;
    return result;
}

}  // namespace pafm
