#include "pafm/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "binary_io.hpp"
#include "pafm/data.hpp"
#include "pafm/errors.hpp"

namespace pafm {

Objective parse_objective(const std::string& name) {
    if (name == "FM" || name == "fm") return Objective::FM;
    if (name == "PAFM" || name == "pafm") return Objective::PAFM;
    throw ConfigError("unknown objective '" + name + "' (expected FM or PAFM)");
}

std::string to_string(Objective objective) { return objective == Objective::FM ? "FM" : "PAFM"; }

Provider parse_provider(const std::string& name) {
    if (name == "full") return Provider::Full;
    if (name == "knn") return Provider::Knn;
    if (name == "perturbation") return Provider::Perturbation;
    if (name == "augmentation") return Provider::Augmentation;
    throw ConfigError("unknown provider '" + name + "' (expected full, knn, perturbation or augmentation)");
}

std::string to_string(Provider provider) {
    switch (provider) {
        case Provider::Full: return "full";
        case Provider::Knn: return "knn";
        case Provider::Perturbation: return "perturbation";
        case Provider::Augmentation: return "augmentation";
    }
    return "full";
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr0 > 0.0)) throw ConfigError("lr0 must be > 0");
    if (k < 1) throw ConfigError("K must be >= 1");
    if (!(t_eps > 0.0 && t_eps < 1.0)) throw ConfigError("t_eps must lie in (0, 1)");
    if (!(sigma >= 0.0)) throw ConfigError("sigma must be >= 0");
}

OptimizerState OptimizerState::zeros(Eigen::Index n) {
    OptimizerState s;
    s.m = Eigen::VectorXd::Zero(n);
    s.v = Eigen::VectorXd::Zero(n);
    return s;
}

void adam_step(OptimizerState& state, Eigen::VectorXd& params, const Eigen::VectorXd& gradient, double lr) {
    if (state.m.size() != params.size() || state.v.size() != params.size() || gradient.size() != params.size())
        throw InvalidArgument("adam_step: shape mismatch");
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (Eigen::Index k = 0; k < params.size(); ++k) {
        const double g = gradient[k];
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g;
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g;
        const double m_hat = state.m[k] / c1;
        const double v_hat = state.v[k] / c2;
        params[k] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr0) {
    if (total_steps == 0) return lr0;
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

BatchDraw draw_batch(SeededRng& rng, const Dataset& dataset, const SourceDistribution& source,
                     std::size_t batch_size) {
    if (dataset.empty()) throw InvalidArgument("draw_batch: empty dataset");
    const Eigen::Index d = dataset.dim();
    if (source.dim() != d) throw InvalidArgument("draw_batch: source dimension differs from the data");
    BatchDraw draw;
    draw.indices.resize(batch_size);
    for (auto& i : draw.indices) i = rng.uniform_index(dataset.size());
    draw.eps.resize(d, static_cast<Eigen::Index>(batch_size));
    for (std::size_t b = 0; b < batch_size; ++b)
        draw.eps.col(static_cast<Eigen::Index>(b)) = gaussian_sample(rng, d, source.mean, source.std);
    draw.t.resize(batch_size);
    for (auto& t : draw.t) t = rng.uniform();
    return draw;
}

namespace {

TrainingBatch empty_batch(const BatchDraw& draw, const Dataset& dataset, bool conditioned) {
    TrainingBatch batch;
    const auto n = static_cast<Eigen::Index>(draw.indices.size());
    batch.z_t.resize(dataset.dim(), n);
    batch.target.resize(dataset.dim(), n);
    batch.t = draw.t;
    if (conditioned)
        for (std::size_t i : draw.indices) batch.y.push_back(dataset.label(i));
    return batch;
}

}  // namespace

TrainingBatch fm_batch(const BatchDraw& draw, const Dataset& dataset, bool conditioned) {
    TrainingBatch batch = empty_batch(draw, dataset, conditioned);
    for (std::size_t b = 0; b < draw.indices.size(); ++b) {
        const auto col = static_cast<Eigen::Index>(b);
        const auto z = dataset.point(draw.indices[b]);
        batch.z_t.col(col) = interpolate(z, draw.eps.col(col), draw.t[b]);
        batch.target.col(col) = draw.eps.col(col) - z;
    }
    return batch;
}

PafmBatch pafm_batch(const BatchDraw& draw, const Dataset& dataset, const PoolTable& pools,
                     const PosteriorSettings& settings, bool conditioned) {
    PafmBatch out;
    out.batch = empty_batch(draw, dataset, conditioned);
    out.ess.resize(draw.indices.size());
    double ess_sum = 0.0;
    for (std::size_t b = 0; b < draw.indices.size(); ++b) {
        const auto col = static_cast<Eigen::Index>(b);
        const std::size_t i = draw.indices[b];
        if (i >= pools.size()) throw ConfigError("no candidate pool for index " + std::to_string(i));
        const PathPoint point = make_path_point(dataset.point(i), draw.eps.col(col), draw.t[b], i);
        const Label y_i = conditioned ? dataset.label(i) : kUnconditional;
        const WeightedTarget target = snis_weights(point, y_i, pools[i], dataset, settings);
        out.batch.z_t.col(col) = point.z_t;
        out.batch.target.col(col) = target.collapsed_velocity;
        out.ess[b] = target.ess;
        ess_sum += target.ess;
    }
    out.ess_mean = ess_sum / static_cast<double>(draw.indices.size());
    return out;
}

LossAndGradient weighted_sum_gradient(const MlpModel& model, const BatchDraw& draw, const Dataset& dataset,
                                      const PoolTable& pools, const PosteriorSettings& settings, bool conditioned) {
    const std::size_t n = draw.indices.size();
    if (n == 0) throw InvalidArgument("weighted_sum_gradient: empty batch");
    TrainingBatch batch = empty_batch(draw, dataset, conditioned);
    std::vector<PathPoint> points;
    points.reserve(n);
    for (std::size_t b = 0; b < n; ++b) {
        const std::size_t i = draw.indices[b];
        if (i >= pools.size()) throw ConfigError("no candidate pool for index " + std::to_string(i));
        points.push_back(make_path_point(dataset.point(i), draw.eps.col(static_cast<Eigen::Index>(b)), draw.t[b], i));
        batch.z_t.col(static_cast<Eigen::Index>(b)) = points.back().z_t;
    }
    const ForwardPass pass = model.forward_pass(batch.z_t, batch.t, batch.y);
    Matrix output_grad = Matrix::Zero(dataset.dim(), static_cast<Eigen::Index>(n));
    const double scale = 2.0 / static_cast<double>(n);
    LossAndGradient out;
    for (std::size_t b = 0; b < n; ++b) {
        const auto col = static_cast<Eigen::Index>(b);
        const std::size_t i = draw.indices[b];
        const Label y_i = conditioned ? dataset.label(i) : kUnconditional;
        const WeightedTarget wt = snis_weights(points[b], y_i, pools[i], dataset, settings);
        for (std::size_t k = 0; k < wt.weights.size(); ++k) {
            if (wt.weights[k] == 0.0) continue;
            const Point residual = pass.output.col(col) - candidate_velocity(points[b], pools[i], k, dataset);
            out.loss += wt.weights[k] * residual.squaredNorm() / static_cast<double>(n);
            output_grad.col(col) += (scale * wt.weights[k]) * residual;
        }
    }
    out.gradient = model.backprop(pass, output_grad);
    return out;
}

StepResult fm_batch_step(Trainer& trainer, const Dataset& dataset, const SourceDistribution& source,
                         SeededRng& rng, std::size_t batch_size, double lr, bool conditioned) {
    const BatchDraw draw = draw_batch(rng, dataset, source, batch_size);
    const TrainingBatch batch = fm_batch(draw, dataset, conditioned);
    const LossAndGradient lg = backward(trainer.model, batch);
    adam_step(trainer.optimizer, trainer.model.parameters(), lg.gradient, lr);
    return StepResult{lg.loss, 1.0, std::nullopt};
}

StepResult pafm_batch_step(Trainer& trainer, const Dataset& dataset, const PoolTable& pools,
                           const PosteriorSettings& settings, SeededRng& rng, std::size_t batch_size,
                           double lr, bool conditioned, bool audit) {
    const BatchDraw draw = draw_batch(rng, dataset, settings.source, batch_size);
    const PafmBatch pb = pafm_batch(draw, dataset, pools, settings, conditioned);
    const LossAndGradient lg = backward(trainer.model, pb.batch);
    StepResult result{lg.loss, pb.ess_mean, std::nullopt};
    if (audit) {
        const LossAndGradient ws = weighted_sum_gradient(trainer.model, draw, dataset, pools, settings, conditioned);
        const double scale = std::max(lg.gradient.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
        result.audit_error = (lg.gradient - ws.gradient).cwiseAbs().maxCoeff() / scale;
    }
    adam_step(trainer.optimizer, trainer.model.parameters(), lg.gradient, lr);
    return result;
}

namespace {
constexpr std::string_view kTrainerMagic = "PAFMOPT1";
}

std::vector<unsigned char> serialize_trainer(const Trainer& trainer) {
    const OptimizerState& o = trainer.optimizer;
    detail::ByteWriter w;
    w.raw(kTrainerMagic);
    w.u64(o.step);
    w.f64(o.beta1);
    w.f64(o.beta2);
    w.f64(o.eps);
    w.u64(static_cast<std::uint64_t>(o.m.size()));
    for (Eigen::Index k = 0; k < o.m.size(); ++k) w.f64(o.m[k]);
    for (Eigen::Index k = 0; k < o.v.size(); ++k) w.f64(o.v[k]);
    const auto model = serialize_model(trainer.model);
    w.u64(model.size());
    w.raw(std::string_view(reinterpret_cast<const char*>(model.data()), model.size()));
    return w.take();
}

Trainer deserialize_trainer(std::span<const unsigned char> bytes) {
    detail::ByteReader r(bytes);
    if (r.raw(kTrainerMagic.size()) != kTrainerMagic) throw ParseError(0, "not a trainer checkpoint");
    OptimizerState o;
    o.step = r.u64();
    o.beta1 = r.f64();
    o.beta2 = r.f64();
    o.eps = r.f64();
    const auto n = static_cast<Eigen::Index>(r.u64());
    o.m.resize(n);
    o.v.resize(n);
    for (Eigen::Index k = 0; k < n; ++k) o.m[k] = r.f64();
    for (Eigen::Index k = 0; k < n; ++k) o.v[k] = r.f64();
    const std::string model = r.raw(r.u64());
    if (!r.at_end()) throw ParseError(0, "trailing bytes after trainer checkpoint");
    MlpModel m = deserialize_model(
        std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(model.data()), model.size()));
    if (m.parameters().size() != n) throw ParseError(0, "optimizer state does not match the model");
    return Trainer{std::move(m), std::move(o)};
}

PoolTable build_pools(const Dataset& dataset, const TrainConfig& config, const KnnTable* knn_table) {
    PoolTable pools;
    pools.reserve(dataset.size());
    Point centroid;
    if (config.provider == Provider::Augmentation) centroid = dataset.points.rowwise().mean();
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        switch (config.provider) {
            case Provider::Full:
                pools.push_back(
                    provider_full_support(dataset, i, config.conditioned ? dataset.label(i) : kUnconditional));
                break;
            case Provider::Knn:
                if (knn_table == nullptr) throw ConfigError("knn provider needs a candidates table");
                pools.push_back(provider_knn(dataset, *knn_table, i, config.k));
                break;
            case Provider::Perturbation: {
                SeededRng rng = SeededRng::derive(config.seed, "perturbation-pool", i);
                pools.push_back(provider_perturbation(dataset, i, config.k, config.sigma, rng));
                break;
            }
            case Provider::Augmentation:
                pools.push_back(provider_augmentation(
                    dataset, i, config.k,
                    make_rotation_augmenter(centroid, config.augment_angle, mix64(config.seed ^ mix64(i)))));
                break;
        }
    }
    return pools;
}

void check_pools(const Dataset& dataset, const PoolTable& pools) {
    if (pools.size() != dataset.size())
        throw ConfigError("candidate pools cover " + std::to_string(pools.size()) + " of " +
                          std::to_string(dataset.size()) + " dataset indices");
    for (std::size_t i = 0; i < pools.size(); ++i) {
        if (pools[i].owner != i) throw ConfigError("pool " + std::to_string(i) + " has the wrong owner");
        if (pools[i].owner_slot() == pools[i].size())
            throw ConfigError("pool " + std::to_string(i) + " does not contain its owner");
        for (std::uint32_t j : pools[i].indices)
            if (j >= dataset.size()) throw ConfigError("pool " + std::to_string(i) + " references a missing index");
    }
}

std::string MetricsLog::to_csv() const {
    std::string out = "step,loss,lr,ess_mean,field_mse\n";
    for (const auto& r : rows) {
        out += std::to_string(r.step);
        out += ',' + format_double(r.loss);
        out += ',' + format_double(r.lr);
        out += ',' + format_double(r.ess_mean);
        out += ',';
        if (r.field_mse) out += format_double(*r.field_mse);
        out += '\n';
    }
    return out;
}

MetricsLog MetricsLog::from_csv(const std::string& text) {
    MetricsLog log;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line) || line.rfind("step,loss,lr,ess_mean,field_mse", 0) != 0)
        throw ParseError(1, "metrics log must start with 'step,loss,lr,ess_mean,field_mse'");
    ++lineno;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string cell[5];
        for (int c = 0; c < 5; ++c) std::getline(fields, cell[c], ',');
        try {
            MetricsRow row;
            row.step = std::stoull(cell[0]);
            row.loss = std::stod(cell[1]);
            row.lr = std::stod(cell[2]);
            row.ess_mean = std::stod(cell[3]);
            if (!cell[4].empty()) row.field_mse = std::stod(cell[4]);
            log.rows.push_back(row);
        } catch (const std::exception&) {
            throw ParseError(lineno, "malformed metrics row");
        }
    }
    return log;
}

Trainer initial_trainer(const ModelShape& shape, std::uint64_t seed) {
    MlpModel model = MlpModel::initialized(shape, seed);
    OptimizerState opt = OptimizerState::zeros(model.parameters().size());
    return Trainer{std::move(model), std::move(opt)};
}

namespace {
constexpr double kAuditTolerance = 1e-8;
}

TrainResult train_loop(const TrainConfig& config, const Dataset& dataset, const SourceDistribution& source,
                       const ModelShape& shape, const PoolTable* pools, TrainOptions options) {
    config.validate();
    dataset.validate();
    if (dataset.empty()) throw ConfigError("training needs a non-empty dataset");
    if (config.objective == Objective::PAFM) {
        if (pools == nullptr) throw ConfigError("PAFM training needs candidate pools");
        check_pools(dataset, *pools);
    }
    if (shape.dim != dataset.dim()) throw ConfigError("model dimension differs from the data dimension");

    TrainResult result{options.resume_from ? std::move(*options.resume_from) : initial_trainer(shape, config.seed),
                       std::move(options.prior_log)};
    const PosteriorSettings settings{source, config.t_eps};

    const std::size_t end = options.stop_step > 0 ? std::min(options.stop_step, config.steps) : config.steps;
    for (std::size_t s = options.start_step; s < end; ++s) {
        SeededRng rng = SeededRng::derive(config.seed, "train-step", s);
        const double lr = cosine_lr(s, config.steps, config.lr0);
        StepResult step;
        try {
            step = config.objective == Objective::FM
                       ? fm_batch_step(result.trainer, dataset, source, rng, config.batch_size, lr, config.conditioned)
                       : pafm_batch_step(result.trainer, dataset, *pools, settings, rng, config.batch_size, lr,
                                         config.conditioned,
                                         options.audit_every > 0 && s % options.audit_every == 0);
            if (step.audit_error && !(*step.audit_error <= kAuditTolerance))
                throw InternalInvariant("collapsed and weighted-sum gradients disagree (relative error " +
                                        std::to_string(*step.audit_error) + ")");
            if (!result.trainer.model.parameters().allFinite())
                throw NumericFailure(s, "non-finite parameter after the optimizer step");
        } catch (const TrainingAborted&) {
            throw;
        } catch (const std::exception& e) {
            throw TrainingAborted(s + 1, serialize_model(result.trainer.model), e.what());
        }

        MetricsRow row{s + 1, step.loss, lr, step.ess_mean, std::nullopt};
        if (config.eval_every > 0 && options.field_evaluator && (s + 1) % config.eval_every == 0)
            row.field_mse = options.field_evaluator(result.trainer.model);
        result.log.rows.push_back(row);
        if (options.on_step) options.on_step(s + 1, result.trainer, result.log);
    }
    return result;
}

}  // namespace pafm
