#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pafm/dataset.hpp"
#include "pafm/model.hpp"
#include "pafm/path.hpp"
#include "pafm/posterior.hpp"

namespace pafm {

enum class Objective { FM, PAFM };
enum class Provider { Full, Knn, Perturbation, Augmentation };

Objective parse_objective(const std::string& name);
std::string to_string(Objective objective);
Provider parse_provider(const std::string& name);
std::string to_string(Provider provider);

struct TrainConfig {
    Objective objective = Objective::FM;
    Provider provider = Provider::Full;
    std::size_t k = 16;
    std::size_t steps = 50000;
    std::size_t batch_size = 256;
    double lr0 = 5e-4;
    std::uint64_t seed = 0;
    double t_eps = kDefaultTimeEps;
    double sigma = 0.05;
    /// Maximum rotation (radians) used by the augmentation provider.
    double augment_angle = 0.1;
    bool conditioned = false;
    /// 0 disables in-loop field evaluation.
    std::size_t eval_every = 1000;

    void validate() const;
};

/// Adam with bias correction.
struct OptimizerState {
    Eigen::VectorXd m;
    Eigen::VectorXd v;
    std::uint64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static OptimizerState zeros(Eigen::Index n);
};

void adam_step(OptimizerState& state, Eigen::VectorXd& params, const Eigen::VectorXd& gradient, double lr);

/// lr0 * (1 + cos(pi * step / total_steps)) / 2
double cosine_lr(std::size_t step, std::size_t total_steps, double lr0);

/// One training step's random draws, consumed in the fixed order
/// batch indices -> eps per element -> t per element.
struct BatchDraw {
    std::vector<std::size_t> indices;
    Matrix eps;  // d x B
    std::vector<double> t;
};

BatchDraw draw_batch(SeededRng& rng, const Dataset& dataset, const SourceDistribution& source,
                     std::size_t batch_size);

/// The regression batch for flow matching: target eps - z.
TrainingBatch fm_batch(const BatchDraw& draw, const Dataset& dataset, bool conditioned);

struct PafmBatch {
    TrainingBatch batch;
    std::vector<double> ess;
    double ess_mean = 1.0;
};

/// The regression batch for PAFM: per element the collapsed SNIS target over
/// its candidate pool. Consumes no randomness.
PafmBatch pafm_batch(const BatchDraw& draw, const Dataset& dataset, const PoolTable& pools,
                     const PosteriorSettings& settings, bool conditioned);

/// Gradient of the per-candidate form (1/B) sum_b sum_j w_bj |f_b - v_bj|^2,
/// accumulated candidate by candidate. Its gradient equals that of the
/// collapsed-target loss; the loss itself differs by a parameter-free constant.
LossAndGradient weighted_sum_gradient(const MlpModel& model, const BatchDraw& draw, const Dataset& dataset,
                                      const PoolTable& pools, const PosteriorSettings& settings, bool conditioned);

/// Trainable state: model plus optimizer.
struct Trainer {
    MlpModel model;
    OptimizerState optimizer;
};

/// Resumable training state: optimizer moments, step counter and the model.
std::vector<unsigned char> serialize_trainer(const Trainer& trainer);
Trainer deserialize_trainer(std::span<const unsigned char> bytes);

struct StepResult {
    double loss = 0.0;
    double ess_mean = 1.0;
    /// Max relative deviation between collapsed and weighted-sum gradients
    /// when the step was audited.
    std::optional<double> audit_error;
};

StepResult fm_batch_step(Trainer& trainer, const Dataset& dataset, const SourceDistribution& source,
                         SeededRng& rng, std::size_t batch_size, double lr, bool conditioned = false);

StepResult pafm_batch_step(Trainer& trainer, const Dataset& dataset, const PoolTable& pools,
                           const PosteriorSettings& settings, SeededRng& rng, std::size_t batch_size,
                           double lr, bool conditioned = false, bool audit = false);

/// Pools for every dataset index according to the configured provider.
/// knn_table is required for the kNN provider.
PoolTable build_pools(const Dataset& dataset, const TrainConfig& config, const KnnTable* knn_table = nullptr);

/// Throws ConfigError unless `pools` has one pool per index, each owning its index.
void check_pools(const Dataset& dataset, const PoolTable& pools);

struct MetricsRow {
    std::size_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double ess_mean = 1.0;
    std::optional<double> field_mse;
};

struct MetricsLog {
    std::vector<MetricsRow> rows;

    /// CSV with header step,loss,lr,ess_mean,field_mse.
    std::string to_csv() const;
    static MetricsLog from_csv(const std::string& text);
};

/// Evaluates the current model's velocity-field error; called after the
/// update of every eval_every-th step.
using FieldEvaluator = std::function<double(const MlpModel&)>;

/// Called after each step with the number of completed steps and the log so far.
using StepHook = std::function<void(std::size_t step, const Trainer&, const MetricsLog&)>;

struct TrainOptions {
    FieldEvaluator field_evaluator;
    StepHook on_step;
    /// Resume: previously completed steps and their log rows.
    std::optional<Trainer> resume_from;
    std::size_t start_step = 0;
    MetricsLog prior_log;
    /// PAFM steps with index divisible by this recompute the gradient in
    /// weighted-sum form and abort if it disagrees with the collapsed one.
    /// 0 disables the audit.
    std::size_t audit_every = 100;
    /// Stop once this many steps have completed (0 runs to config.steps).
    /// The learning-rate schedule still spans config.steps.
    std::size_t stop_step = 0;
};

struct TrainResult {
    Trainer trainer;
    MetricsLog log;
};

Trainer initial_trainer(const ModelShape& shape, std::uint64_t seed);

/// Runs config.steps steps. The random stream for step s is derived from
/// (seed, "train-step", s), so a resumed run continues identically.
/// Any step failure is rethrown as TrainingAborted with a model snapshot.
TrainResult train_loop(const TrainConfig& config, const Dataset& dataset, const SourceDistribution& source,
                       const ModelShape& shape, const PoolTable* pools, TrainOptions options = {});

}  // namespace pafm
