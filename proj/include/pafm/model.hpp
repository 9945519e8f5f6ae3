#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "pafm/dataset.hpp"
#include "pafm/numeric.hpp"

namespace pafm {

/// Sinusoidal time features: interleaved [sin(t w_k), cos(t w_k)] with a
/// geometric frequency ladder w_k = w_max * 10000^(-k / (width/2 - 1)).
class TimeEmbedding {
public:
    static constexpr double kDefaultOmegaMax = 2.0 * 3.14159265358979323846 * 50.0;

    explicit TimeEmbedding(int width = 32, double omega_max = kDefaultOmegaMax);

    int width() const noexcept { return width_; }
    const std::vector<double>& frequencies() const noexcept { return frequencies_; }

    void embed(double t, std::span<double> out) const;
    Eigen::VectorXd operator()(double t) const;

private:
    int width_;
    std::vector<double> frequencies_;
};

struct ModelShape {
    Eigen::Index dim = 2;
    int hidden = 128;
    int embed = 32;
    /// 0 for unconditional models; otherwise width of the one-hot label block.
    int num_classes = 0;
    /// Number of affine layers (SiLU between them, identity at the output).
    int layers = 4;

    bool conditioned() const noexcept { return num_classes > 0; }
    Eigen::Index input_width() const noexcept { return dim + embed + num_classes; }
    Eigen::Index layer_in(int l) const noexcept { return l == 0 ? input_width() : hidden; }
    Eigen::Index layer_out(int l) const noexcept { return l == layers - 1 ? dim : hidden; }
    Eigen::Index param_count() const noexcept;
    void validate() const;

    friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

/// Activations of one batched forward pass, kept for backpropagation.
struct ForwardPass {
    Matrix input;                    // input_width x B
    std::vector<Matrix> pre;         // pre-activations of the hidden layers
    std::vector<Matrix> gates;       // sigmoid of the pre-activations
    std::vector<Matrix> activations; // SiLU outputs of the hidden layers
    Matrix output;                   // d x B
};

/// Time-conditioned velocity network f(z_t | t, y): an MLP over the
/// concatenation [z_t, time embedding, one-hot label].
///
/// Parameters live in one flat vector, layer by layer: the weight matrix
/// (out x in, row-major) followed by its bias.
class MlpModel {
public:
    explicit MlpModel(ModelShape shape, double omega_max = TimeEmbedding::kDefaultOmegaMax);

    /// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
    static MlpModel initialized(ModelShape shape, std::uint64_t seed,
                                double omega_max = TimeEmbedding::kDefaultOmegaMax);

    const ModelShape& shape() const noexcept { return shape_; }
    const TimeEmbedding& time_embedding() const noexcept { return embedding_; }
    const Eigen::VectorXd& parameters() const noexcept { return params_; }
    Eigen::VectorXd& parameters() noexcept { return params_; }

    using WeightMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using BiasMap = Eigen::Map<const Eigen::VectorXd>;
    WeightMap weight(int layer) const;
    BiasMap bias(int layer) const;
    /// Offsets of layer `l`'s weight block and bias block in the flat vector.
    Eigen::Index weight_offset(int layer) const;
    Eigen::Index bias_offset(int layer) const;

    Point forward(const PointRef& z_t, double t, Label y) const;
    /// z_t is d x B; t and y have B entries (y may be empty for unconditional models).
    Matrix forward_batch(const Eigen::Ref<const Matrix>& z_t, std::span<const double> t,
                         std::span<const Label> y) const;
    ForwardPass forward_pass(const Eigen::Ref<const Matrix>& z_t, std::span<const double> t,
                             std::span<const Label> y) const;

    /// Gradient of a loss w.r.t. the parameters given dLoss/dOutput.
    Eigen::VectorXd backprop(const ForwardPass& pass, const Eigen::Ref<const Matrix>& output_grad) const;

private:
    Matrix build_input(const Eigen::Ref<const Matrix>& z_t, std::span<const double> t,
                       std::span<const Label> y) const;

    ModelShape shape_;
    TimeEmbedding embedding_;
    Eigen::VectorXd params_;
};

/// Regression batch: targets are velocities (d x B).
struct TrainingBatch {
    Matrix z_t;
    std::vector<double> t;
    std::vector<Label> y;
    Matrix target;

    std::size_t size() const noexcept { return t.size(); }
};

struct LossAndGradient {
    double loss = 0.0;
    Eigen::VectorXd gradient;
};

/// loss = mean over the batch of |f(z_t | t, y) - target|^2, and its exact
/// gradient. Throws NumericFailure (carrying the batch index) on a non-finite
/// prediction.
LossAndGradient backward(const MlpModel& model, const TrainingBatch& batch);

// Checkpoints: little-endian header followed by the flat parameter vector.
// Layout is documented in docs/file_formats.md.
std::vector<unsigned char> serialize_model(const MlpModel& model);
MlpModel deserialize_model(std::span<const unsigned char> bytes);
void save_model(const std::filesystem::path& path, const MlpModel& model);
MlpModel load_model(const std::filesystem::path& path);

}  // namespace pafm
