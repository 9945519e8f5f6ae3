#include "pafm/model.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "binary_io.hpp"
#include "pafm/errors.hpp"

namespace pafm {

namespace {

constexpr std::string_view kCheckpointMagic = "PAFMMLP1";

using RowMajorMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace

TimeEmbedding::TimeEmbedding(int width, double omega_max) : width_(width) {
    if (width < 4 || width % 2 != 0) throw InvalidArgument("time embedding width must be even and >= 4");
    const int half = width / 2;
    frequencies_.resize(static_cast<std::size_t>(half));
    for (int k = 0; k < half; ++k)
        frequencies_[static_cast<std::size_t>(k)] =
            omega_max * std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(half - 1));
}

void TimeEmbedding::embed(double t, std::span<double> out) const {
    for (std::size_t k = 0; k < frequencies_.size(); ++k) {
        const double phase = t * frequencies_[k];
        out[2 * k] = std::sin(phase);
        out[2 * k + 1] = std::cos(phase);
    }
}

Eigen::VectorXd TimeEmbedding::operator()(double t) const {
    Eigen::VectorXd out(width_);
    embed(t, std::span<double>(out.data(), static_cast<std::size_t>(width_)));
    return out;
}

Eigen::Index ModelShape::param_count() const noexcept {
    Eigen::Index n = 0;
    for (int l = 0; l < layers; ++l) n += layer_out(l) * layer_in(l) + layer_out(l);
    return n;
}

void ModelShape::validate() const {
    if (dim < 1 || hidden < 1 || embed < 4 || embed % 2 != 0 || num_classes < 0 || layers < 2)
        throw InvalidArgument("invalid model shape");
}

MlpModel::MlpModel(ModelShape shape, double omega_max)
    : shape_(shape), embedding_(shape.embed, omega_max) {
    shape_.validate();
    params_ = Eigen::VectorXd::Zero(shape_.param_count());
}

MlpModel MlpModel::initialized(ModelShape shape, std::uint64_t seed, double omega_max) {
    MlpModel model(shape, omega_max);
    SeededRng rng = SeededRng::derive(seed, "model-init");
    for (int l = 0; l < shape.layers; ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(shape.layer_in(l)));
        const Eigen::Index off = model.weight_offset(l);
        const Eigen::Index count = shape.layer_out(l) * shape.layer_in(l);
        for (Eigen::Index k = 0; k < count; ++k) model.params_[off + k] = bound * (2.0 * rng.uniform() - 1.0);
    }
    return model;
}

Eigen::Index MlpModel::weight_offset(int layer) const {
    Eigen::Index off = 0;
    for (int l = 0; l < layer; ++l) off += shape_.layer_out(l) * shape_.layer_in(l) + shape_.layer_out(l);
    return off;
}

Eigen::Index MlpModel::bias_offset(int layer) const {
    return weight_offset(layer) + shape_.layer_out(layer) * shape_.layer_in(layer);
}

MlpModel::WeightMap MlpModel::weight(int layer) const {
    return WeightMap(params_.data() + weight_offset(layer), shape_.layer_out(layer), shape_.layer_in(layer));
}

MlpModel::BiasMap MlpModel::bias(int layer) const {
    return BiasMap(params_.data() + bias_offset(layer), shape_.layer_out(layer));
}

Matrix MlpModel::build_input(const Eigen::Ref<const Matrix>& z_t, std::span<const double> t,
                             std::span<const Label> y) const {
    const Eigen::Index batch = z_t.cols();
    if (z_t.rows() != shape_.dim)
        throw InvalidArgument("forward: input dimension " + std::to_string(z_t.rows()) + ", model expects " +
                              std::to_string(shape_.dim));
    if (static_cast<Eigen::Index>(t.size()) != batch) throw InvalidArgument("forward: t/batch size mismatch");
    if (shape_.conditioned() && static_cast<Eigen::Index>(y.size()) != batch)
        throw InvalidArgument("forward: conditioned model needs one label per element");

    Matrix input = Matrix::Zero(shape_.input_width(), batch);
    input.topRows(shape_.dim) = z_t;
    for (Eigen::Index b = 0; b < batch; ++b) {
        const double tb = t[static_cast<std::size_t>(b)];
        if (!(tb >= 0.0 && tb <= 1.0)) throw InvalidArgument("forward: t must lie in [0, 1]");
        embedding_.embed(tb, std::span<double>(input.col(b).data() + shape_.dim,
                                               static_cast<std::size_t>(shape_.embed)));
        if (shape_.conditioned()) {
            const Label label = y[static_cast<std::size_t>(b)];
            if (label < 0 || label >= shape_.num_classes)
                throw InvalidArgument("forward: label " + std::to_string(label) + " outside the model's classes");
            input(shape_.dim + shape_.embed + label, b) = 1.0;
        }
    }
    return input;
}

ForwardPass MlpModel::forward_pass(const Eigen::Ref<const Matrix>& z_t, std::span<const double> t,
                                   std::span<const Label> y) const {
    ForwardPass pass;
    pass.input = build_input(z_t, t, y);
    const int hidden_layers = shape_.layers - 1;
    pass.pre.resize(static_cast<std::size_t>(hidden_layers));
    pass.gates.resize(static_cast<std::size_t>(hidden_layers));
    pass.activations.resize(static_cast<std::size_t>(hidden_layers));
    for (int l = 0; l < hidden_layers; ++l) {
        const auto k = static_cast<std::size_t>(l);
        const Matrix& prev = l == 0 ? pass.input : pass.activations[k - 1];
        Matrix& pre = pass.pre[k];
        pre.noalias() = weight(l) * prev;
        pre.colwise() += bias(l);
        pass.gates[k] = ((-pre.array()).exp() + 1.0).inverse().matrix();
        pass.activations[k] = pre.cwiseProduct(pass.gates[k]);
    }
    const int last = shape_.layers - 1;
    pass.output.noalias() = weight(last) * pass.activations.back();
    pass.output.colwise() += bias(last);
    return pass;
}

Matrix MlpModel::forward_batch(const Eigen::Ref<const Matrix>& z_t, std::span<const double> t,
                               std::span<const Label> y) const {
    return forward_pass(z_t, t, y).output;
}

Point MlpModel::forward(const PointRef& z_t, double t, Label y) const {
    const Matrix col = z_t;
    const double ts[1] = {t};
    const Label ys[1] = {y};
    return forward_batch(col, ts, shape_.conditioned() ? std::span<const Label>(ys) : std::span<const Label>{})
        .col(0);
}

Eigen::VectorXd MlpModel::backprop(const ForwardPass& pass, const Eigen::Ref<const Matrix>& output_grad) const {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(params_.size());
    Matrix delta = output_grad;
    for (int l = shape_.layers - 1; l >= 0; --l) {
        const Matrix& prev = l == 0 ? pass.input : pass.activations[static_cast<std::size_t>(l - 1)];
        RowMajorMap g_w(grad.data() + weight_offset(l), shape_.layer_out(l), shape_.layer_in(l));
        g_w.noalias() = delta * prev.transpose();
        grad.segment(bias_offset(l), shape_.layer_out(l)) = delta.rowwise().sum();
        if (l == 0) break;
        const Matrix upstream = weight(l).transpose() * delta;
        const auto& pre = pass.pre[static_cast<std::size_t>(l - 1)].array();
        const auto& gate = pass.gates[static_cast<std::size_t>(l - 1)].array();
        // d/dx [x s(x)] = s(x) (1 + x (1 - s(x)))
        delta = (upstream.array() * gate * (1.0 + pre * (1.0 - gate))).matrix();
    }
    return grad;
}

LossAndGradient backward(const MlpModel& model, const TrainingBatch& batch) {
    const std::size_t n = batch.size();
    if (n == 0) throw InvalidArgument("backward: empty batch");
    if (static_cast<std::size_t>(batch.target.cols()) != n || batch.target.rows() != model.shape().dim)
        throw InvalidArgument("backward: target shape mismatch");
    const ForwardPass pass = model.forward_pass(batch.z_t, batch.t, batch.y);
    for (std::size_t b = 0; b < n; ++b)
        if (!pass.output.col(static_cast<Eigen::Index>(b)).allFinite())
            throw NumericFailure(b, "backward: non-finite prediction at batch element " + std::to_string(b));

    const Matrix residual = pass.output - batch.target;
    LossAndGradient out;
    out.loss = residual.squaredNorm() / static_cast<double>(n);
    out.gradient = model.backprop(pass, (2.0 / static_cast<double>(n)) * residual);
    return out;
}

std::vector<unsigned char> serialize_model(const MlpModel& model) {
    const ModelShape& s = model.shape();
    detail::ByteWriter w;
    w.raw(kCheckpointMagic);
    w.u32(static_cast<std::uint32_t>(s.dim));
    w.u32(static_cast<std::uint32_t>(s.hidden));
    w.u32(static_cast<std::uint32_t>(s.embed));
    w.u32(s.conditioned() ? 1u : 0u);
    w.u32(static_cast<std::uint32_t>(s.num_classes));
    w.u32(static_cast<std::uint32_t>(s.layers));
    w.f64(model.time_embedding().frequencies().front());
    w.u64(static_cast<std::uint64_t>(model.parameters().size()));
    for (Eigen::Index k = 0; k < model.parameters().size(); ++k) w.f64(model.parameters()[k]);
    return w.take();
}

MlpModel deserialize_model(std::span<const unsigned char> bytes) {
    detail::ByteReader r(bytes);
    if (r.raw(kCheckpointMagic.size()) != kCheckpointMagic) throw ParseError(0, "not a model checkpoint");
    ModelShape s;
    s.dim = r.u32();
    s.hidden = static_cast<int>(r.u32());
    s.embed = static_cast<int>(r.u32());
    const std::uint32_t conditioned = r.u32();
    s.num_classes = static_cast<int>(r.u32());
    s.layers = static_cast<int>(r.u32());
    const double omega_max = r.f64();
    if ((conditioned != 0) != s.conditioned()) throw ParseError(0, "conditioned flag disagrees with class count");
    MlpModel model(s, omega_max);
    const std::uint64_t count = r.u64();
    if (count != static_cast<std::uint64_t>(s.param_count()))
        throw ParseError(0, "parameter count does not match the recorded shape");
    for (Eigen::Index k = 0; k < s.param_count(); ++k) model.parameters()[k] = r.f64();
    if (!r.at_end()) throw ParseError(0, "trailing bytes after parameters");
    return model;
}

void save_model(const std::filesystem::path& path, const MlpModel& model) {
    const auto bytes = serialize_model(model);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

MlpModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_model(bytes);
}

}  // namespace pafm
