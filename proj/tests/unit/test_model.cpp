#include <cmath>
#include <limits>
#include <numbers>

#include "doctest.h"
#include "helpers.hpp"
#include "pafm/errors.hpp"
#include "pafm/model.hpp"

using namespace pafm;

namespace {

TrainingBatch random_batch(std::uint64_t seed, const ModelShape& shape, std::size_t n) {
    SeededRng rng = SeededRng::derive(seed, "test-batch");
    TrainingBatch batch;
    batch.z_t.resize(shape.dim, static_cast<Eigen::Index>(n));
    batch.target.resize(shape.dim, static_cast<Eigen::Index>(n));
    for (std::size_t b = 0; b < n; ++b) {
        for (Eigen::Index c = 0; c < shape.dim; ++c) {
            batch.z_t(c, static_cast<Eigen::Index>(b)) = rng.normal();
            batch.target(c, static_cast<Eigen::Index>(b)) = rng.normal();
        }
        batch.t.push_back(rng.uniform());
        if (shape.conditioned()) batch.y.push_back(static_cast<Label>(rng.uniform_index(shape.num_classes)));
    }
    return batch;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("time embedding examples") {
    const TimeEmbedding emb(32);
    const Eigen::VectorXd at_zero = emb(0.0);
    REQUIRE(at_zero.size() == 32);
    for (int k = 0; k < 16; ++k) {
        CHECK(at_zero[2 * k] == 0.0);
        CHECK(at_zero[2 * k + 1] == 1.0);
    }
    const Eigen::VectorXd at_half = emb(0.37);
    for (int k = 0; k < 16; ++k)
        CHECK(at_half[2 * k] * at_half[2 * k] + at_half[2 * k + 1] * at_half[2 * k + 1] ==
              doctest::Approx(1.0).epsilon(1e-14));
    const auto& w = emb.frequencies();
    CHECK(w.front() == doctest::Approx(2.0 * std::numbers::pi * 50.0).epsilon(1e-15));
    CHECK(w.back() == doctest::Approx(2.0 * std::numbers::pi * 50.0 / 10000.0).epsilon(1e-12));
    for (std::size_t k = 1; k < w.size(); ++k) CHECK(w[k] < w[k - 1]);
    CHECK_THROWS_AS(TimeEmbedding(7), InvalidArgument);
}

TEST_CASE("parameter count matches the layer formula") {
    const ModelShape shape;
    const Eigen::Index in = 2 + 32;
    const Eigen::Index expected = (in * 128 + 128) + 2 * (128 * 128 + 128) + (128 * 2 + 2);
    CHECK(shape.param_count() == expected);
    CHECK(shape.param_count() == 37762);
    CHECK(MlpModel(shape).parameters().size() == expected);
    ModelShape cond = shape;
    cond.num_classes = 2;
    CHECK(cond.param_count() == expected + 2 * 128);
}

TEST_CASE("initialization bounds and determinism") {
    const ModelShape shape;
    const MlpModel a = MlpModel::initialized(shape, 3);
    const MlpModel b = MlpModel::initialized(shape, 3);
    const MlpModel c = MlpModel::initialized(shape, 4);
    CHECK(a.parameters() == b.parameters());
    CHECK(a.parameters() != c.parameters());
    for (int l = 0; l < shape.layers; ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(shape.layer_in(l)));
        CHECK(a.weight(l).cwiseAbs().maxCoeff() <= bound);
        CHECK(a.weight(l).cwiseAbs().maxCoeff() > 0.9 * bound);
        CHECK(a.bias(l).isZero(0.0));
    }
}

TEST_CASE("forward examples") {
    ModelShape shape;
    shape.hidden = 16;
    const MlpModel zero(shape);
    const Point z{{0.4, -0.3}};
    CHECK(zero.forward(z, 0.5, kUnconditional) == Point::Zero(2));

    MlpModel model = testing::random_model(5, shape);
    const Point base = model.forward(z, 0.5, kUnconditional);
    CHECK(model.forward(z, 0.5, kUnconditional) == base);
    // Scaling the last layer (weights and bias) scales the output.
    const int last = shape.layers - 1;
    const Eigen::Index begin = model.weight_offset(last);
    for (Eigen::Index k = begin; k < model.parameters().size(); ++k) model.parameters()[k] *= 2.0;
    CHECK((model.forward(z, 0.5, kUnconditional) - 2.0 * base).cwiseAbs().maxCoeff() < 1e-14);

    CHECK_THROWS_AS(model.forward(Point::Zero(3), 0.5, kUnconditional), InvalidArgument);
    CHECK_THROWS_AS(model.forward(z, 1.5, kUnconditional), InvalidArgument);
}

TEST_CASE("batched forward matches the single-point forward") {
    ModelShape shape;
    shape.hidden = 24;
    shape.num_classes = 3;
    const MlpModel model = testing::random_model(8, shape);
    const TrainingBatch batch = random_batch(2, shape, 20);
    const Matrix out = model.forward_batch(batch.z_t, batch.t, batch.y);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const Point single = model.forward(batch.z_t.col(static_cast<Eigen::Index>(b)), batch.t[b], batch.y[b]);
        CHECK((out.col(static_cast<Eigen::Index>(b)) - single).cwiseAbs().maxCoeff() < 1e-14);
    }
    std::vector<Label> bad = batch.y;
    bad[0] = 3;
    CHECK_THROWS_AS(model.forward_batch(batch.z_t, batch.t, bad), InvalidArgument);
}

TEST_CASE("conditioned labels act through a one-hot block") {
    ModelShape shape;
    shape.hidden = 8;
    shape.num_classes = 2;
    MlpModel model(shape);
    // Only the label-1 input column of the first layer is non-zero, and the
    // output layer reads hidden unit 0.
    const Eigen::Index in = shape.input_width();
    model.parameters()[model.weight_offset(0) + 0 * in + (in - 1)] = 1.0;
    model.parameters()[model.weight_offset(shape.layers - 1) + 0] = 1.0;
    for (int l = 1; l < shape.layers - 1; ++l)
        model.parameters()[model.weight_offset(l) + 0] = 1.0;
    const Point z{{0.1, 0.2}};
    CHECK(model.forward(z, 0.3, 0) == Point::Zero(2));
    CHECK(model.forward(z, 0.3, 1)[0] > 0.0);
}

TEST_CASE("loss is zero at the model output and |v|^2 for a zero model") {
    ModelShape shape;
    shape.hidden = 16;
    const MlpModel model = testing::random_model(9, shape);
    TrainingBatch batch = random_batch(4, shape, 12);
    batch.target = model.forward_batch(batch.z_t, batch.t, batch.y);
    const LossAndGradient exact = backward(model, batch);
    CHECK(exact.loss == 0.0);
    CHECK(exact.gradient.isZero(0.0));

    const MlpModel zero(shape);
    const TrainingBatch other = random_batch(5, shape, 12);
    const double expected = other.target.colwise().squaredNorm().mean();
    CHECK(backward(zero, other).loss == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("analytic gradient matches central finite differences") {
    ModelShape shape;
    shape.hidden = 10;
    shape.embed = 8;
    for (int pair = 0; pair < 5; ++pair) {
        shape.num_classes = pair % 2 == 0 ? 0 : 2;
        MlpModel model = testing::random_model(20 + pair, shape, 0.5);
        const TrainingBatch batch = random_batch(30 + pair, shape, 6);
        const Eigen::VectorXd grad = backward(model, batch).gradient;
        Eigen::VectorXd numeric(grad.size());
        const double h = 1e-5;
        for (Eigen::Index k = 0; k < grad.size(); ++k) {
            const double saved = model.parameters()[k];
            model.parameters()[k] = saved + h;
            const double up = backward(model, batch).loss;
            model.parameters()[k] = saved - h;
            const double down = backward(model, batch).loss;
            model.parameters()[k] = saved;
            numeric[k] = (up - down) / (2.0 * h);
        }
        CHECK(testing::max_rel_error(grad, numeric) < 1e-6);
    }
}

TEST_CASE("non-finite predictions report the batch index") {
    ModelShape shape;
    shape.hidden = 4;
    MlpModel model(shape);
    TrainingBatch batch = random_batch(1, shape, 5);
    batch.z_t(0, 3) = std::numeric_limits<double>::quiet_NaN();
    model.parameters()[model.weight_offset(0)] = 1.0;
    model.parameters()[model.weight_offset(shape.layers - 1)] = 1.0;
    for (int l = 1; l < shape.layers - 1; ++l) model.parameters()[model.weight_offset(l)] = 1.0;
    try {
        backward(model, batch);
        FAIL("expected NumericFailure");
    } catch (const NumericFailure& e) {
        CHECK(e.index() == 3);
    }
}

TEST_CASE("serialization round-trips and rejects corruption") {
    ModelShape shape;
    shape.hidden = 12;
    shape.num_classes = 2;
    const MlpModel model = testing::random_model(2, shape);
    const auto bytes = serialize_model(model);
    const MlpModel back = deserialize_model(bytes);
    CHECK(back.shape() == shape);
    CHECK(back.parameters() == model.parameters());
    CHECK(serialize_model(back) == bytes);

    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS_AS(deserialize_model(truncated), ParseError);
    auto bad_magic = bytes;
    bad_magic[0] ^= 0xff;
    CHECK_THROWS_AS(deserialize_model(bad_magic), ParseError);
    auto extra = bytes;
    extra.push_back(0);
    CHECK_THROWS_AS(deserialize_model(extra), ParseError);

    const auto dir = testing::scratch_dir("model-io");
    save_model(dir / "m.bin", model);
    CHECK(load_model(dir / "m.bin").parameters() == model.parameters());
    CHECK_THROWS_AS(load_model(dir / "missing.bin"), IoError);
}

}
