#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "pafm/dataset.hpp"
#include "pafm/model.hpp"
#include "pafm/numeric.hpp"

namespace testing {

/// n points with coordinates ~ N(0, scale^2), labels cycling through `classes`
/// (or all unconditional when classes == 0).
inline pafm::Dataset random_dataset(std::uint64_t seed, std::size_t n, Eigen::Index d = 2, int classes = 0,
                                    double scale = 1.0) {
    pafm::SeededRng rng = pafm::SeededRng::derive(seed, "test-dataset");
    pafm::Dataset ds;
    ds.points.resize(d, static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (Eigen::Index c = 0; c < d; ++c) ds.points(c, static_cast<Eigen::Index>(i)) = scale * rng.normal();
        ds.labels.push_back(classes > 0 ? static_cast<int>(i % static_cast<std::size_t>(classes)) : 0);
    }
    return ds;
}

/// Model with every parameter ~ U(-scale, scale), biases included.
inline pafm::MlpModel random_model(std::uint64_t seed, pafm::ModelShape shape, double scale = 0.3) {
    pafm::MlpModel model(shape);
    pafm::SeededRng rng = pafm::SeededRng::derive(seed, "test-model");
    for (Eigen::Index k = 0; k < model.parameters().size(); ++k)
        model.parameters()[k] = scale * (2.0 * rng.uniform() - 1.0);
    return model;
}

inline double max_rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double scale = std::max(a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff());
    return scale == 0.0 ? 0.0 : (a - b).cwiseAbs().maxCoeff() / scale;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("pafm-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testing
