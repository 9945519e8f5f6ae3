#pragma once

#include <cstddef>
#include <vector>

#include "pafm/numeric.hpp"

namespace pafm {

using Label = int;

/// Label used by unconditional experiments; matches every candidate.
inline constexpr Label kUnconditional = -1;

/// Indexed collection of (point, label) pairs. Points are stored as the
/// columns of a d x n matrix.
struct Dataset {
    Matrix points;
    std::vector<Label> labels;

    Eigen::Index dim() const noexcept { return points.rows(); }
    std::size_t size() const noexcept { return labels.size(); }
    bool empty() const noexcept { return labels.empty(); }

    auto point(std::size_t i) const { return points.col(static_cast<Eigen::Index>(i)); }
    Label label(std::size_t i) const { return labels[i]; }

    /// Sorted distinct labels.
    std::vector<Label> label_set() const;
    /// Indices of points carrying `y`, ascending. The unconditional sentinel
    /// selects every index.
    std::vector<std::size_t> indices_with_label(Label y) const;

    /// Throws InvalidArgument if the shape is inconsistent or a coordinate is
    /// not finite.
    void validate() const;
};

}  // namespace pafm
