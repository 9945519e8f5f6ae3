#include "pafm/dataset.hpp"

#include <algorithm>

#include "pafm/errors.hpp"

namespace pafm {

std::vector<Label> Dataset::label_set() const {
    std::vector<Label> out(labels);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::vector<std::size_t> Dataset::indices_with_label(Label y) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (y == kUnconditional || labels[i] == y) out.push_back(i);
    return out;
}

void Dataset::validate() const {
    if (static_cast<std::size_t>(points.cols()) != labels.size())
        throw InvalidArgument("dataset: point count does not match label count");
    if (!labels.empty() && points.rows() < 1) throw InvalidArgument("dataset: dimension must be >= 1");
    if (!points.allFinite()) throw InvalidArgument("dataset: non-finite coordinate");
}

}  // namespace pafm
