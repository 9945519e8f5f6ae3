#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "pafm/numeric.hpp"

namespace pafm::cli {

struct Bounds {
    double x_min = 0.0, x_max = 1.0, y_min = 0.0, y_max = 1.0;

    static Bounds of_points(const Matrix& points, double pad = 0.05);
};

/// Minimal SVG document with a single plotting panel.
class SvgPlot {
public:
    SvgPlot(std::string title, Bounds bounds, int width = 480, int height = 420);

    void scatter(const Matrix& points, const std::string& color, double radius = 1.2, double opacity = 0.6);
    void line(const std::vector<std::pair<double, double>>& xy, const std::string& color, double width = 1.5,
              bool dashed = false);
    /// Row-major grid of values over the plot bounds, shaded white to `color`.
    void heatmap(const std::vector<double>& values, int nx, int ny, const std::string& color);
    void legend(const std::vector<std::pair<std::string, std::string>>& entries);
    void axis_labels(const std::string& x, const std::string& y);

    std::string str() const;
    void save(const std::filesystem::path& path) const;

private:
    double px(double x) const;
    double py(double y) const;

    std::string title_;
    Bounds b_;
    int width_, height_;
    std::string body_;
    std::string x_label_, y_label_;
};

}  // namespace pafm::cli
