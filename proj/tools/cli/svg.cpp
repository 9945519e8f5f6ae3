#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "pafm/errors.hpp"

namespace pafm::cli {

namespace {

constexpr int kMargin = 48;

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else if (c == '&') out += "&amp;";
        else out += c;
    }
    return out;
}

}  // namespace

Bounds Bounds::of_points(const Matrix& points, double pad) {
    if (points.cols() == 0 || points.rows() < 2) return {};
    Bounds b{points.row(0).minCoeff(), points.row(0).maxCoeff(), points.row(1).minCoeff(), points.row(1).maxCoeff()};
    const double dx = std::max(b.x_max - b.x_min, 1e-9) * pad;
    const double dy = std::max(b.y_max - b.y_min, 1e-9) * pad;
    return {b.x_min - dx, b.x_max + dx, b.y_min - dy, b.y_max + dy};
}

SvgPlot::SvgPlot(std::string title, Bounds bounds, int width, int height)
    : title_(std::move(title)), b_(bounds), width_(width), height_(height) {
    if (!(b_.x_max > b_.x_min)) b_.x_max = b_.x_min + 1.0;
    if (!(b_.y_max > b_.y_min)) b_.y_max = b_.y_min + 1.0;
}

double SvgPlot::px(double x) const {
    return kMargin + (x - b_.x_min) / (b_.x_max - b_.x_min) * (width_ - 2 * kMargin);
}

double SvgPlot::py(double y) const {
    return height_ - kMargin - (y - b_.y_min) / (b_.y_max - b_.y_min) * (height_ - 2 * kMargin);
}

void SvgPlot::scatter(const Matrix& points, const std::string& color, double radius, double opacity) {
    body_ += "<g fill=\"" + color + "\" fill-opacity=\"" + num(opacity) + "\">\n";
    for (Eigen::Index i = 0; i < points.cols(); ++i)
        body_ += "<circle cx=\"" + num(px(points(0, i))) + "\" cy=\"" + num(py(points(1, i))) + "\" r=\"" +
                 num(radius) + "\"/>\n";
    body_ += "</g>\n";
}

void SvgPlot::line(const std::vector<std::pair<double, double>>& xy, const std::string& color, double width,
                   bool dashed) {
    if (xy.empty()) return;
    body_ += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"" + num(width) + "\"";
    if (dashed) body_ += " stroke-dasharray=\"6,4\"";
    body_ += " points=\"";
    for (const auto& [x, y] : xy) body_ += num(px(x)) + "," + num(py(y)) + " ";
    body_ += "\"/>\n";
}

void SvgPlot::heatmap(const std::vector<double>& values, int nx, int ny, const std::string& color) {
    if (static_cast<int>(values.size()) != nx * ny) throw InvalidArgument("heatmap: value count mismatch");
    const double top = *std::max_element(values.begin(), values.end());
    const double cw = (width_ - 2.0 * kMargin) / nx;
    const double ch = (height_ - 2.0 * kMargin) / ny;
    body_ += "<g fill=\"" + color + "\" shape-rendering=\"crispEdges\">\n";
    for (int r = 0; r < ny; ++r)
        for (int c = 0; c < nx; ++c) {
            const double v = top > 0.0 ? values[static_cast<std::size_t>(r * nx + c)] / top : 0.0;
            if (v < 0.01) continue;
            // Row 0 is the lowest y band.
            body_ += "<rect x=\"" + num(kMargin + c * cw) + "\" y=\"" + num(height_ - kMargin - (r + 1) * ch) +
                     "\" width=\"" + num(cw + 0.5) + "\" height=\"" + num(ch + 0.5) + "\" fill-opacity=\"" +
                     num(v) + "\"/>\n";
        }
    body_ += "</g>\n";
}

void SvgPlot::legend(const std::vector<std::pair<std::string, std::string>>& entries) {
    double y = kMargin + 12;
    for (const auto& [label, color] : entries) {
        body_ += "<rect x=\"" + num(width_ - kMargin - 110) + "\" y=\"" + num(y - 8) +
                 "\" width=\"10\" height=\"10\" fill=\"" + color + "\"/>";
        body_ += "<text x=\"" + num(width_ - kMargin - 95) + "\" y=\"" + num(y + 1) +
                 "\" font-size=\"11\">" + escape(label) + "</text>\n";
        y += 16;
    }
}

void SvgPlot::axis_labels(const std::string& x, const std::string& y) {
    x_label_ = x;
    y_label_ = y;
}

std::string SvgPlot::str() const {
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width_) + "\" height=\"" +
                    std::to_string(height_) + "\" font-family=\"sans-serif\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + num(width_ / 2.0) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" + escape(title_) +
         "</text>\n";
    s += body_;
    const double l = kMargin, r = width_ - kMargin, t = kMargin, btm = height_ - kMargin;
    s += "<rect x=\"" + num(l) + "\" y=\"" + num(t) + "\" width=\"" + num(r - l) + "\" height=\"" + num(btm - t) +
         "\" fill=\"none\" stroke=\"black\"/>\n";
    s += "<g font-size=\"10\">\n";
    s += "<text x=\"" + num(l) + "\" y=\"" + num(btm + 14) + "\">" + tick(b_.x_min) + "</text>";
    s += "<text x=\"" + num(r) + "\" y=\"" + num(btm + 14) + "\" text-anchor=\"end\">" + tick(b_.x_max) + "</text>";
    s += "<text x=\"" + num(l - 4) + "\" y=\"" + num(btm) + "\" text-anchor=\"end\">" + tick(b_.y_min) + "</text>";
    s += "<text x=\"" + num(l - 4) + "\" y=\"" + num(t + 8) + "\" text-anchor=\"end\">" + tick(b_.y_max) + "</text>\n";
    if (!x_label_.empty())
        s += "<text x=\"" + num(width_ / 2.0) + "\" y=\"" + num(height_ - 12.0) + "\" text-anchor=\"middle\">" +
             escape(x_label_) + "</text>\n";
    if (!y_label_.empty())
        s += "<text transform=\"translate(14," + num(height_ / 2.0) + ") rotate(-90)\" text-anchor=\"middle\">" +
             escape(y_label_) + "</text>\n";
    s += "</g>\n</svg>\n";
    return s;
}

void SvgPlot::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << str();
}

}  // namespace pafm::cli
