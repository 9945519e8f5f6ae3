#include "pafm/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "pafm/errors.hpp"

namespace pafm {

namespace {

std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

std::uint64_t fnv1a(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t x = seed;
    for (auto& word : s_) {
        x += 0x9e3779b97f4a7c15ULL;
        word = mix64(x);
    }
}

SeededRng SeededRng::derive(std::uint64_t seed, std::string_view purpose, std::uint64_t index) {
    std::uint64_t key = mix64(seed);
    key = mix64(key ^ fnv1a(purpose));
    key = mix64(key ^ index);
    return SeededRng(key);
}

std::uint64_t SeededRng::next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    ++position_;
    return result;
}

double SeededRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::size_t SeededRng::uniform_index(std::size_t n) {
    if (n == 0) throw InvalidArgument("uniform_index: n must be positive");
    const std::uint64_t bound = n;
    // Reject the low residue band so every value is equally likely.
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
        const std::uint64_t r = next_u64();
        if (r >= threshold) return static_cast<std::size_t>(r % bound);
    }
}

double SeededRng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_normal_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_normal_ = r * std::sin(angle);
    has_spare_ = true;
    return r * std::cos(angle);
}

Point gaussian_sample(SeededRng& rng, Eigen::Index d, const Point& mean, double std) {
    if (d < 1) throw InvalidArgument("gaussian_sample: dimension must be >= 1");
    if (!(std >= 0.0)) throw InvalidArgument("gaussian_sample: std must be non-negative");
    if (mean.size() != d) throw InvalidArgument("gaussian_sample: mean has wrong dimension");
    Point out(d);
    for (Eigen::Index k = 0; k < d; ++k) out[k] = mean[k] + std * rng.normal();
    return out;
}

double log_sum_exp(std::span<const double> values) {
    if (values.empty()) throw InvalidArgument("log_sum_exp: empty input");
    double max = -std::numeric_limits<double>::infinity();
    for (double v : values) {
        if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
            throw InvalidArgument("log_sum_exp: NaN or +inf entry");
        max = std::max(max, v);
    }
    if (max == -std::numeric_limits<double>::infinity()) return max;
    double sum = 0.0;
    for (double v : values) sum += std::exp(v - max);
    return max + std::log(sum);
}

Point matvec(const Matrix& m, const Point& p) {
    if (m.cols() != p.size())
        throw InvalidArgument("matvec: matrix has " + std::to_string(m.cols()) +
                              " columns, vector has " + std::to_string(p.size()) + " entries");
    return m * p;
}

Point axpy(double a, const Point& x, const Point& y) {
    if (x.size() != y.size()) throw InvalidArgument("axpy: size mismatch");
    return a * x + y;
}

double dot(const Point& x, const Point& y) {
    if (x.size() != y.size()) throw InvalidArgument("dot: size mismatch");
    return x.dot(y);
}

bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

}  // namespace pafm
