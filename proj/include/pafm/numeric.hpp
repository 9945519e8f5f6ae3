#pragma once

#include <cstdint>
#include <span>
#include <string_view>

#include <Eigen/Dense>

namespace pafm {

/// A d-dimensional latent vector. All arithmetic is double precision.
using Point = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using PointRef = Eigen::Ref<const Eigen::VectorXd>;

/// Deterministic pseudo-random stream (xoshiro256** seeded through splitmix64).
///
/// Streams are never shared between consumers: anything that needs randomness
/// asks for `derive(seed, purpose, index)`, so each logical consumer owns an
/// independent, reproducible sequence regardless of evaluation order.
/// Gaussian draws use Box-Muller with both outputs consumed.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed);

    static SeededRng derive(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0);

    std::uint64_t next_u64();
    /// Uniform on [0, 1) with 53 random bits.
    double uniform();
    /// Unbiased uniform integer on [0, n). n must be positive.
    std::size_t uniform_index(std::size_t n);
    double normal();

    std::uint64_t seed() const noexcept { return seed_; }
    /// Number of 64-bit words consumed so far.
    std::uint64_t position() const noexcept { return position_; }

private:
    std::uint64_t seed_;
    std::uint64_t position_ = 0;
    std::uint64_t s_[4];
    double spare_normal_ = 0.0;
    bool has_spare_ = false;
};

/// splitmix64 finalizer; used for stream derivation.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// mean + std * eta with eta i.i.d. standard normal.
Point gaussian_sample(SeededRng& rng, Eigen::Index d, const Point& mean, double std);

/// log(sum(exp(v))) via max subtraction. Entries may be -inf, not +inf/NaN.
double log_sum_exp(std::span<const double> values);

Point matvec(const Matrix& m, const Point& p);
/// a * x + y
Point axpy(double a, const Point& x, const Point& y);
double dot(const Point& x, const Point& y);

bool all_finite(const Eigen::Ref<const Matrix>& m);

}  // namespace pafm
