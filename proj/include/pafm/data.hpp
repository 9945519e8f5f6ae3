#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "pafm/dataset.hpp"
#include "pafm/path.hpp"
#include "pafm/posterior.hpp"

namespace pafm {

enum class Family { TwoMoons, GaussianMixture };

Family parse_family(const std::string& name);
std::string to_string(Family family);

/// Everything needed to regenerate a synthetic experiment dataset.
struct SyntheticSpec {
    Family family = Family::TwoMoons;
    std::size_t n_per_class = 1000;
    double noise_std = 0.05;
    /// Mixture centres (one per class) for the Gaussian mixture family.
    std::vector<Point> centers;
    Point source_mean = Point{{0.0, 3.0}};
    double source_std = 0.1;
    std::uint64_t seed = 0;

    SourceDistribution source() const { return SourceDistribution{source_mean, source_std}; }
    void validate() const;
};

/// Interleaved half circles: class 0 on (cos a, sin a), class 1 on
/// (1 - cos a, 0.5 - sin a), a ~ U[0, pi], plus isotropic jitter.
Dataset gen_two_moons(std::size_t n_per_class, double noise_std, SeededRng& rng);

/// n_per_center draws around each centre; label = centre index.
Dataset gen_gaussian_mixture(const std::vector<Point>& centers, const std::vector<double>& stds,
                             std::size_t n_per_center, SeededRng& rng);

Dataset generate(const SyntheticSpec& spec);

/// Uniform without-replacement subsample, balanced across classes to within
/// one point; original order is kept.
Dataset subsample(const Dataset& dataset, std::size_t n_total, SeededRng& rng);

/// Exact brute-force neighbours (owner first, then ascending distance, ties
/// by ascending index). With by_class the search is restricted to the
/// owner's class; otherwise it spans the whole dataset.
KnnTable precompute_knn(const Dataset& dataset, std::size_t k, bool by_class = true);

// File formats (see docs/file_formats.md).
void write_dataset(std::ostream& out, const Dataset& dataset);
Dataset read_dataset(std::istream& in);
void write_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& path);

void write_candidates(std::ostream& out, const KnnTable& table);
KnnTable read_candidates(std::istream& in);
void write_candidates(const std::filesystem::path& path, const KnnTable& table);
KnnTable read_candidates(const std::filesystem::path& path);

void write_samples(std::ostream& out, const Matrix& samples);
Matrix read_samples(std::istream& in);
void write_samples(const std::filesystem::path& path, const Matrix& samples);
Matrix read_samples(const std::filesystem::path& path);

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);

}  // namespace pafm
