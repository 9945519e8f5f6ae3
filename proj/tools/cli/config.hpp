#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pafm/data.hpp"
#include "pafm/eval.hpp"
#include "pafm/model.hpp"
#include "pafm/train.hpp"

namespace pafm::cli {

inline constexpr const char* kToolVersion = "1.0.0";
/// Seed used when the config does not set one.
inline constexpr const char* kSeedEnvVar = "PAFM_SEED";

struct DatasetSection {
    std::string family = "two_moons";
    std::size_t n_per_class = 1000;
    double noise_std = 0.05;
    std::vector<std::vector<double>> centers;
    std::vector<double> source_mean{0.0, 3.0};
    double source_std = 0.1;
    /// 0 keeps every generated point.
    std::size_t subsample = 0;
};

struct ProviderSection {
    std::string kind = "full";
    std::size_t k = 16;
    double sigma = 0.05;
    double augment_angle = 0.1;
    bool by_class = true;
};

struct ModelSection {
    int hidden = 128;
    int embed = 32;
    int layers = 4;
};

struct TrainSection {
    std::string objective = "PAFM";
    std::size_t steps = 50000;
    std::size_t batch_size = 256;
    double lr0 = 5e-4;
    double t_eps = kDefaultTimeEps;
    bool conditioned = false;
    std::size_t eval_every = 1000;
    std::size_t checkpoint_every = 5000;
    std::size_t audit_every = 100;
};

struct EvalSection {
    std::size_t grid_points = 4096;
    std::size_t grid_times = 16;
};

struct SampleSection {
    std::size_t n_samples = 5000;
    std::size_t n_steps = 300;
    /// -1 samples unconditionally (or every class in turn for conditioned models).
    int label = -1;
};

struct GradVarSection {
    std::size_t batches = 500;
    std::size_t batch_size = 256;
    /// Empty selects <objective dir>/model_mid.bin.
    std::string model;
    bool freeze_per_element = false;
};

struct ExperimentConfig {
    std::string output_dir = "pafm-out";
    std::uint64_t seed = 0;
    DatasetSection dataset;
    ProviderSection provider;
    ModelSection model;
    TrainSection train;
    EvalSection eval;
    SampleSection sample;
    GradVarSection grad_var;

    /// Throws ConfigError for unknown keys or ill-typed values. `seed_set`
    /// reports whether the document carried a seed.
    static ExperimentConfig from_json(const nlohmann::json& doc, bool* seed_set = nullptr);
    nlohmann::json to_json() const;
    /// Throws ConfigError if any value is out of range.
    void validate() const;

    SyntheticSpec synthetic_spec() const;
    SourceDistribution source() const;
    ModelShape model_shape(int num_classes) const;
    TrainConfig train_config() const;
    FieldGridSpec grid_spec() const;

    std::filesystem::path out() const { return output_dir; }
    /// <output_dir>/fm or <output_dir>/pafm.
    std::filesystem::path objective_dir() const;
};

/// Reads a JSON config file (ConfigError on malformed JSON, IoError if missing).
nlohmann::json load_config_file(const std::filesystem::path& path);

/// Applies the seed environment variable when the document did not set a
/// seed; warns on stderr when both are present.
void apply_seed_environment(ExperimentConfig& config, bool seed_set);

}  // namespace pafm::cli
