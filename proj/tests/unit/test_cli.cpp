#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli/commands.hpp"
#include "cli/config.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "pafm/errors.hpp"

using namespace pafm;
using namespace pafm::cli;
using nlohmann::json;

namespace {

int run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "pafm");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::size_t count_lines(const std::filesystem::path& p) {
    const std::string text = slurp(p);
    return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

ExperimentConfig tiny_config(const std::filesystem::path& dir) {
    ExperimentConfig c;
    c.output_dir = dir.string();
    c.seed = 5;
    c.dataset.n_per_class = 20;
    c.model.hidden = 16;
    c.model.embed = 8;
    c.train.steps = 30;
    c.train.batch_size = 16;
    c.train.eval_every = 10;
    c.train.checkpoint_every = 10;
    c.eval.grid_points = 32;
    c.eval.grid_times = 4;
    c.sample.n_samples = 50;
    c.sample.n_steps = 20;
    c.grad_var.batches = 5;
    c.grad_var.batch_size = 8;
    return c;
}

std::filesystem::path write_config(const std::filesystem::path& dir, const ExperimentConfig& c) {
    const auto path = dir / "config.json";
    std::ofstream(path) << c.to_json().dump(2);
    return path;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("config defaults and round-trip") {
    const ExperimentConfig c = ExperimentConfig::from_json(json::object());
    CHECK(c.dataset.family == "two_moons");
    CHECK(c.dataset.n_per_class == 1000);
    CHECK(c.train.steps == 50000);
    CHECK(c.train.batch_size == 256);
    CHECK(c.train.lr0 == 5e-4);
    CHECK(c.eval.grid_points == 4096);
    CHECK(c.sample.n_steps == 300);
    CHECK(c.model_shape(0).param_count() == 37762);
    CHECK_NOTHROW(c.validate());
    CHECK(ExperimentConfig::from_json(c.to_json()).to_json() == c.to_json());
}

TEST_CASE("config rejects unknown keys and wrong types") {
    CHECK_THROWS_AS(ExperimentConfig::from_json(json{{"sede", 1}}), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json(json{{"train", {{"stepz", 1}}}}), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json(json{{"train", {{"steps", "many"}}}}), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json(json{{"train", {{"steps", -3}}}}), ConfigError);
    bool seed_set = false;
    const ExperimentConfig c = ExperimentConfig::from_json(json{{"seed", 9}}, &seed_set);
    CHECK(seed_set);
    CHECK(c.seed == 9);
    ExperimentConfig bad = c;
    bad.dataset.family = "spirals";
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("seed environment applies only when the config has no seed") {
    ExperimentConfig c;
    ::setenv(kSeedEnvVar, "42", 1);
    apply_seed_environment(c, false);
    CHECK(c.seed == 42);
    c.seed = 7;
    apply_seed_environment(c, true);
    CHECK(c.seed == 7);
    ::unsetenv(kSeedEnvVar);
}

TEST_CASE("exit codes") {
    const auto dir = testing::scratch_dir("cli-exit");
    CHECK(run_cli({"gen-data", "-o", dir.string(), "--family", "spirals"}) == 2);
    CHECK(run_cli({"no-such-command"}) == 2);
    CHECK(run_cli({"train", "-o", dir.string(), "--steps", "five"}) == 2);
    CHECK(run_cli({"train", "-o", dir.string()}) == 1);
    CHECK(run_cli({"train", "-c", (dir / "missing.json").string()}) == 1);
    std::ofstream(dir / "broken.json") << "{ not json";
    CHECK(run_cli({"train", "-c", (dir / "broken.json").string()}) == 2);

    ExperimentConfig c;
    c.output_dir = dir.string();
    CHECK(missing_report_inputs(c).size() == 5);
    CHECK(run_cli({"report", "-o", dir.string()}) == 1);
}

TEST_CASE("gen-data and precompute") {
    const auto dir = testing::scratch_dir("cli-gen");
    CHECK(run_cli({"gen-data", "-o", dir.string()}) == 0);
    CHECK(read_dataset(dir / "dataset.csv").size() == 2000);
    CHECK(std::filesystem::exists(dir / "gen-data.resolved.json"));
    CHECK(run_cli({"gen-data", "-o", dir.string(), "--n-per-class", "50"}) == 0);
    CHECK(read_dataset(dir / "dataset.csv").size() == 100);

    CHECK(run_cli({"precompute", "-o", dir.string()}) == 0);
    const KnnTable table = read_candidates(dir / "candidates.csv");
    CHECK(table.size() == 100);
    for (std::size_t i = 0; i < table.size(); ++i) {
        CHECK(table.rows[i].size() == 16);
        CHECK(table.rows[i][0] == i);
    }
    CHECK(run_cli({"precompute", "-o", dir.string(), "-k", "1"}) == 0);
    for (const auto& row : read_candidates(dir / "candidates.csv").rows) CHECK(row.size() == 1);
    CHECK(run_cli({"precompute", "-o", dir.string(), "-k", "51"}) == 2);
}

TEST_CASE("train, sample, eval-field, grad-var and report") {
    const auto dir = testing::scratch_dir("cli-pipeline");
    const ExperimentConfig c = tiny_config(dir);
    const std::string cfg = write_config(dir, c).string();
    REQUIRE(run_cli({"gen-data", "-c", cfg}) == 0);
    for (const char* obj : {"FM", "PAFM"}) {
        REQUIRE(run_cli({"train", "-c", cfg, "--objective", obj}) == 0);
        REQUIRE(run_cli({"sample", "-c", cfg, "--objective", obj}) == 0);
        REQUIRE(run_cli({"eval-field", "-c", cfg, "--objective", obj}) == 0);
        REQUIRE(run_cli({"grad-var", "-c", cfg, "--objective", obj}) == 0);
    }
    for (const char* sub : {"fm", "pafm"}) {
        const auto d = dir / sub;
        CHECK(count_lines(d / "metrics.csv") == 31);
        CHECK(count_lines(d / "samples.csv") == 50);
        CHECK(count_lines(d / "field.csv") == 1 + 4 + 1);
        CHECK(count_lines(d / "gradvar.csv") == 1 + 5);
        CHECK(std::filesystem::exists(d / "timing.json"));
        CHECK(std::filesystem::exists(d / "model_mid.bin"));
        const json timing = json::parse(slurp(d / "timing.json"));
        CHECK(timing["steps_run"] == 30);
    }
    // Both objectives start from the same initial model.
    CHECK(slurp(dir / "fm" / "model_init.bin") == slurp(dir / "pafm" / "model_init.bin"));
    CHECK(slurp(dir / "fm" / "metrics.csv") != slurp(dir / "pafm" / "metrics.csv"));

    CHECK(run_cli({"report", "-c", cfg}) == 0);
    for (const char* f : {"samples.svg", "field_mse.svg", "loss.svg", "kde_data.svg", "gradvar.svg", "summary.csv"})
        CHECK(std::filesystem::exists(dir / "report" / f));
}

TEST_CASE("re-running a command reproduces its CSV outputs") {
    const auto dir = testing::scratch_dir("cli-determinism");
    const ExperimentConfig c = tiny_config(dir);
    const std::string cfg = write_config(dir, c).string();
    REQUIRE(run_cli({"gen-data", "-c", cfg}) == 0);
    const std::string data = slurp(dir / "dataset.csv");
    REQUIRE(run_cli({"train", "-c", cfg}) == 0);
    REQUIRE(run_cli({"sample", "-c", cfg}) == 0);
    const std::string metrics = slurp(dir / "pafm" / "metrics.csv");
    const std::string samples = slurp(dir / "pafm" / "samples.csv");
    REQUIRE(run_cli({"gen-data", "-c", cfg}) == 0);
    REQUIRE(run_cli({"train", "-c", cfg}) == 0);
    REQUIRE(run_cli({"sample", "-c", cfg}) == 0);
    CHECK(slurp(dir / "dataset.csv") == data);
    CHECK(slurp(dir / "pafm" / "metrics.csv") == metrics);
    CHECK(slurp(dir / "pafm" / "samples.csv") == samples);
}

TEST_CASE("resume continues a run identically") {
    const auto dir = testing::scratch_dir("cli-resume");
    ExperimentConfig c = tiny_config(dir);
    cmd_gen_data(c);
    cmd_train(c);
    const std::string model = slurp(dir / "pafm" / "model.bin");
    const std::string metrics = slurp(dir / "pafm" / "metrics.csv");

    // Recreate the state of a run interrupted after its step-20 checkpoint.
    const Dataset ds = read_dataset(dir / "dataset.csv");
    TrainConfig tc = c.train_config();
    PoolTable pools = build_pools(ds, tc);
    TrainOptions opts;
    opts.stop_step = 20;
    const TrainResult partial = train_loop(tc, ds, c.source(), c.model_shape(0), &pools, opts);
    {
        const auto bytes = serialize_trainer(partial.trainer);
        std::ofstream(dir / "pafm" / "checkpoint.bin", std::ios::binary)
            .write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        std::ofstream(dir / "pafm" / "metrics.csv") << partial.log.to_csv();
    }
    std::filesystem::remove(dir / "pafm" / "model.bin");
    cmd_train(c, true);
    CHECK(slurp(dir / "pafm" / "model.bin") == model);
    // Field-MSE cells come from the same evaluator, so the whole log matches.
    const MetricsLog resumed = MetricsLog::from_csv(slurp(dir / "pafm" / "metrics.csv"));
    const MetricsLog original = MetricsLog::from_csv(metrics);
    REQUIRE(resumed.rows.size() == original.rows.size());
    for (std::size_t k = 20; k < resumed.rows.size(); ++k) {
        CHECK(resumed.rows[k].loss == original.rows[k].loss);
        CHECK(resumed.rows[k].field_mse == original.rows[k].field_mse);
    }
    const json timing = json::parse(slurp(dir / "pafm" / "timing.json"));
    CHECK(timing["resumed_from_step"] == 20);
}

}
