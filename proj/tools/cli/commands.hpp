#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "config.hpp"

namespace pafm::cli {

// Each command reads its inputs from and writes its artifacts under
// config.output_dir, and echoes the resolved config next to its outputs.

void cmd_gen_data(const ExperimentConfig& config);
void cmd_precompute(const ExperimentConfig& config);
void cmd_train(const ExperimentConfig& config, bool resume = false);
void cmd_sample(const ExperimentConfig& config, const std::filesystem::path& model = {});
void cmd_eval_field(const ExperimentConfig& config, const std::filesystem::path& model = {});
void cmd_grad_var(const ExperimentConfig& config);
void cmd_report(const ExperimentConfig& config);

/// Files cmd_report needs that are missing from the output directory.
std::vector<std::filesystem::path> missing_report_inputs(const ExperimentConfig& config);

/// Full command-line entry point. Returns the process exit code:
/// 0 success, 1 runtime or I/O failure, 2 usage or configuration error.
int run(int argc, const char* const* argv);

}  // namespace pafm::cli
