#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "alprio/error.hpp"

namespace alprio {

struct SynthOptions {
    std::filesystem::path config;
    std::filesystem::path out_dir;
    std::optional<std::uint64_t> seed;
};

struct MetaTrainOptions {
    std::filesystem::path envs_dir;  // one sub-directory per environment, each with manifest.json
    std::filesystem::path out_ckpt;
    std::filesystem::path config;
    std::optional<std::uint64_t> seed;
    bool allow_single_environment = false;
};

struct ALRunOptions {
    std::filesystem::path pool_dir;
    std::filesystem::path holdout_dir;
    std::optional<std::filesystem::path> controller_ckpt;  // meta-train output or its controller/ directory
    std::optional<std::filesystem::path> predictor_ckpt;   // warm start for every run
    std::vector<std::string> strategies = {"proposed"};
    std::vector<std::uint64_t> seeds;  // empty: the config seed
    std::optional<std::size_t> beta0;
    std::optional<std::size_t> beta;
    std::optional<double> phi;
    std::optional<int> max_iterations;
    std::filesystem::path config;  // optional
    std::filesystem::path out_dir;
    int jobs = 1;
};

struct AnalyzeOptions {
    std::string records_glob;
    std::filesystem::path out_dir;
    std::optional<std::filesystem::path> pool_dir;
    std::optional<std::filesystem::path> holdout_dir;
    std::filesystem::path config;  // optional
};

void cmd_synth(const SynthOptions& options);
void cmd_meta_train(const MetaTrainOptions& options);
// Returns the record paths written, in (strategy, seed) order.
std::vector<std::filesystem::path> cmd_al_run(const ALRunOptions& options);
void cmd_analyze(const AnalyzeOptions& options);

// File-name pattern match (fnmatch) in the pattern's directory, sorted.
std::vector<std::filesystem::path> expand_glob(const std::string& pattern);

std::string record_file_name(const std::string& strategy, std::uint64_t seed);

// Full command-line entry point; never throws.
int run_cli(int argc, char** argv);

}  // namespace alprio
