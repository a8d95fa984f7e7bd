#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "alprio/al_engine.hpp"
#include "alprio/analysis.hpp"
#include "alprio/controller.hpp"
#include "alprio/meta_train.hpp"
#include "alprio/predictor.hpp"
#include "alprio/synth_data.hpp"

namespace alprio {

enum class TaskRole { meta_train, meta_test };

struct SynthTask {
    TaskRole role = TaskRole::meta_train;
    TaskSpec spec;
};

struct SynthConfig {
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t samples_per_task = 48;  // meta-train environments
    std::size_t pool_size = 64;         // meta-test pools
    std::size_t holdout_size = 32;      // meta-test holdouts, always clean
    std::vector<SynthTask> tasks;

    void validate() const;
};

struct AnalyzeConfig {
    PlateauRule plateau;
    MMDConfig mmd;
};

// Parsed INI configuration. Sections:
//   [run] seed
//   [synth] height width samples_per_task pool_size holdout_size
//   [task.<name>] role shape distractors max_distractors intensity_offset contrast_gain noise_sigma
//                 blur_radius corruption_fraction corruption_noise_sigma corruption_mode task_tag institute_tag
//   [predictor] channel_widths learning_rate convergence_patience min_delta max_epochs batch_size
//   [controller] encoder_channels fc_width hidden_size
//   [ppo] clip_epsilon epochs gamma gae_lambda value_coef entropy_coef learning_rate max_grad_norm
//         advantage_norm min_mean_score
//   [meta_train] total_trials episodes_per_trial steps_per_episode minibatch_size predictor_steps_per_t
//                alpha_R checkpoint_every validation_weighting controller_train_ratio
//   [al] beta0 beta phi max_iterations mc_passes mc_dropout_rate
//   [analyze] plateau_min_gain plateau_consecutive mmd_bandwidth mmd_estimator mmd_downsample
// Unknown sections or keys raise ConfigError naming them.
struct RunConfig {
    std::uint64_t seed = 0;
    SynthConfig synth;
    PredictorConfig predictor;
    ControllerConfig controller;
    PPOConfig ppo;
    MetaTrainConfig meta_train;
    double controller_train_ratio = 0.5;
    ALConfig al;
    AnalyzeConfig analyze;

    void validate() const;
};

RunConfig parse_run_config(const std::string& text, const std::string& origin = "config");
RunConfig load_run_config(const std::filesystem::path& path);

// Comma-separated list helpers shared with the command line.
std::vector<std::string> split_list(const std::string& text);
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

}  // namespace alprio
