#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "alprio/controller.hpp"
#include "alprio/predictor.hpp"
#include "alprio/reward.hpp"
#include "alprio/synth_data.hpp"

namespace alprio {

// How validation losses are weighted in the raw reward: by the controller's
// scores on the validation images, or equally.
enum class ValidationWeighting { controller_scores, uniform };

std::string to_string(ValidationWeighting w);  // "controller-scores", "uniform"
ValidationWeighting parse_validation_weighting(const std::string& name);

struct MetaTrainConfig {
    int total_trials = 300;
    int episodes_per_trial = 2;
    int steps_per_episode = 8;  // T
    std::size_t minibatch_size = 8;  // b
    int predictor_steps_per_t = 1;
    double alpha_R = 0.9;
    int checkpoint_every = 0;  // 0 = only at the end
    ValidationWeighting validation_weighting = ValidationWeighting::controller_scores;
    std::uint64_t seed = 0;

    void validate() const;
};

// Draws an index according to the sampling weights.
std::size_t sample_environment_index(const EnvironmentDistribution& dist, Rng& rng);
const MDPEnvironment& sample_environment(const EnvironmentDistribution& dist, Rng& rng);

struct TrialOptions {
    // Replaces the predictor-based validation losses (test stubs).
    std::function<std::vector<double>(const PredictorWeights&, const LabeledDataset&)> validation_losses;
    // Called after each episode; may update the controller weights in place.
    std::function<void(const Episode&, ControllerWeights&)> on_episode;
};

struct TrialResult {
    std::vector<Episode> episodes;
    PredictorWeights predictor;         // trial-end local predictor
    ControllerState final_state;
    std::vector<double> raw_rewards;    // one per step
    std::vector<double> final_rewards;  // one per step, before sparsification
    std::size_t predictor_updates = 0;
    double mean_score = 0.0;
    double selected_fraction = 0.0;
};

// One trial: reset the controller memory, then episodes_per_trial episodes of
// T steps. Each step scores a minibatch, samples actions, trains the local
// predictor on the selected samples and computes the reward after the update.
TrialResult run_trial(const MDPEnvironment& env, ControllerWeights& controller, const ControllerConfig& ccfg,
                      const ControllerState& previous_state, const PredictorWeights& shared,
                      const PredictorConfig& pcfg, const MetaTrainConfig& cfg, Rng& rng,
                      const TrialOptions& options = {});

struct TrialLog {
    int trial = 0;
    std::string env_id;
    double epsilon = 0.0;
    double mean_final_reward = 0.0;
    double mean_score = 0.0;
    double selected_fraction = 0.0;

    std::string to_json_line() const;
};

struct MetaTrainHooks {
    std::function<void(const TrialLog&)> on_trial;
    std::function<void(int trials_done, const ControllerWeights&, const PredictorWeights&)> on_checkpoint;
};

struct MetaTrainResult {
    ControllerWeights controller;
    PredictorWeights predictor;  // shared, Reptile-synced
    std::vector<TrialLog> log;
    int trials_below_min_score = 0;  // trials whose mean score fell under ppo.min_mean_score
};

MetaTrainResult meta_train(const EnvironmentDistribution& dist, const ControllerConfig& ccfg, const PPOConfig& ppo,
                           const PredictorConfig& pcfg, const MetaTrainConfig& cfg,
                           const MetaTrainHooks& hooks = {});

}  // namespace alprio
