#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "alprio/params.hpp"
#include "alprio/rng.hpp"
#include "alprio/tensor.hpp"

namespace alprio {

// Actor-critic weights: strided conv encoder, dense layer, GRU cell, dense
// layer, then sigmoid policy head and linear value head.
using ControllerWeights = TrainableParams;

struct ControllerConfig {
    std::size_t height = 32;
    std::size_t width = 32;
    std::vector<std::size_t> encoder_channels = {4, 8, 8};  // three stride-2 3x3 convs
    std::size_t fc_width = 32;
    std::size_t hidden_size = 32;

    std::size_t feature_size() const;  // flattened encoder output
    std::size_t input_size() const { return feature_size() + 3; }
    void validate() const;
    std::string to_json() const;
    static ControllerConfig from_json(const std::string& text);
};

enum class AdvantageNorm { batch, running_scale, none };
std::string to_string(AdvantageNorm n);
AdvantageNorm parse_advantage_norm(const std::string& s);

struct PPOConfig {
    double clip_ratio = 0.2;
    int epochs_per_update = 4;
    double gamma = 0.99;
    double gae_lambda = 0.95;
    double value_coef = 0.5;
    double entropy_coef = 0.01;
    double learning_rate = 1e-3;
    double max_grad_norm = 0.5;
    AdamSettings adam;
    AdvantageNorm advantage_norm = AdvantageNorm::running_scale;
    // Lower bound C on the mean score; monitored and reported, not enforced.
    double min_mean_score = 0.05;

    void validate() const;
    std::string to_json() const;
    static PPOConfig from_json(const std::string& text);
};

ControllerWeights init_controller(const ControllerConfig& cfg, std::uint64_t seed);

// One element of the tau sequence: an image plus the previous action, the
// previous raw reward and the previous termination flag.
struct ControllerInput {
    FloatTensor image;  // H*W values, (1,H,W) or (H,W)
    float prev_action = 0.0f;
    float prev_raw_reward = 0.0f;
    float prev_done = 0.0f;
};

struct ControllerState {
    std::vector<float> hidden;
    std::int64_t trial_id = 0;

    friend bool operator==(const ControllerState&, const ControllerState&) = default;
};

ControllerState initial_state(const ControllerConfig& cfg);
// Zero memory, trial_id advanced.
ControllerState reset_state(const ControllerConfig& cfg, const ControllerState& previous);

struct ScoreResult {
    std::vector<double> scores;  // in (0,1)
    std::vector<double> values;  // critic output per input
    ControllerState state;       // state after the last input
};

// Inputs are consumed in order, threading the recurrent state through.
ScoreResult score_batch(const ControllerWeights& w, const ControllerConfig& cfg, const ControllerState& state,
                        const std::vector<ControllerInput>& inputs);

// Independent Bernoulli draws. Throws DomainError on a score outside [0,1].
std::vector<int> sample_actions(const std::vector<double>& scores, Rng& rng);

inline constexpr double kScoreClamp = 1e-6;

// Sum of Bernoulli log-likelihoods with scores clamped to [1e-6, 1-1e-6].
double log_policy(const std::vector<double>& scores, const std::vector<int>& actions);

// Indices of the k largest scores, best first; ties go to the lower index.
std::vector<std::size_t> select_top_k(const std::vector<double>& scores, std::size_t k);

struct Transition {
    std::vector<ControllerInput> inputs;
    std::vector<int> actions;
    std::vector<double> probs;  // behaviour-policy scores
    double value = 0.0;         // mean critic output over the inputs
    double reward = 0.0;
    bool done = false;
};

struct Episode {
    std::vector<float> initial_hidden;  // recurrent state before the first transition
    std::vector<Transition> steps;
    double terminal_raw_reward = 0.0;
};

struct ReturnsAdvantages {
    std::vector<double> returns;     // discounted sums of rewards
    std::vector<double> advantages;  // GAE(gamma, lambda), not normalised
};

ReturnsAdvantages compute_returns_and_advantages(const Episode& episode, const PPOConfig& cfg);

// Running second-moment estimate used by AdvantageNorm::running_scale.
struct AdvantageScaler {
    double mean_square = 0.0;
    bool initialised = false;
    double decay = 0.95;

    void observe(const std::vector<double>& advantages);
    double scale() const;
};

// Normalises the concatenated advantages of one update batch in place.
void normalize_advantages(std::vector<std::vector<double>>& advantages, AdvantageNorm mode,
                          AdvantageScaler* scaler);

struct PPOTerms {
    double loss = 0.0;
    double surrogate = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    std::vector<double> ratios;  // one per transition
};

// Clipped-surrogate PPO loss of one episode (mean over transitions), replayed
// from the episode's initial hidden state. When grads is non-null the
// gradient is accumulated into it by backpropagation through time.
template <class T>
PPOTerms ppo_episode_loss(const ParamSet<T>& params, const ControllerConfig& cfg, const Episode& episode,
                          const std::vector<double>& advantages, const std::vector<double>& returns,
                          const PPOConfig& ppo, ParamSet<T>* grads);

struct PPOResult {
    ControllerWeights weights;
    std::vector<double> first_epoch_ratios;
    std::vector<double> epoch_losses;
};

PPOResult ppo_update(const ControllerWeights& w, const ControllerConfig& cfg, const std::vector<Episode>& episodes,
                     const PPOConfig& ppo, AdvantageScaler* scaler = nullptr);

void save_controller(const std::filesystem::path& dir, const ControllerWeights& w, const ControllerConfig& cfg,
                     const PPOConfig& ppo);
struct LoadedController {
    ControllerWeights weights;
    ControllerConfig config;
    PPOConfig ppo;
};
LoadedController load_controller(const std::filesystem::path& dir);

}  // namespace alprio
