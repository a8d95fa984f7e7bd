#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "alprio/predictor.hpp"

namespace alprio {

// Exponential moving average of the raw reward, subtracted to form the final reward.
struct RewardState {
    double moving_average = 0.0;
    double alpha_R = 0.9;
    bool initialised = false;

    std::string to_json() const;
    static RewardState from_json(const std::string& text);

    friend bool operator==(const RewardState&, const RewardState&) = default;
};

// 1 - Dice of the thresholded prediction, one entry per validation pair.
std::vector<double> validation_losses(const PredictorWeights& w, const PredictorConfig& cfg,
                                      const LabeledDataset& val);

// -(1/M) sum_j l_j h_j
double raw_reward(const std::vector<double>& losses, const std::vector<double>& weights);

// Unweighted form (h_j = 1).
double raw_reward(const std::vector<double>& losses);

// First call seeds the average with raw; later calls blend with alpha_R.
RewardState update_baseline(const RewardState& state, double raw);

struct FinalReward {
    double reward = 0.0;
    RewardState state;  // after the baseline update
};

// raw minus the pre-update moving average (an uninitialised state is seeded
// with raw first, so the first final reward is 0).
FinalReward final_reward(double raw, const RewardState& state);

// Zeros except the last element, which is R_T.
std::vector<double> sparse_episode_rewards(double R_T, std::size_t T);

}  // namespace alprio
