#include "alprio/reward.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace alprio {

using nlohmann::json;

std::string RewardState::to_json() const {
    return json{{"moving_average", moving_average}, {"alpha_R", alpha_R}, {"initialised", initialised}}.dump();
}

RewardState RewardState::from_json(const std::string& text) {
    const json j = json::parse(text);
    return RewardState{j.at("moving_average").get<double>(), j.at("alpha_R").get<double>(),
                       j.at("initialised").get<bool>()};
}

std::vector<double> validation_losses(const PredictorWeights& w, const PredictorConfig& cfg,
                                      const LabeledDataset& val) {
    if (val.empty()) throw ConfigError("validation_losses: empty validation set");
    auto dice = per_sample_dice(w, cfg, val);
    for (double& d : dice) d = 1.0 - d;
    return dice;
}

double raw_reward(const std::vector<double>& losses, const std::vector<double>& weights) {
    if (losses.size() != weights.size())
        throw ShapeError("raw_reward: " + std::to_string(losses.size()) + " losses but " +
                         std::to_string(weights.size()) + " weights");
    if (losses.empty()) throw ShapeError("raw_reward: no losses");
    double s = 0.0;
    for (std::size_t j = 0; j < losses.size(); ++j) s += losses[j] * weights[j];
    return -s / static_cast<double>(losses.size());
}

double raw_reward(const std::vector<double>& losses) {
    return raw_reward(losses, std::vector<double>(losses.size(), 1.0));
}

RewardState update_baseline(const RewardState& state, double raw) {
    if (!std::isfinite(raw)) throw NumericError("update_baseline: non-finite raw reward");
    RewardState out = state;
    if (!state.initialised) {
        out.moving_average = raw;
        out.initialised = true;
    } else {
        out.moving_average = state.alpha_R * state.moving_average + (1.0 - state.alpha_R) * raw;
    }
    return out;
}

FinalReward final_reward(double raw, const RewardState& state) {
    const RewardState seeded = state.initialised ? state : update_baseline(state, raw);
    FinalReward out;
    out.reward = raw - seeded.moving_average;
    out.state = state.initialised ? update_baseline(state, raw) : seeded;
    return out;
}

std::vector<double> sparse_episode_rewards(double R_T, std::size_t T) {
    if (T == 0) throw DomainError("sparse_episode_rewards: episode length must be >= 1");
    std::vector<double> r(T, 0.0);
    r.back() = R_T;
    return r;
}

}  // namespace alprio
