#include "alprio/meta_train.hpp"

#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

namespace alprio {

std::string to_string(ValidationWeighting w) {
    return w == ValidationWeighting::uniform ? "uniform" : "controller-scores";
}

ValidationWeighting parse_validation_weighting(const std::string& name) {
    if (name == "controller-scores" || name == "controller_scores") return ValidationWeighting::controller_scores;
    if (name == "uniform") return ValidationWeighting::uniform;
    throw ConfigError("unknown validation weighting '" + name + "' (controller-scores, uniform)");
}

void MetaTrainConfig::validate() const {
    if (total_trials < 1) throw ConfigError("meta_train.total_trials must be >= 1");
    if (episodes_per_trial < 1) throw ConfigError("meta_train.episodes_per_trial must be >= 1");
    if (steps_per_episode < 1) throw ConfigError("meta_train.steps_per_episode must be >= 1");
    if (minibatch_size < 1) throw ConfigError("meta_train.minibatch_size must be >= 1");
    if (predictor_steps_per_t < 1) throw ConfigError("meta_train.predictor_steps_per_t must be >= 1");
    if (!(alpha_R >= 0.0 && alpha_R <= 1.0)) throw ConfigError("meta_train.alpha_R must lie in [0,1]");
    if (checkpoint_every < 0) throw ConfigError("meta_train.checkpoint_every must be >= 0");
}

std::size_t sample_environment_index(const EnvironmentDistribution& dist, Rng& rng) {
    if (dist.environments.empty()) throw ConfigError("sample_environment: empty environment distribution");
    dist.validate();
    const double u = uniform01(rng);
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < dist.sampling_weights.size(); ++i) {
        if (dist.sampling_weights[i] <= 0.0) continue;
        acc += dist.sampling_weights[i];
        last_positive = i;
        if (u < acc) return i;
    }
    return last_positive;
}

const MDPEnvironment& sample_environment(const EnvironmentDistribution& dist, Rng& rng) {
    return dist.environments[sample_environment_index(dist, rng)];
}

namespace {

ControllerInput make_input(const LabeledPair& p, float prev_action, float prev_raw, float prev_done) {
    return ControllerInput{p.image, prev_action, prev_raw, prev_done};
}

double mean_of(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

TrialResult run_trial(const MDPEnvironment& env, ControllerWeights& controller, const ControllerConfig& ccfg,
                      const ControllerState& previous_state, const PredictorWeights& shared,
                      const PredictorConfig& pcfg, const MetaTrainConfig& cfg, Rng& rng,
                      const TrialOptions& options) {
    cfg.validate();
    if (env.controller_train.empty() || env.controller_val.empty())
        throw ConfigError("environment '" + env.env_id + "' needs non-empty controller train and val sets");

    TrialResult out;
    out.predictor = shared;
    out.predictor.reset_moments();
    ControllerState state = reset_state(ccfg, previous_state);
    RewardState reward_state;
    reward_state.alpha_R = cfg.alpha_R;

    const std::size_t n_train = env.controller_train.size();
    const std::size_t b = std::min(cfg.minibatch_size, n_train);
    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::vector<float> prev_actions(b, 0.0f);
    float prev_raw = 0.0f;
    double score_sum = 0.0, selected = 0.0, scored = 0.0;

    for (int e = 0; e < cfg.episodes_per_trial; ++e) {
        Episode ep;
        ep.initial_hidden = state.hidden;
        for (int t = 0; t < cfg.steps_per_episode; ++t) {
            const bool episode_start = t == 0 && e > 0;
            shuffle(order, rng);
            Transition tr;
            std::vector<const LabeledPair*> batch;
            for (std::size_t i = 0; i < b; ++i) {
                const auto& pair = env.controller_train.pairs[order[i]];
                batch.push_back(&pair);
                tr.inputs.push_back(make_input(pair, prev_actions[i], prev_raw,
                                               episode_start && i == 0 ? 1.0f : 0.0f));
            }
            const ScoreResult scored_batch = score_batch(controller, ccfg, state, tr.inputs);
            state = scored_batch.state;
            tr.probs = scored_batch.scores;
            tr.actions = sample_actions(tr.probs, rng);
            tr.value = mean_of(scored_batch.values);

            std::vector<const LabeledPair*> chosen;
            for (std::size_t i = 0; i < b; ++i) {
                if (tr.actions[i] != 0) chosen.push_back(batch[i]);
                prev_actions[i] = static_cast<float>(tr.actions[i]);
                score_sum += tr.probs[i];
            }
            scored += static_cast<double>(b);
            selected += static_cast<double>(chosen.size());
            if (!chosen.empty()) {
                ParamSet<float> grads;
                for (int k = 0; k < cfg.predictor_steps_per_t; ++k) {
                    minibatch_gradient(out.predictor, pcfg, chosen, grads);
                    adam_step_inplace(out.predictor, grads, pcfg.learning_rate, pcfg.adam);
                }
                ++out.predictor_updates;
            }

            const std::vector<double> losses = options.validation_losses
                                                   ? options.validation_losses(out.predictor, env.controller_val)
                                                   : validation_losses(out.predictor, pcfg, env.controller_val);
            // Validation weights come from a throwaway copy of the recurrent state.
            double raw = 0.0;
            if (cfg.validation_weighting == ValidationWeighting::uniform) {
                raw = raw_reward(losses);
            } else {
                std::vector<ControllerInput> val_inputs;
                for (const auto& p : env.controller_val.pairs)
                    val_inputs.push_back(make_input(p, 0.0f, prev_raw, 0.0f));
                raw = raw_reward(losses, score_batch(controller, ccfg, state, val_inputs).scores);
            }
            if (!std::isfinite(raw))
                throw NumericError("non-finite reward in environment '" + env.env_id + "', episode " +
                                   std::to_string(e) + ", step " + std::to_string(t));
            const FinalReward fin = final_reward(raw, reward_state);
            reward_state = fin.state;
            out.raw_rewards.push_back(raw);
            out.final_rewards.push_back(fin.reward);

            const bool last = t + 1 == cfg.steps_per_episode;
            tr.reward = last ? fin.reward : 0.0;
            tr.done = last;
            if (last) ep.terminal_raw_reward = raw;
            prev_raw = static_cast<float>(raw);
            ep.steps.push_back(std::move(tr));
        }
        if (options.on_episode) options.on_episode(ep, controller);
        out.episodes.push_back(std::move(ep));
    }
    out.final_state = state;
    out.mean_score = scored > 0 ? score_sum / scored : 0.0;
    out.selected_fraction = scored > 0 ? selected / scored : 0.0;
    return out;
}

std::string TrialLog::to_json_line() const {
    nlohmann::ordered_json j;
    j["trial"] = trial;
    j["env_id"] = env_id;
    j["epsilon"] = epsilon;
    j["mean_final_reward"] = mean_final_reward;
    j["mean_score"] = mean_score;
    j["selected_fraction"] = selected_fraction;
    return j.dump();
}

MetaTrainResult meta_train(const EnvironmentDistribution& dist, const ControllerConfig& ccfg, const PPOConfig& ppo,
                           const PredictorConfig& pcfg, const MetaTrainConfig& cfg, const MetaTrainHooks& hooks) {
    cfg.validate();
    ccfg.validate();
    ppo.validate();
    pcfg.validate();
    if (dist.environments.empty()) throw ConfigError("meta_train: no environments");
    dist.validate();

    MetaTrainResult result;
    result.controller = init_controller(ccfg, cfg.seed);
    result.predictor = init_predictor(pcfg, cfg.seed);
    Rng env_rng = make_stream(cfg.seed, "meta/environments");
    Rng rollout_rng = make_stream(cfg.seed, "meta/rollout");
    AdvantageScaler scaler;
    ControllerState state = initial_state(ccfg);

    TrialOptions options;
    options.on_episode = [&](const Episode& ep, ControllerWeights& cw) {
        cw = ppo_update(cw, ccfg, {ep}, ppo, &scaler).weights;
    };

    for (int trial = 0; trial < cfg.total_trials; ++trial) {
        const MDPEnvironment& env = sample_environment(dist, env_rng);
        TrialResult tr = run_trial(env, result.controller, ccfg, state, result.predictor, pcfg, cfg, rollout_rng,
                                   options);
        state = tr.final_state;
        const double eps = anneal_epsilon(trial, cfg.total_trials);
        result.predictor = reptile_sync(result.predictor, tr.predictor, eps);
        if (!result.controller.all_finite() || !result.predictor.all_finite())
            throw NumericError("meta_train: non-finite weights after trial " + std::to_string(trial));

        TrialLog log;
        log.trial = trial;
        log.env_id = env.env_id;
        log.epsilon = eps;
        double fr = 0.0;
        for (const auto& ep : tr.episodes) fr += ep.steps.back().reward;
        log.mean_final_reward = fr / static_cast<double>(tr.episodes.size());
        log.mean_score = tr.mean_score;
        log.selected_fraction = tr.selected_fraction;
        if (tr.mean_score < ppo.min_mean_score) ++result.trials_below_min_score;
        result.log.push_back(log);
        if (hooks.on_trial) hooks.on_trial(log);
        const int done = trial + 1;
        if (hooks.on_checkpoint && cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 &&
            done != cfg.total_trials)
            hooks.on_checkpoint(done, result.controller, result.predictor);
    }
    if (hooks.on_checkpoint) hooks.on_checkpoint(cfg.total_trials, result.controller, result.predictor);
    return result;
}

}  // namespace alprio
