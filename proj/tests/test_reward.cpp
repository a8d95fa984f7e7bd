#include <doctest.h>

#include <cmath>

#include "alprio/reward.hpp"
#include "test_support.hpp"

using namespace alprio;

TEST_CASE("moving average follows the closed-form recurrence") {
    Rng rng = make_stream(1, "reward-seq");
    const double alpha = 0.9;
    std::vector<double> raw(100);
    for (auto& r : raw) r = -uniform01(rng);
    RewardState state;
    state.alpha_R = alpha;
    double worst_avg = 0.0, worst_reward = 0.0;
    for (std::size_t t = 0; t < raw.size(); ++t) {
        // Baseline before step t: alpha^(t-1) r_0 + (1-alpha) sum_{k=1}^{t-1} alpha^(t-1-k) r_k, or r_0 at t = 0.
        double before = raw[0];
        if (t > 0) {
            before = std::pow(alpha, static_cast<double>(t - 1)) * raw[0];
            for (std::size_t k = 1; k < t; ++k)
                before += (1 - alpha) * std::pow(alpha, static_cast<double>(t - 1 - k)) * raw[k];
        }
        double after = std::pow(alpha, static_cast<double>(t)) * raw[0];
        for (std::size_t k = 1; k <= t; ++k) after += (1 - alpha) * std::pow(alpha, static_cast<double>(t - k)) * raw[k];
        const FinalReward f = final_reward(raw[t], state);
        worst_reward = std::max(worst_reward, std::abs(f.reward - (raw[t] - before)));
        worst_avg = std::max(worst_avg, std::abs(f.state.moving_average - after));
        state = f.state;
    }
    CHECK(worst_reward < 1e-10);
    CHECK(worst_avg < 1e-10);
}

TEST_CASE("first final reward is zero") {
    const FinalReward f = final_reward(-0.37, RewardState{});
    CHECK(f.reward == 0.0);
    CHECK(f.state.initialised);
    CHECK(f.state.moving_average == -0.37);
}

TEST_CASE("constant raw reward decays the final reward geometrically") {
    RewardState state;
    state.alpha_R = 0.9;
    state = final_reward(-1.0, state).state;
    std::vector<double> rewards;
    for (int t = 0; t < 20; ++t) {
        const FinalReward f = final_reward(-0.2, state);
        rewards.push_back(f.reward);
        state = f.state;
    }
    CHECK(rewards[0] == doctest::Approx(0.8));
    for (std::size_t t = 1; t < rewards.size(); ++t) CHECK(std::abs(rewards[t] / rewards[t - 1] - 0.9) < 1e-9);
}

TEST_CASE("raw reward forms") {
    CHECK(raw_reward({0.2, 0.4}) == doctest::Approx(-0.3));
    CHECK(raw_reward({0.2, 0.4}, {1.0, 0.5}) == doctest::Approx(-(0.2 + 0.2) / 2));
    CHECK(raw_reward({0.2, 0.4}, {1.0, 1.0}) == raw_reward({0.2, 0.4}));
    CHECK_THROWS(raw_reward({0.2}, {1.0, 1.0}));
    CHECK_THROWS_AS(update_baseline(RewardState{}, std::nan("")), NumericError);
}

TEST_CASE("sparse episode rewards") {
    CHECK(sparse_episode_rewards(0.5, 4) == std::vector<double>{0, 0, 0, 0.5});
    CHECK(sparse_episode_rewards(-1.0, 1) == std::vector<double>{-1.0});
    CHECK_THROWS_AS(sparse_episode_rewards(1.0, 0), DomainError);
}

TEST_CASE("validation losses are one minus thresholded dice") {
    const PredictorConfig cfg = testing::small_predictor();
    const auto w = init_predictor(cfg, 1);
    const LabeledDataset ds = generate_task_dataset(testing::small_spec("disk", ShapeClass::disk), 5, 2);
    const auto losses = validation_losses(w, cfg, ds);
    REQUIRE(losses.size() == 5);
    const auto dice = per_sample_dice(w, cfg, ds);
    for (std::size_t i = 0; i < 5; ++i) CHECK(losses[i] == doctest::Approx(1.0 - dice[i]).epsilon(1e-12));
}

TEST_CASE("reward state json round trip") {
    RewardState s;
    s.moving_average = -0.123456789;
    s.alpha_R = 0.8;
    s.initialised = true;
    CHECK(RewardState::from_json(s.to_json()) == s);
}
