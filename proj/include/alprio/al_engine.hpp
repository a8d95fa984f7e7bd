#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "alprio/al_record.hpp"
#include "alprio/controller.hpp"
#include "alprio/predictor.hpp"
#include "alprio/synth_data.hpp"

namespace alprio {

struct ALConfig {
    std::size_t beta0 = 16;
    std::size_t beta = 4;
    double phi = 0.75;  // support-train share of the labelled samples
    int max_iterations = 1000;
    std::uint64_t seed = 0;
    Strategy strategy = Strategy::proposed;
    int mc_passes = 10;
    double mc_dropout_rate = 0.1;

    void validate() const;
};

// Simulated annotator: hands out each ground-truth mask at most once.
class Oracle {
public:
    explicit Oracle(const LabeledDataset& pool);

    FloatTensor label(const std::string& id);
    bool knows(const std::string& id) const { return truth_.count(id) != 0; }
    std::size_t query_count() const { return audit_.size(); }
    const std::vector<std::string>& audit() const { return audit_; }

private:
    std::map<std::string, FloatTensor> truth_;
    std::set<std::string> dispensed_;
    std::vector<std::string> audit_;
};

// Everything an AL run reads but never modifies.
struct ALSetup {
    const LabeledDataset* pool = nullptr;     // images; masks reach the engine only through the oracle
    const LabeledDataset* holdout = nullptr;
    PredictorConfig predictor_config;
    PredictorWeights initial_predictor;
    const ControllerWeights* controller = nullptr;  // required for Strategy::proposed
    const ControllerConfig* controller_config = nullptr;
};

struct ALState {
    std::vector<std::string> unlabelled;  // ascending id order
    LabeledDataset support_train;
    LabeledDataset support_val;
    PredictorWeights predictor;
    ControllerState controller_state;
    double last_reward = 0.0;
    int c = 0;
    std::vector<std::string> previous_selection;
    Rng strategy_rng;
    Rng split_rng;
};

// Number of the newly labelled samples that go to support-val so that its
// size tracks floor(labelled_total * (1 - phi)).
std::size_t validation_additions(std::size_t labelled_total, double phi, std::size_t current_val,
                                 std::size_t new_labels);

ALState init_al(const ALSetup& setup, const ALConfig& cfg, Oracle& oracle, ALRunRecord* record = nullptr);

// One iteration; returns false (and leaves the state untouched) when fewer
// than beta samples remain.
bool al_iteration(ALState& state, const ALSetup& setup, const ALConfig& cfg, Oracle& oracle,
                  ALIterationRecord* out = nullptr);

ALRunRecord run_al(const ALSetup& setup, const ALConfig& cfg);

std::vector<std::string> strategy_random(const std::vector<std::string>& pool_ids, std::size_t beta, Rng& rng);

// Mean over pixels of the across-pass variance of the foreground probability.
std::vector<double> mc_dropout_uncertainty(const PredictorWeights& w, const PredictorConfig& cfg,
                                           const std::vector<const FloatTensor*>& images, int passes,
                                           double dropout_rate, Rng& rng);

std::vector<std::string> strategy_mc_dropout(const PredictorWeights& w, const PredictorConfig& cfg,
                                             const std::vector<std::string>& pool_ids,
                                             const std::vector<const FloatTensor*>& images, std::size_t beta,
                                             int passes, double dropout_rate, Rng& rng,
                                             std::vector<double>* uncertainties = nullptr);

// Scores the pool in the given order with the frozen controller; tau carries
// the last reward, the previous selection flag and a boundary flag on the
// first input. The state is advanced through the whole pool.
ScoreResult score_pool(const ControllerWeights& w, const ControllerConfig& cfg, const ControllerState& state,
                       const std::vector<std::string>& pool_ids, const std::vector<const FloatTensor*>& images,
                       double last_reward, const std::vector<std::string>& previous_selection);

}  // namespace alprio
