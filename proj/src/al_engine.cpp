#include "alprio/al_engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "alprio/analysis.hpp"
#include "alprio/kernels.hpp"
#include "alprio/parallel.hpp"
#include "alprio/reward.hpp"

namespace alprio {

void ALConfig::validate() const {
    if (beta0 < 2) throw ConfigError("al.beta0 must be >= 2");
    if (beta < 1) throw ConfigError("al.beta must be >= 1");
    if (!(phi > 0.0 && phi < 1.0)) throw ConfigError("al.phi must lie in (0,1)");
    if (max_iterations < 0) throw ConfigError("al.max_iterations must be >= 0");
    if (mc_passes < 2) throw ConfigError("al.mc_passes must be >= 2");
    if (!(mc_dropout_rate >= 0.0 && mc_dropout_rate < 1.0)) throw ConfigError("al.mc_dropout_rate must lie in [0,1)");
}

Oracle::Oracle(const LabeledDataset& pool) {
    for (const auto& p : pool.pairs) truth_.emplace(p.id, p.mask);
}

FloatTensor Oracle::label(const std::string& id) {
    const auto it = truth_.find(id);
    if (it == truth_.end()) throw DomainError("oracle: unknown sample id '" + id + "'");
    if (!dispensed_.insert(id).second) throw DomainError("oracle: sample '" + id + "' was already labelled");
    audit_.push_back(id);
    return it->second;
}

std::size_t validation_additions(std::size_t labelled_total, double phi, std::size_t current_val,
                                 std::size_t new_labels) {
    const double target = std::floor(static_cast<double>(labelled_total) * (1.0 - phi) + 1e-9);
    const auto t = static_cast<std::size_t>(std::max(0.0, target));
    if (t <= current_val) return 0;
    return std::min(t - current_val, new_labels);
}

namespace {

struct PoolIndex {
    std::map<std::string, std::size_t> position;
    const LabeledDataset* pool = nullptr;

    explicit PoolIndex(const LabeledDataset& ds) : pool(&ds) {
        for (std::size_t i = 0; i < ds.size(); ++i) position.emplace(ds.pairs[i].id, i);
    }
    const LabeledPair& at(const std::string& id) const { return pool->pairs[position.at(id)]; }
    std::vector<const FloatTensor*> images(const std::vector<std::string>& ids) const {
        std::vector<const FloatTensor*> out;
        for (const auto& id : ids) out.push_back(&at(id).image);
        return out;
    }
};

// The labelled pair as the engine sees it: pool image plus oracle mask.
LabeledPair annotate(const LabeledPair& unlabelled, Oracle& oracle) {
    LabeledPair p;
    p.id = unlabelled.id;
    p.image = unlabelled.image;
    p.mask = oracle.label(unlabelled.id);
    p.task_tag = unlabelled.task_tag;
    p.institute_tag = unlabelled.institute_tag;
    return p;
}

PredictorConfig iteration_config(const PredictorConfig& base, const ALConfig& cfg, int c) {
    PredictorConfig p = base;
    p.seed = splitmix64(cfg.seed ^ fnv1a("al/train")) + static_cast<std::uint64_t>(c);
    return p;
}

double support_reward(const PredictorWeights& w, const PredictorConfig& cfg, const LabeledDataset& val) {
    return raw_reward(validation_losses(w, cfg, val));
}

void check_setup(const ALSetup& setup, const ALConfig& cfg) {
    cfg.validate();
    if (setup.pool == nullptr || setup.holdout == nullptr) throw ConfigError("AL setup needs a pool and a holdout set");
    if (setup.pool->size() <= cfg.beta0)
        throw ConfigError("al.beta0 (" + std::to_string(cfg.beta0) + ") must be smaller than the pool size (" +
                          std::to_string(setup.pool->size()) + ")");
    if (setup.holdout->empty()) throw ConfigError("AL holdout set is empty");
    if (cfg.strategy == Strategy::proposed && (setup.controller == nullptr || setup.controller_config == nullptr))
        throw ConfigError("strategy 'proposed' needs controller weights");
    std::set<std::string> ids;
    for (const auto& p : setup.pool->pairs) ids.insert(p.id);
    for (const auto& p : setup.holdout->pairs)
        if (ids.count(p.id) != 0) throw ConfigError("holdout id '" + p.id + "' also appears in the pool");
}

}  // namespace

std::vector<std::string> strategy_random(const std::vector<std::string>& pool_ids, std::size_t beta, Rng& rng) {
    if (beta > pool_ids.size())
        throw DomainError("strategy_random: beta=" + std::to_string(beta) + " exceeds the pool size " +
                          std::to_string(pool_ids.size()));
    std::vector<std::string> ids = pool_ids;
    // Partial Fisher-Yates: the first beta slots are a uniform sample without replacement.
    for (std::size_t i = 0; i < beta; ++i) {
        const auto j = i + static_cast<std::size_t>(uniform_index(rng, ids.size() - i));
        std::swap(ids[i], ids[j]);
    }
    ids.resize(beta);
    return ids;
}

std::vector<double> mc_dropout_uncertainty(const PredictorWeights& w, const PredictorConfig& cfg,
                                           const std::vector<const FloatTensor*>& images, int passes,
                                           double dropout_rate, Rng& rng) {
    if (passes < 2) throw ConfigError("mc-dropout needs at least 2 passes");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw DomainError("mc-dropout rate must lie in [0,1)");
    const std::uint64_t base = rng();
    std::vector<double> out(images.size(), 0.0);
    const long n = static_cast<long>(images.size());
    ExceptionSlot error;
#pragma omp parallel for schedule(dynamic) num_threads(kernels::worker_threads())
    for (long i = 0; i < n; ++i) {
        try {
            const auto iu = static_cast<std::size_t>(i);
            Rng local(splitmix64(base ^ splitmix64(static_cast<std::uint64_t>(i))));
            const std::size_t px = cfg.height * cfg.width;
            std::vector<double> sum(px, 0.0), sq(px, 0.0);
            for (int k = 0; k < passes; ++k) {
                const FloatTensor p = dropout_rate > 0.0 ? predict_with_dropout(w, cfg, *images[iu], dropout_rate, local)
                                                         : predict(w, cfg, *images[iu]);
                for (std::size_t j = 0; j < px; ++j) {
                    sum[j] += p.data[j];
                    sq[j] += static_cast<double>(p.data[j]) * p.data[j];
                }
            }
            double u = 0.0;
            for (std::size_t j = 0; j < px; ++j) {
                const double m = sum[j] / passes;
                u += std::max(0.0, sq[j] / passes - m * m);
            }
            out[iu] = u / static_cast<double>(px);
        } catch (...) {
            error.capture();
        }
    }
    error.rethrow();
    return out;
}

std::vector<std::string> strategy_mc_dropout(const PredictorWeights& w, const PredictorConfig& cfg,
                                             const std::vector<std::string>& pool_ids,
                                             const std::vector<const FloatTensor*>& images, std::size_t beta,
                                             int passes, double dropout_rate, Rng& rng,
                                             std::vector<double>* uncertainties) {
    if (pool_ids.size() != images.size()) throw ShapeError("strategy_mc_dropout: ids and images differ in length");
    const auto u = mc_dropout_uncertainty(w, cfg, images, passes, dropout_rate, rng);
    std::vector<std::string> ids;
    for (std::size_t i : select_top_k(u, beta)) {
        ids.push_back(pool_ids[i]);
        if (uncertainties != nullptr) uncertainties->push_back(u[i]);
    }
    return ids;
}

ScoreResult score_pool(const ControllerWeights& w, const ControllerConfig& cfg, const ControllerState& state,
                       const std::vector<std::string>& pool_ids, const std::vector<const FloatTensor*>& images,
                       double last_reward, const std::vector<std::string>& previous_selection) {
    if (pool_ids.size() != images.size()) throw ShapeError("score_pool: ids and images differ in length");
    const std::set<std::string> prev(previous_selection.begin(), previous_selection.end());
    std::vector<ControllerInput> inputs;
    inputs.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i)
        inputs.push_back(ControllerInput{*images[i], prev.count(pool_ids[i]) != 0 ? 1.0f : 0.0f,
                                         static_cast<float>(last_reward), i == 0 ? 1.0f : 0.0f});
    return score_batch(w, cfg, state, inputs);
}

ALState init_al(const ALSetup& setup, const ALConfig& cfg, Oracle& oracle, ALRunRecord* record) {
    check_setup(setup, cfg);
    const PoolIndex index(*setup.pool);
    ALState st;
    st.strategy_rng = make_stream(cfg.seed, "al/strategy/" + to_string(cfg.strategy));
    st.split_rng = make_stream(cfg.seed, "al/split");

    std::vector<std::string> ids;
    for (const auto& p : setup.pool->pairs) ids.push_back(p.id);
    std::sort(ids.begin(), ids.end());

    // The initial set depends on the seed only, so every strategy starts from the same labels.
    Rng init_rng = make_stream(cfg.seed, "al/init");
    std::vector<std::string> initial = strategy_random(ids, cfg.beta0, init_rng);
    std::sort(initial.begin(), initial.end());

    LabeledDataset labelled;
    labelled.source = setup.pool->source;
    for (const auto& id : initial) labelled.pairs.push_back(annotate(index.at(id), oracle));
    auto [train, val] = split_dataset(labelled, cfg.phi, cfg.seed);
    st.support_train = std::move(train);
    st.support_val = std::move(val);

    const std::set<std::string> taken(initial.begin(), initial.end());
    for (const auto& id : ids)
        if (taken.count(id) == 0) st.unlabelled.push_back(id);

    if (setup.controller_config != nullptr) st.controller_state = reset_state(*setup.controller_config, {});
    const auto trained = train_until_converged(setup.initial_predictor, st.support_train, st.support_val,
                                               iteration_config(setup.predictor_config, cfg, 0));
    st.predictor = trained.weights;
    st.last_reward = support_reward(st.predictor, setup.predictor_config, st.support_val);

    if (record != nullptr) {
        const auto eval = evaluate_holdout(st.predictor, setup.predictor_config, *setup.holdout);
        record->strategy = cfg.strategy;
        record->seed = cfg.seed;
        record->beta0 = cfg.beta0;
        record->beta = cfg.beta;
        record->phi = cfg.phi;
        record->pool_size = setup.pool->size();
        record->initial_ids = initial;
        record->init_reward = st.last_reward;
        record->init_holdout_dice_mean = eval.mean_dice;
        record->init_holdout_dice_std = eval.std_dice;
    }
    return st;
}

bool al_iteration(ALState& st, const ALSetup& setup, const ALConfig& cfg, Oracle& oracle, ALIterationRecord* out) {
    if (st.unlabelled.size() < cfg.beta || cfg.beta == 0) return false;
    const PoolIndex index(*setup.pool);
    const auto images = index.images(st.unlabelled);

    std::vector<std::string> chosen;
    std::optional<double> mean_score;
    switch (cfg.strategy) {
        case Strategy::proposed: {
            const ScoreResult scored = score_pool(*setup.controller, *setup.controller_config, st.controller_state,
                                                  st.unlabelled, images, st.last_reward, st.previous_selection);
            st.controller_state = scored.state;
            double s = 0.0;
            for (std::size_t i : select_top_k(scored.scores, cfg.beta)) {
                chosen.push_back(st.unlabelled[i]);
                s += scored.scores[i];
            }
            mean_score = s / static_cast<double>(cfg.beta);
            break;
        }
        case Strategy::random:
            chosen = strategy_random(st.unlabelled, cfg.beta, st.strategy_rng);
            break;
        case Strategy::mc_dropout: {
            std::vector<double> u;
            chosen = strategy_mc_dropout(st.predictor, setup.predictor_config, st.unlabelled, images, cfg.beta,
                                         cfg.mc_passes, cfg.mc_dropout_rate, st.strategy_rng, &u);
            mean_score = std::accumulate(u.begin(), u.end(), 0.0) / static_cast<double>(u.size());
            break;
        }
    }

    const int c = st.c + 1;
    const std::size_t total = cfg.beta0 + cfg.beta * static_cast<std::size_t>(c);
    const std::size_t n_val = validation_additions(total, cfg.phi, st.support_val.size(), chosen.size());
    std::vector<std::size_t> order(chosen.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, st.split_rng);
    std::vector<bool> to_val(chosen.size(), false);
    for (std::size_t k = 0; k < n_val; ++k) to_val[order[k]] = true;
    for (std::size_t k = 0; k < chosen.size(); ++k) {
        LabeledPair p = annotate(index.at(chosen[k]), oracle);
        (to_val[k] ? st.support_val : st.support_train).pairs.push_back(std::move(p));
    }
    const std::set<std::string> picked(chosen.begin(), chosen.end());
    std::erase_if(st.unlabelled, [&](const std::string& id) { return picked.count(id) != 0; });

    const auto trained = train_until_converged(st.predictor, st.support_train, st.support_val,
                                               iteration_config(setup.predictor_config, cfg, c));
    st.predictor = trained.weights;
    st.last_reward = support_reward(st.predictor, setup.predictor_config, st.support_val);
    st.previous_selection = chosen;
    st.c = c;

    if (out != nullptr) {
        const auto eval = evaluate_holdout(st.predictor, setup.predictor_config, *setup.holdout);
        out->c = c;
        out->labelled_count = total;
        out->selected_ids = chosen;
        out->mean_score_of_selected = mean_score;
        out->support_val_reward = st.last_reward;
        out->holdout_dice_mean = eval.mean_dice;
        out->holdout_dice_std = eval.std_dice;
        out->support_train_size = st.support_train.size();
        out->support_val_size = st.support_val.size();
    }
    return true;
}

ALRunRecord run_al(const ALSetup& setup, const ALConfig& cfg) {
    check_setup(setup, cfg);
    Oracle oracle(*setup.pool);
    ALRunRecord record;
    ALState st = init_al(setup, cfg, oracle, &record);
    while (st.c < cfg.max_iterations) {
        ALIterationRecord it;
        if (!al_iteration(st, setup, cfg, oracle, &it)) break;
        record.iterations.push_back(std::move(it));
    }
    record.exhausted = st.unlabelled.size() < cfg.beta;
    record.oracle_queries = oracle.audit();
    return record;
}

}  // namespace alprio
