// Acceptance suite: one pass/fail line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "alprio/al_engine.hpp"
#include "alprio/analysis.hpp"
#include "alprio/controller.hpp"
#include "alprio/meta_train.hpp"
#include "alprio/params.hpp"
#include "alprio/predictor.hpp"
#include "alprio/reward.hpp"
#include "alprio/tensor_io.hpp"

using namespace alprio;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<const FloatTensor*> images_of(const LabeledDataset& ds) {
    std::vector<const FloatTensor*> out;
    for (const auto& p : ds.pairs) out.push_back(&p.image);
    return out;
}

constexpr std::size_t kSide = 16;

struct PipelineOptions {
    int meta_trials = 1500;
    ValidationWeighting weighting = ValidationWeighting::controller_scores;
};
PipelineOptions pipeline_options;

// ---------------------------------------------------------------------------
// Toy meta-learning pipeline shared by criteria 1, 7, 8 and 9.

struct Pipeline {
    ControllerConfig ccfg;
    PredictorConfig pcfg;
    MetaTrainResult meta;
    LabeledDataset pool;
    LabeledDataset holdout;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    ALConfig al;
    std::map<std::pair<Strategy, std::uint64_t>, ALRunRecord> runs;
    double seconds = 0.0;

    ALSetup setup() const {
        ALSetup s;
        s.pool = &pool;
        s.holdout = &holdout;
        s.predictor_config = pcfg;
        s.initial_predictor = meta.predictor;
        s.controller = &meta.controller;
        s.controller_config = &ccfg;
        return s;
    }
};

TaskSpec toy_spec(const std::string& name, ShapeClass shape, ShapeClass distractor, double offset, double gain,
                  double noise, int blur, const std::string& institute) {
    TaskSpec s;
    s.name = name;
    s.shape_class = shape;
    s.height = s.width = kSide;
    s.distractor_classes = {distractor};
    s.max_distractors = 1;
    s.institute_shift.intensity_offset = offset;
    s.institute_shift.contrast_gain = gain;
    s.institute_shift.noise_sigma = noise;
    s.institute_shift.blur_radius = blur;
    s.corruption.fraction = 0.3;
    s.institute_tag = institute;
    return s;
}

const Pipeline& pipeline() {
    static std::optional<Pipeline> cached;
    if (cached) return *cached;
    const auto t0 = std::chrono::steady_clock::now();
    Pipeline p;
    p.ccfg.height = p.ccfg.width = kSide;
    p.pcfg.height = p.pcfg.width = kSide;
    p.pcfg.max_epochs = 40;
    p.pcfg.convergence_patience = 5;

    // Four meta-train environments: known shapes, known sites.
    const std::vector<TaskSpec> train_specs = {
        toy_spec("disk", ShapeClass::disk, ShapeClass::ellipse, 0.00, 1.0, 0.03, 0, "site-a"),
        toy_spec("ellipse", ShapeClass::ellipse, ShapeClass::rectangle, 0.05, 1.0, 0.03, 0, "site-b"),
        toy_spec("rectangle", ShapeClass::rectangle, ShapeClass::cross, 0.10, 0.9, 0.03, 0, "site-c"),
        toy_spec("cross", ShapeClass::cross, ShapeClass::disk, 0.15, 1.1, 0.03, 0, "site-d"),
    };
    FamilyOptions fo;
    fo.train_ratio = 0.6;
    const EnvironmentDistribution family = generate_task_family(train_specs, 40, 101, fo);

    MetaTrainConfig mcfg;
    mcfg.total_trials = pipeline_options.meta_trials;
    mcfg.validation_weighting = pipeline_options.weighting;
    mcfg.seed = 7;
    p.meta = meta_train(family, p.ccfg, PPOConfig{}, p.pcfg, mcfg);

    // Unseen shape class from an unseen site, with planted label noise in the pool.
    TaskSpec test = toy_spec("ring", ShapeClass::ring, ShapeClass::blob, -0.10, 0.8, 0.05, 1, "site-x");
    p.pool = generate_task_dataset(test, 64, 202);
    TaskSpec clean = test;
    clean.name = "ring-holdout";
    clean.corruption.fraction = 0.0;
    p.holdout = generate_task_dataset(clean, 32, 303);

    p.al.beta0 = 8;
    p.al.beta = 4;
    p.al.phi = 0.75;
    p.al.max_iterations = 12;
    const ALSetup setup = p.setup();
    for (Strategy s : {Strategy::proposed, Strategy::random})
        for (std::uint64_t seed : p.seeds) {
            ALConfig cfg = p.al;
            cfg.strategy = s;
            cfg.seed = seed;
            p.runs.emplace(std::make_pair(s, seed), run_al(setup, cfg));
        }
    p.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("  (toy pipeline built in %.1f s)\n", p.seconds);
    cached = std::move(p);
    return *cached;
}

// ---------------------------------------------------------------------------

Outcome label_efficiency() {
    const Pipeline& p = pipeline();
    std::vector<double> prop_labels, rand_labels, prop_c;
    int prop_reached = 0, rand_reached = 0;
    for (std::uint64_t seed : p.seeds) {
        const auto a = labels_to_convergence(p.runs.at({Strategy::proposed, seed}));
        const auto b = labels_to_convergence(p.runs.at({Strategy::random, seed}));
        prop_labels.push_back(static_cast<double>(a.labelled));
        rand_labels.push_back(static_cast<double>(b.labelled));
        prop_c.push_back(a.c_star);
        prop_reached += a.reached;
        rand_reached += b.reached;
    }
    const double mp = median(prop_labels), mr = median(rand_labels);
    const int c = static_cast<int>(std::lround(median(prop_c)));
    std::vector<double> dp, dr;
    for (std::uint64_t seed : p.seeds) {
        dp.push_back(p.runs.at({Strategy::proposed, seed}).iterations.at(static_cast<std::size_t>(c - 1)).holdout_dice_mean);
        dr.push_back(p.runs.at({Strategy::random, seed}).iterations.at(static_cast<std::size_t>(c - 1)).holdout_dice_mean);
    }
    const ComparisonResult t = welch_ttest(dp, dr);
    const bool ratio_ok = mp <= 0.7 * mr;
    const bool welch_ok = t.p_value < 0.05 && t.a.mean > t.b.mean;
    std::ostringstream d;
    d << "median labels-to-plateau proposed " << mp << " vs random " << mr << " (ratio " << fmt("%.3f", mp / mr)
      << ", need <= 0.7; plateau reached " << prop_reached << "/5 vs " << rand_reached << "/5); holdout Dice at c="
      << c << ": " << fmt("%.4f", t.a.mean) << " vs " << fmt("%.4f", t.b.mean) << ", Welch p=" << fmt("%.4g", t.p_value)
      << "; runtime " << fmt("%.0f", p.seconds) << " s";
    return {ratio_ok && welch_ok && p.seconds <= 3600.0, d.str()};
}

Outcome bookkeeping() {
    // The labelled-count accounting of real runs, stopped at c.
    const LabeledDataset pool = generate_task_dataset(toy_spec("pool", ShapeClass::disk, ShapeClass::cross, 0, 1, 0.02, 0, "s"), 72, 5);
    const LabeledDataset holdout = generate_task_dataset(toy_spec("hold", ShapeClass::disk, ShapeClass::cross, 0, 1, 0.02, 0, "s"), 4, 6);
    ALSetup setup;
    setup.pool = &pool;
    setup.holdout = &holdout;
    setup.predictor_config.height = setup.predictor_config.width = kSide;
    setup.predictor_config.channel_widths = {2, 2, 2};
    setup.predictor_config.max_epochs = 1;
    setup.initial_predictor = init_predictor(setup.predictor_config, 1);
    struct Case {
        std::size_t beta0, beta;
        int c;
        std::size_t expected;
    };
    const std::vector<Case> cases = {{24, 4, 5, 44}, {16, 4, 8, 48}, {24, 8, 4, 56}, {16, 2, 13, 42}};
    bool ok = true;
    std::ostringstream d;
    for (const Case& k : cases) {
        ALConfig cfg;
        cfg.strategy = Strategy::random;
        cfg.beta0 = k.beta0;
        cfg.beta = k.beta;
        cfg.max_iterations = k.c;
        const ALRunRecord r = run_al(setup, cfg);
        const std::size_t counted = r.iterations.back().labelled_count;
        // A Dice series whose plateau starts exactly at c.
        std::vector<double> dice;
        for (int i = 1; i <= k.c; ++i) dice.push_back(0.1 * i);
        for (int i = 0; i < 3; ++i) dice.push_back(dice.back());
        const ConvergenceResult conv = labels_to_convergence(dice, k.beta0, k.beta);
        const bool good = counted == k.expected && conv.labelled == k.expected && conv.c_star == k.c &&
                          r.oracle_queries.size() == k.expected;
        ok = ok && good;
        d << "(" << k.beta0 << "," << k.beta << "," << k.c << ")->" << counted << "/" << conv.labelled << " ";
    }
    d << "expected 44 48 56 42";
    return {ok, d.str()};
}

Outcome reward_engine() {
    Rng rng = make_stream(3, "acceptance/reward");
    const double alpha = 0.9;
    std::vector<double> raw(100);
    for (auto& r : raw) r = -uniform01(rng);
    RewardState state;
    state.alpha_R = alpha;
    double worst = 0.0;
    for (std::size_t t = 0; t < raw.size(); ++t) {
        double closed = std::pow(alpha, static_cast<double>(t)) * raw[0];
        for (std::size_t k = 1; k <= t; ++k) closed += (1 - alpha) * std::pow(alpha, static_cast<double>(t - k)) * raw[k];
        const double baseline = state.initialised ? state.moving_average : raw[0];
        const FinalReward f = final_reward(raw[t], state);
        worst = std::max({worst, std::abs(f.state.moving_average - closed), std::abs(f.reward - (raw[t] - baseline))});
        state = f.state;
    }
    RewardState s2;
    s2.alpha_R = alpha;
    s2 = final_reward(-0.8, s2).state;
    double prev = final_reward(-0.3, s2).reward, worst_ratio = 0.0;
    s2 = final_reward(-0.3, s2).state;
    for (int t = 0; t < 50; ++t) {
        const FinalReward f = final_reward(-0.3, s2);
        worst_ratio = std::max(worst_ratio, std::abs(f.reward / prev - 0.9));
        prev = f.reward;
        s2 = f.state;
    }
    return {worst < 1e-10 && worst_ratio < 1e-9,
            "closed-form error " + fmt("%.3g", worst) + " (< 1e-10), decay-ratio error " + fmt("%.3g", worst_ratio) +
                " (< 1e-9)"};
}

Outcome reptile() {
    PredictorConfig cfg;
    cfg.height = cfg.width = kSide;
    const PredictorWeights a = init_predictor(cfg, 1), b = init_predictor(cfg, 2);
    const bool copy = reptile_sync(a, b, 1.0).params == b.params;
    const bool identity = reptile_sync(a, b, 0.0).params == a.params;
    const bool ends = anneal_epsilon(0, 300) == 1.0 && anneal_epsilon(299, 300) == 0.0;
    return {copy && identity && ends, std::string("eps=1 copy ") + (copy ? "exact" : "differs") + ", eps=0 identity " +
                                          (identity ? "exact" : "differs") + ", anneal endpoints " +
                                          (ends ? "1.0/0.0" : "wrong")};
}

Outcome policy() {
    Rng rng = make_stream(4, "acceptance/policy");
    double norm_err = 0.0;
    for (std::size_t b = 1; b <= 10; ++b) {
        std::vector<double> s(b);
        for (auto& v : s) v = uniform01(rng);
        double total = 0.0;
        for (std::size_t m = 0; m < (std::size_t{1} << b); ++m) {
            std::vector<int> a(b);
            for (std::size_t i = 0; i < b; ++i) a[i] = static_cast<int>((m >> i) & 1U);
            total += std::exp(log_policy(s, a));
        }
        norm_err = std::max(norm_err, std::abs(total - 1.0));
    }

    ControllerConfig cfg;
    cfg.height = cfg.width = kSide;
    cfg.encoder_channels = {2, 3, 3};
    cfg.fc_width = 8;
    cfg.hidden_size = 6;
    const ControllerWeights w = init_controller(cfg, 5);
    TaskSpec spec = toy_spec("probe", ShapeClass::disk, ShapeClass::cross, 0, 1, 0.02, 0, "s");
    const LabeledDataset ds = generate_task_dataset(spec, 20, 9);
    std::vector<Episode> eps;
    for (int e = 0; e < 2; ++e) {
        Episode ep;
        ControllerState st = initial_state(cfg);
        ep.initial_hidden = st.hidden;
        for (int t = 0; t < 3; ++t) {
            Transition tr;
            for (int i = 0; i < 3; ++i)
                tr.inputs.push_back({ds[static_cast<std::size_t>(e * 9 + t * 3 + i)].image, 0.0f, -0.2f * t, 0.0f});
            const ScoreResult s = score_batch(w, cfg, st, tr.inputs);
            st = s.state;
            tr.probs = s.scores;
            tr.actions = sample_actions(s.scores, rng);
            tr.value = s.values[0];
            tr.done = t == 2;
            tr.reward = tr.done ? 0.4 - 0.5 * e : 0.0;
            ep.steps.push_back(tr);
        }
        eps.push_back(ep);
    }
    const PPOResult r = ppo_update(w, cfg, eps, PPOConfig{});
    double ratio_err = 0.0;
    for (double q : r.first_epoch_ratios) ratio_err = std::max(ratio_err, std::abs(q - 1.0));

    const std::vector<double> adv = {0.7, -0.3, 1.2}, ret = {0.1, 0.2, 0.4};
    const ParamSet<double> pd = w.params.cast<double>();
    ParamSet<double> g = pd.zeros_like();
    ppo_episode_loss<double>(pd, cfg, eps[0], adv, ret, PPOConfig{}, &g);
    double fd_err = 0.0;
    int checked = 0;
    const double h = 1e-6;
    for (std::size_t k = 0; k < pd.total_size() && checked < 80; k += 7) {
        ParamSet<double> up = pd, dn = pd;
        up.flat(k) += h;
        dn.flat(k) -= h;
        const double fd = (ppo_episode_loss<double>(up, cfg, eps[0], adv, ret, PPOConfig{}, nullptr).loss -
                           ppo_episode_loss<double>(dn, cfg, eps[0], adv, ret, PPOConfig{}, nullptr).loss) /
                          (2 * h);
        const double an = g.flat(k);
        if (std::max(std::abs(fd), std::abs(an)) < 1e-7) continue;
        ++checked;
        fd_err = std::max(fd_err, std::abs(fd - an) / std::max(std::abs(fd), std::abs(an)));
    }
    return {norm_err < 1e-9 && ratio_err < 1e-6 && fd_err < 1e-3 && checked > 20,
            "normalisation error " + fmt("%.3g", norm_err) + " (< 1e-9), first-epoch ratio error " +
                fmt("%.3g", ratio_err) + " (< 1e-6), policy-gradient FD rel. error " + fmt("%.3g", fd_err) +
                " over " + std::to_string(checked) + " parameters (< 1e-3)"};
}

Outcome predictor_numerics() {
    Rng rng = make_stream(6, "acceptance/dice");
    const std::size_t n = 12 * 12;
    std::vector<double> probs(n), mask(n), grad(n);
    for (std::size_t i = 0; i < n; ++i) {
        probs[i] = 0.05 + 0.9 * uniform01(rng);
        mask[i] = uniform01(rng) < 0.4 ? 1.0 : 0.0;
    }
    dice_loss_with_grad<double>(probs, mask, grad);
    double fd_err = 0.0;
    const double h = 1e-6;
    std::vector<double> scratch(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto up = probs, dn = probs;
        up[i] += h;
        dn[i] -= h;
        const double fd = (dice_loss_with_grad<double>(up, mask, scratch) - dice_loss_with_grad<double>(dn, mask, scratch)) / (2 * h);
        fd_err = std::max(fd_err, std::abs(fd - grad[i]) / std::max(std::abs(fd), 1e-12));
    }
    int mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t side = 1 + uniform_index(rng, 16);
        FloatTensor a({side, side}), b({side, side});
        std::set<std::size_t> sa, sb;
        const double pa = uniform01(rng), pb = uniform01(rng);
        for (std::size_t i = 0; i < side * side; ++i) {
            if (uniform01(rng) < pa) a[i] = 1.0f, sa.insert(i);
            if (uniform01(rng) < pb) b[i] = 1.0f, sb.insert(i);
        }
        std::vector<std::size_t> inter;
        std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(inter));
        const double expected = sa.empty() && sb.empty()
                                    ? 1.0
                                    : 2.0 * static_cast<double>(inter.size()) / static_cast<double>(sa.size() + sb.size());
        if (dice_score(a, b) != expected) ++mismatches;
    }
    return {fd_err < 1e-4 && mismatches == 0, "soft-Dice FD rel. error " + fmt("%.3g", fd_err) +
                                                  " (< 1e-4); dice_score mismatches vs set oracle " +
                                                  std::to_string(mismatches) + "/1000"};
}

std::string directory_bytes(const fs::path& root) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::string out;
    for (const auto& f : files) out += fs::relative(f, root).string() + "\n" + read_text_file(f);
    return out;
}

Outcome frozen_controller(const fs::path& work) {
    const Pipeline& p = pipeline();
    save_controller(work / "c7-before", p.meta.controller, p.ccfg, PPOConfig{});
    const std::string before = directory_bytes(work / "c7-before");
    ALSetup setup = p.setup();
    ALConfig cfg = p.al;
    cfg.strategy = Strategy::proposed;
    cfg.seed = 99;
    cfg.max_iterations = 4;
    Oracle oracle(p.pool);
    ALState state = init_al(setup, cfg, oracle);
    // Probe scores at each iteration's memory and fed-back reward.
    const FloatTensor& probe = p.holdout[0].image;
    std::vector<std::pair<double, double>> reward_score;
    for (int it = 0; it < 4; ++it) {
        const ScoreResult s = score_pool(p.meta.controller, p.ccfg, state.controller_state, {"probe"}, {&probe},
                                         state.last_reward, {});
        reward_score.emplace_back(state.last_reward, s.scores[0]);
        if (!al_iteration(state, setup, cfg, oracle)) break;
    }
    // Same memory, two different rewards.
    const ScoreResult lo = score_pool(p.meta.controller, p.ccfg, state.controller_state, {"probe"}, {&probe}, -0.9, {});
    const ScoreResult hi = score_pool(p.meta.controller, p.ccfg, state.controller_state, {"probe"}, {&probe}, -0.1, {});
    save_controller(work / "c7-after", p.meta.controller, p.ccfg, PPOConfig{});
    const std::string after = directory_bytes(work / "c7-after");

    int differing = 0, pairs = 0;
    for (std::size_t i = 1; i < reward_score.size(); ++i)
        if (reward_score[i].first != reward_score[i - 1].first) {
            ++pairs;
            differing += reward_score[i].second != reward_score[i - 1].second;
        }
    const bool frozen = before == after;
    const bool adapts = pairs > 0 && differing == pairs && lo.scores[0] != hi.scores[0];
    std::ostringstream d;
    d << "weights " << (frozen ? "byte-identical" : "CHANGED") << " after the AL run; probe score changed in "
      << differing << "/" << pairs << " iterations with a new reward; same-state reward swap "
      << fmt("%.6f", lo.scores[0]) << " vs " << fmt("%.6f", hi.scores[0]);
    return {frozen && adapts, d.str()};
}

Outcome mc_dropout_sanity() {
    const Pipeline& p = pipeline();
    std::vector<std::string> ids;
    for (const auto& q : p.pool.pairs) ids.push_back(q.id);
    const auto images = images_of(p.pool);
    Rng r1 = make_stream(1, "acceptance/mc"), r2 = make_stream(2, "acceptance/mc");
    std::vector<double> u1, u2;
    const auto s1 = strategy_mc_dropout(p.meta.predictor, p.pcfg, ids, images, 4, 5, 0.0, r1, &u1);
    const auto s2 = strategy_mc_dropout(p.meta.predictor, p.pcfg, ids, images, 4, 5, 0.0, r2, &u2);
    const auto all = mc_dropout_uncertainty(p.meta.predictor, p.pcfg, images, 5, 0.0, r1);
    const bool degenerate =
        s1 == s2 && std::all_of(all.begin(), all.end(), [](double v) { return v == 0.0; });

    std::set<std::string> corrupted;
    for (const auto& q : p.pool.pairs)
        if (q.corrupted) corrupted.insert(q.id);
    auto fraction = [&](Strategy s) {
        double bad = 0, total = 0;
        for (std::uint64_t seed : p.seeds) {
            const ALRunRecord& r = p.runs.at({s, seed});
            for (std::size_t c = 0; c < std::min<std::size_t>(5, r.iterations.size()); ++c)
                for (const auto& id : r.iterations[c].selected_ids) {
                    total += 1;
                    bad += corrupted.count(id);
                }
        }
        return bad / total;
    };
    const double fp = fraction(Strategy::proposed), fr = fraction(Strategy::random);
    const double pool_rate = static_cast<double>(corrupted.size()) / static_cast<double>(p.pool.size());
    return {degenerate && fp < fr, std::string("rate 0: ") + (degenerate ? "zero uncertainty, same selection" : "NOT degenerate") +
                                       "; corrupted fraction selected at c<=5 over 5 seeds: proposed " +
                                       fmt("%.3f", fp) + " vs random " + fmt("%.3f", fr) + " (pool rate " +
                                       fmt("%.3f", pool_rate) + ")"};
}

Outcome mmd_suite(const fs::path& work) {
    MMDConfig cfg;
    const TaskSpec base = toy_spec("inst-a", ShapeClass::disk, ShapeClass::ellipse, 0.0, 1.0, 0.03, 0, "a");
    TaskSpec shifted = base;
    shifted.name = "inst-b";
    shifted.institute_shift.intensity_offset = 0.5;
    TaskSpec a_spec = base, b_spec = shifted;
    a_spec.corruption.fraction = b_spec.corruption.fraction = 0.0;
    const LabeledDataset a = generate_task_dataset(a_spec, 200, 11);
    const LabeledDataset b = generate_task_dataset(b_spec, 200, 12);
    const auto ia = images_of(a), ib = images_of(b);
    auto reversed = ia;
    std::reverse(reversed.begin(), reversed.end());
    const double self = mmd(ia, reversed, cfg);
    const double ab = mmd(ia, ib, cfg), ba = mmd(ib, ia, cfg);

    // Permutation null from an explicit Gram matrix over the pooled images.
    std::vector<const FloatTensor*> pooled = ia;
    pooled.insert(pooled.end(), ib.begin(), ib.end());
    const std::size_t n = pooled.size(), half = ia.size();
    const double sigma = median_heuristic_bandwidth(ia, ib, cfg);
    std::vector<double> gram(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            double d2 = 0.0;
            for (std::size_t k = 0; k < pooled[i]->size(); ++k) {
                const double diff = double((*pooled[i])[k]) - double((*pooled[j])[k]);
                d2 += diff * diff;
            }
            gram[i * n + j] = gram[j * n + i] = std::exp(-d2 / (2 * sigma * sigma));
        }
    auto stat = [&](const std::vector<std::size_t>& idx) {
        double xx = 0, yy = 0, xy = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const double k = gram[idx[i] * n + idx[j]];
                if (i < half && j < half) xx += k;
                else if (i >= half && j >= half) yy += k;
                else xy += k;
            }
        const double m = static_cast<double>(half);
        return xx / (m * m) + yy / (m * m) - xy / (m * m);
    };
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const double oracle = stat(idx);
    Rng rng = make_stream(13, "acceptance/permutation");
    std::vector<double> null;
    for (int p = 0; p < 200; ++p) {
        shuffle(idx, rng);
        null.push_back(stat(idx));
    }
    std::sort(null.begin(), null.end());
    const double q99 = null[static_cast<std::size_t>(std::ceil(0.99 * 200)) - 1];

    // Per-iteration series from the toy AL runs.
    const Pipeline& p = pipeline();
    std::vector<ALRunRecord> records;
    for (const auto& [key, r] : p.runs) records.push_back(r);
    ReportOptions opt;
    opt.pool = &p.pool;
    opt.holdout = &p.holdout;
    emit_report(records, work / "c9-report", opt);
    std::istringstream csv(read_text_file(work / "c9-report" / "mmd_series.csv"));
    std::string line;
    std::getline(csv, line);
    const bool header_ok = line.find("mmd_support_vs_holdout") != std::string::npos;
    std::size_t rows = 0, filled = 0;
    while (std::getline(csv, line)) {
        ++rows;
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (cells.size() >= 7 && !cells[6].empty()) ++filled;
    }
    std::size_t expected_rows = 0;
    for (const auto& r : records) expected_rows += r.iterations.size() + 1;
    const auto summary = nlohmann::json::parse(read_text_file(work / "c9-report" / "summary.json"));
    const auto trend = summary["mmd_trend_proposed"];

    const bool ok = self <= 1e-12 && ab == ba && ab > q99 && std::abs(ab - oracle) < 1e-9 && header_ok &&
                    rows == expected_rows && filled == rows && !trend.is_null();
    std::ostringstream d;
    d << "self " << fmt("%.3g", self) << " (<= 1e-12), symmetric " << (ab == ba ? "exact" : "NO") << ", two-site MMD "
      << fmt("%.5f", ab) << " vs null q99 " << fmt("%.5f", q99) << " (oracle diff " << fmt("%.2g", std::abs(ab - oracle))
      << "), series rows " << filled << "/" << expected_rows << "; proposed support-vs-holdout trend: "
      << trend.dump();
    return {ok, d.str()};
}

int run_command(const std::string& cmd, const fs::path& log) {
    const std::string full = "ALPRIO_THREADS=1 " + cmd + " > '" + log.string() + "' 2>&1";
    const int status = std::system(full.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const char* kPipelineConfig = R"([run]
seed = 21

[synth]
height = 16
width = 16
samples_per_task = 16
pool_size = 24
holdout_size = 8

[task.disk]
role = meta-train
shape = disk
corruption_fraction = 0.25

[task.cross]
role = meta-train
shape = cross
intensity_offset = 0.1
corruption_fraction = 0.25

[task.ring]
role = meta-test
shape = ring
intensity_offset = -0.1
corruption_fraction = 0.25

[predictor]
max_epochs = 6
convergence_patience = 2

[meta_train]
total_trials = 4

[al]
beta0 = 6
beta = 3
)";

Outcome reproducibility(const fs::path& work) {
    const std::string cli = std::string("'") + ALPRIO_CLI_PATH + "'";
    fs::create_directories(work / "c10");
    write_text_file(work / "c10" / "pipeline.ini", kPipelineConfig);
    auto once = [&](const std::string& tag) -> std::optional<std::string> {
        const fs::path root = work / "c10" / tag;
        fs::remove_all(root);
        fs::create_directories(root);
        const std::string cfg = " --config '" + (work / "c10" / "pipeline.ini").string() + "'";
        const std::string q = "'" + root.string();
        const std::string pool = " --pool " + q + "/data/meta-test/ring/pool' --holdout " + q + "/data/meta-test/ring/holdout'";
        const std::vector<std::string> steps = {
            cli + " synth" + cfg + " --out " + q + "/data'",
            cli + " meta-train" + cfg + " --envs " + q + "/data/meta-train' --out " + q + "/ckpt'",
            cli + " al-run" + cfg + pool + " --strategy proposed,random,mc-dropout --seeds 1,2 --controller-ckpt " +
                q + "/ckpt' --predictor-ckpt " + q + "/ckpt/predictor' --out " + q + "/runs'",
            cli + " analyze --records " + q + "/runs/*.jsonl' --out " + q + "/report' --pool-dir " + q +
                "/data/meta-test/ring/pool' --holdout-dir " + q + "/data/meta-test/ring/holdout'",
        };
        for (const auto& s : steps)
            if (run_command(s, root / "step.log") != 0) return std::nullopt;
        return directory_bytes(root / "runs") + "\n--\n" + directory_bytes(root / "report") + "\n--\n" +
               directory_bytes(root / "ckpt");
    };
    const auto a = once("first"), b = once("second");
    if (!a || !b) return {false, "pipeline command failed; see " + (work / "c10").string()};
    const std::size_t records = std::distance(fs::directory_iterator(work / "c10" / "first" / "runs"), fs::directory_iterator{});
    return {*a == *b, std::to_string(records) + " record files, report and checkpoints " +
                          (*a == *b ? "bit-identical" : "DIFFER") + " across two single-threaded runs (" +
                          std::to_string(a->size()) + " bytes compared)"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"alprio acceptance suite"};
    std::string work_dir = "acceptance_work";
    std::vector<int> only;
    app.add_option("--work-dir", work_dir, "scratch directory");
    std::string weighting = to_string(pipeline_options.weighting);
    app.add_option("--only", only, "criterion numbers to run");
    app.add_option("--meta-trials", pipeline_options.meta_trials, "meta-training trials of the toy pipeline");
    app.add_option("--validation-weighting", weighting, "controller-scores or uniform");
    CLI11_PARSE(app, argc, argv);
    pipeline_options.weighting = parse_validation_weighting(weighting);
    const fs::path work = fs::absolute(work_dir);
    fs::create_directories(work);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"label-efficiency ordering", label_efficiency},
        {"labelled-sample bookkeeping", bookkeeping},
        {"reward engine", reward_engine},
        {"reptile endpoints", reptile},
        {"policy correctness", policy},
        {"predictor numerics", predictor_numerics},
        {"frozen controller and adaptation", [&] { return frozen_controller(work); }},
        {"mc-dropout sanity and corrupted-sample avoidance", mc_dropout_sanity},
        {"mmd suite", [&] { return mmd_suite(work); }},
        {"pipeline reproducibility", [&] { return reproducibility(work); }},
    };
    int failed = 0, ran = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int number = static_cast<int>(i + 1);
        if (!only.empty() && std::find(only.begin(), only.end(), number) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", number, criteria[i].first.c_str(),
                    o.detail.c_str(), secs);
        std::fflush(stdout);
        ++ran;
        failed += o.pass ? 0 : 1;
    }
    std::printf("%d/%d criteria passed\n", ran - failed, ran);
    return failed == 0 ? 0 : 1;
}
