#include "alprio/cli.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "alprio/al_engine.hpp"
#include "alprio/analysis.hpp"
#include "alprio/controller.hpp"
#include "alprio/kernels.hpp"
#include "alprio/meta_train.hpp"
#include "alprio/run_config.hpp"
#include "alprio/synth_data.hpp"

namespace alprio {

namespace fs = std::filesystem;

namespace {

RunConfig config_or_default(const fs::path& path, std::optional<std::uint64_t> seed) {
    RunConfig c;
    if (!path.empty()) c = load_run_config(path);
    if (seed) c.seed = *seed;
    c.al.seed = c.meta_train.seed = c.predictor.seed = c.seed;
    return c;
}

void make_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

fs::path manifest_in(const fs::path& p) {
    if (fs::is_regular_file(p)) return p;
    const fs::path m = p / "manifest.json";
    if (!fs::exists(m)) throw IoError("no manifest.json in " + p.string());
    return m;
}

fs::path checkpoint_part(const fs::path& p, const std::string& part) {
    if (fs::exists(p / part)) return p / part;
    return p;
}

void match_dims(PredictorConfig& pcfg, ControllerConfig& ccfg, const LabeledDataset& ds) {
    const auto& first = ds.pairs.front();
    pcfg.height = ccfg.height = first.height();
    pcfg.width = ccfg.width = first.width();
    pcfg.validate();
    ccfg.validate();
}

TaskSpec holdout_spec(const TaskSpec& spec) {
    TaskSpec h = spec;
    h.name = spec.name + "-holdout";
    h.corruption = Corruption{};
    if (h.task_tag.empty()) h.task_tag = to_string(spec.shape_class);
    return h;
}

}  // namespace

std::string record_file_name(const std::string& strategy, std::uint64_t seed) {
    return to_string(parse_strategy(strategy)) + "-seed" + std::to_string(seed) + ".jsonl";
}

void cmd_synth(const SynthOptions& options) {
    const RunConfig cfg = config_or_default(options.config, options.seed);
    if (cfg.synth.tasks.empty()) throw ConfigError("config defines no [task.<name>] sections");
    // Generate everything first so a bad spec leaves no partial output.
    std::vector<std::pair<fs::path, LabeledDataset>> outputs;
    for (const auto& t : cfg.synth.tasks) {
        if (t.role == TaskRole::meta_train) {
            outputs.emplace_back(options.out_dir / "meta-train" / t.spec.name,
                                 generate_task_dataset(t.spec, cfg.synth.samples_per_task, cfg.seed));
        } else {
            const fs::path base = options.out_dir / "meta-test" / t.spec.name;
            outputs.emplace_back(base / "pool", generate_task_dataset(t.spec, cfg.synth.pool_size, cfg.seed));
            outputs.emplace_back(base / "holdout",
                                 generate_task_dataset(holdout_spec(t.spec), cfg.synth.holdout_size, cfg.seed));
        }
    }
    for (const auto& [dir, ds] : outputs) {
        make_dir(dir);
        save_dataset(ds, dir);
    }
}

void cmd_meta_train(const MetaTrainOptions& options) {
    RunConfig cfg = config_or_default(options.config, options.seed);
    if (!fs::is_directory(options.envs_dir)) throw IoError("environment directory not found: " + options.envs_dir.string());
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(options.envs_dir))
        if (e.is_directory() && fs::exists(e.path() / "manifest.json")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw ConfigError("no environments (sub-directories with manifest.json) in " + options.envs_dir.string());
    if (dirs.size() < 2) {
        if (!options.allow_single_environment)
            throw ConfigError("meta-training needs at least 2 environments, found " + std::to_string(dirs.size()) +
                              " (pass --allow-single-env to proceed)");
        std::cerr << "alprio: warning: meta-training on a single environment\n";
    }
    EnvironmentDistribution dist;
    for (const auto& d : dirs) {
        const LabeledDataset ds = load_dataset(d / "manifest.json");
        dist.environments.push_back(make_environment(d.filename().string(), ds, cfg.controller_train_ratio, cfg.seed));
    }
    dist.sampling_weights.assign(dist.environments.size(), 1.0 / static_cast<double>(dist.environments.size()));
    match_dims(cfg.predictor, cfg.controller, dist.environments.front().controller_train);
    for (const auto& env : dist.environments) {
        const auto& p = env.controller_train.pairs.front();
        if (p.height() != cfg.predictor.height || p.width() != cfg.predictor.width)
            throw ConfigError("environment '" + env.env_id + "' has a different image size");
    }

    make_dir(options.out_ckpt);
    std::ofstream log(options.out_ckpt / "train_log.jsonl", std::ios::trunc);
    if (!log) throw IoError("cannot write " + (options.out_ckpt / "train_log.jsonl").string());
    MetaTrainHooks hooks;
    hooks.on_trial = [&](const TrialLog& t) { log << t.to_json_line() << '\n' << std::flush; };
    hooks.on_checkpoint = [&](int done, const ControllerWeights& cw, const PredictorWeights& pw) {
        const fs::path dir = done == cfg.meta_train.total_trials
                                 ? options.out_ckpt
                                 : options.out_ckpt / "checkpoints" / ("trial-" + std::to_string(done));
        save_controller(dir / "controller", cw, cfg.controller, cfg.ppo);
        save_predictor(dir / "predictor", pw, cfg.predictor);
    };
    const MetaTrainResult result = meta_train(dist, cfg.controller, cfg.ppo, cfg.predictor, cfg.meta_train, hooks);
    if (result.trials_below_min_score > 0)
        std::cerr << "alprio: warning: " << result.trials_below_min_score << " of " << cfg.meta_train.total_trials
                  << " trials had a mean score below " << cfg.ppo.min_mean_score << '\n';
}

std::vector<fs::path> cmd_al_run(const ALRunOptions& options) {
    RunConfig cfg = config_or_default(options.config, std::nullopt);
    if (options.beta0) cfg.al.beta0 = *options.beta0;
    if (options.beta) cfg.al.beta = *options.beta;
    if (options.phi) cfg.al.phi = *options.phi;
    if (options.max_iterations) cfg.al.max_iterations = *options.max_iterations;
    if (options.jobs < 1) throw ConfigError("--jobs must be >= 1");
    std::vector<Strategy> strategies;
    for (const auto& s : options.strategies) strategies.push_back(parse_strategy(s));
    if (strategies.empty()) throw ConfigError("at least one strategy is required");
    const std::vector<std::uint64_t> seeds = options.seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : options.seeds;
    cfg.al.validate();

    const LabeledDataset pool = load_dataset(manifest_in(options.pool_dir));
    const LabeledDataset holdout = load_dataset(manifest_in(options.holdout_dir));
    if (pool.size() <= cfg.al.beta0)
        throw ConfigError("al.beta0 (" + std::to_string(cfg.al.beta0) + ") must be smaller than the pool size (" +
                          std::to_string(pool.size()) + ")");

    std::optional<LoadedController> controller;
    const bool need_controller = std::count(strategies.begin(), strategies.end(), Strategy::proposed) > 0;
    if (need_controller && !options.controller_ckpt)
        throw ConfigError("strategy 'proposed' needs --controller-ckpt");
    if (options.controller_ckpt) controller = load_controller(checkpoint_part(*options.controller_ckpt, "controller"));

    PredictorConfig pcfg = cfg.predictor;
    std::optional<PredictorWeights> warm;
    if (options.predictor_ckpt) {
        auto [w, loaded_cfg] = load_predictor(checkpoint_part(*options.predictor_ckpt, "predictor"));
        loaded_cfg.learning_rate = pcfg.learning_rate;
        loaded_cfg.convergence_patience = pcfg.convergence_patience;
        loaded_cfg.min_delta = pcfg.min_delta;
        loaded_cfg.max_epochs = pcfg.max_epochs;
        loaded_cfg.batch_size = pcfg.batch_size;
        pcfg = loaded_cfg;
        warm = std::move(w);
    }
    ControllerConfig ccfg = controller ? controller->config : cfg.controller;
    const auto& first = pool.pairs.front();
    if (warm) {
        if (pcfg.height != first.height() || pcfg.width != first.width())
            throw ConfigError("predictor checkpoint image size does not match the pool");
    } else {
        match_dims(pcfg, ccfg, pool);
    }
    if (controller && (ccfg.height != first.height() || ccfg.width != first.width()))
        throw ConfigError("controller checkpoint image size does not match the pool");

    struct Job {
        Strategy strategy;
        std::uint64_t seed;
        fs::path path;
    };
    std::vector<Job> jobs;
    for (Strategy s : strategies)
        for (std::uint64_t seed : seeds)
            jobs.push_back({s, seed, options.out_dir / record_file_name(to_string(s), seed)});
    make_dir(options.out_dir);

    const int workers = std::max(1, std::min<int>(options.jobs, static_cast<int>(jobs.size())));
    const int saved_threads = kernels::worker_threads();
    if (workers > 1) kernels::set_worker_threads(std::max(1, saved_threads / workers));
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    const auto work = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            try {
                const Job& job = jobs[i];
                ALConfig al = cfg.al;
                al.seed = job.seed;
                al.strategy = job.strategy;
                ALSetup setup;
                setup.pool = &pool;
                setup.holdout = &holdout;
                setup.predictor_config = pcfg;
                setup.initial_predictor =
                    warm ? *warm : init_predictor(pcfg, splitmix64(job.seed ^ fnv1a("al/predictor-init")));
                if (controller) {
                    setup.controller = &controller->weights;
                    setup.controller_config = &ccfg;
                }
                write_record(job.path, run_al(setup, al));
            } catch (...) {
                const std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    std::vector<std::thread> threads;
    for (int t = 1; t < workers; ++t) threads.emplace_back(work);
    work();
    for (auto& t : threads) t.join();
    kernels::set_worker_threads(saved_threads);
    if (failure) std::rethrow_exception(failure);

    std::vector<fs::path> paths;
    for (const auto& j : jobs) paths.push_back(j.path);
    return paths;
}

std::vector<fs::path> expand_glob(const std::string& pattern) {
    const fs::path p(pattern);
    const fs::path dir = p.has_parent_path() ? p.parent_path() : fs::path(".");
    const std::string name = p.filename().string();
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && fnmatch(name.c_str(), e.path().filename().c_str(), 0) == 0)
            out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

void cmd_analyze(const AnalyzeOptions& options) {
    const RunConfig cfg = config_or_default(options.config, std::nullopt);
    const auto paths = expand_glob(options.records_glob);
    if (paths.empty()) throw ConfigError("no AL records match '" + options.records_glob + "'");
    std::vector<ALRunRecord> records;
    for (const auto& p : paths) records.push_back(read_record(p));
    std::optional<LabeledDataset> pool, holdout;
    if (options.pool_dir) pool = load_dataset(manifest_in(*options.pool_dir));
    if (options.holdout_dir) holdout = load_dataset(manifest_in(*options.holdout_dir));
    if (holdout && !pool) throw ConfigError("--holdout-dir needs --pool-dir for the MMD series");
    ReportOptions ro;
    ro.plateau = cfg.analyze.plateau;
    ro.mmd = cfg.analyze.mmd;
    ro.pool = pool ? &*pool : nullptr;
    ro.holdout = holdout ? &*holdout : nullptr;
    emit_report(records, options.out_dir, ro);
}

int run_cli(int argc, char** argv) {
    CLI::App app{"Meta-learned sample prioritisation for active learning on synthetic segmentation tasks", "alprio"};
    app.require_subcommand(1);

    SynthOptions synth;
    std::uint64_t synth_seed = 0;
    auto* s = app.add_subcommand("synth", "Generate meta-train environments and meta-test pools");
    s->add_option("--config", synth.config, "INI configuration")->required();
    s->add_option("--out", synth.out_dir, "Output directory")->required();
    auto* synth_seed_opt = s->add_option("--seed", synth_seed, "Global seed (overrides [run] seed)");

    MetaTrainOptions mt;
    std::uint64_t mt_seed = 0;
    auto* m = app.add_subcommand("meta-train", "Meta-train the controller on a distribution of environments");
    m->add_option("--envs", mt.envs_dir, "Directory of environments (synth's meta-train/)")->required();
    m->add_option("--out", mt.out_ckpt, "Checkpoint directory")->required();
    m->add_option("--config", mt.config, "INI configuration");
    auto* mt_seed_opt = m->add_option("--seed", mt_seed, "Global seed (overrides [run] seed)");
    m->add_flag("--allow-single-env", mt.allow_single_environment, "Proceed with a single environment");

    ALRunOptions al;
    std::string strategies = "proposed", seeds;
    std::size_t beta0 = 0, beta = 0;
    double phi = 0.0;
    int max_iter = 0;
    std::string controller_ckpt, predictor_ckpt;
    auto* a = app.add_subcommand("al-run", "Run active learning with one or more strategies and seeds");
    a->add_option("--pool", al.pool_dir, "Pool dataset directory")->required();
    a->add_option("--holdout", al.holdout_dir, "Holdout dataset directory")->required();
    a->add_option("--controller-ckpt", controller_ckpt, "Meta-train output or controller directory");
    a->add_option("--predictor-ckpt", predictor_ckpt, "Predictor checkpoint used as the warm start");
    a->add_option("--strategy", strategies, "Comma-separated: proposed, random, mc-dropout");
    a->add_option("--seeds,--seed", seeds, "Comma-separated seeds");
    auto* beta0_opt = a->add_option("--beta0", beta0, "Initial labelled samples");
    auto* beta_opt = a->add_option("--beta", beta, "Samples labelled per iteration");
    auto* phi_opt = a->add_option("--phi", phi, "Support-train share");
    auto* iter_opt = a->add_option("--max-iterations", max_iter, "Iteration cap");
    a->add_option("--config", al.config, "INI configuration");
    a->add_option("--out", al.out_dir, "Record directory")->required();
    a->add_option("--jobs", al.jobs, "Independent runs executed in parallel");

    AnalyzeOptions an;
    std::string pool_dir, holdout_dir;
    auto* r = app.add_subcommand("analyze", "Summarise AL records into report tables");
    r->add_option("--records", an.records_glob, "Record file pattern, e.g. runs/*.jsonl")->required();
    r->add_option("--out", an.out_dir, "Report directory")->required();
    r->add_option("--pool-dir", pool_dir, "Pool dataset (enables the MMD series)");
    r->add_option("--holdout-dir", holdout_dir, "Holdout dataset");
    r->add_option("--config", an.config, "INI configuration");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (s->parsed()) {
            if (*synth_seed_opt) synth.seed = synth_seed;
            cmd_synth(synth);
        } else if (m->parsed()) {
            if (*mt_seed_opt) mt.seed = mt_seed;
            cmd_meta_train(mt);
        } else if (a->parsed()) {
            al.strategies = split_list(strategies);
            if (!seeds.empty()) al.seeds = parse_seed_list(seeds);
            if (!controller_ckpt.empty()) al.controller_ckpt = controller_ckpt;
            if (!predictor_ckpt.empty()) al.predictor_ckpt = predictor_ckpt;
            if (*beta0_opt) al.beta0 = beta0;
            if (*beta_opt) al.beta = beta;
            if (*phi_opt) al.phi = phi;
            if (*iter_opt) al.max_iterations = max_iter;
            cmd_al_run(al);
        } else if (r->parsed()) {
            if (!pool_dir.empty()) an.pool_dir = pool_dir;
            if (!holdout_dir.empty()) an.holdout_dir = holdout_dir;
            cmd_analyze(an);
        }
    } catch (const Error& e) {
        std::cerr << "alprio: error: " << e.what() << '\n';
        return exit_code_for(e.kind());
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "alprio: error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "alprio: error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace alprio
