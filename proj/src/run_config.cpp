#include "alprio/run_config.hpp"

#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "alprio/error.hpp"
#include "alprio/tensor_io.hpp"

namespace alprio {

namespace pt = boost::property_tree;

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(text);
    while (std::getline(in, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b == std::string::npos) continue;
        out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

namespace {

template <class T>
T parse_value(const std::string& key, const std::string& text) {
    std::istringstream in(text);
    T v{};
    in >> v;
    if (in.fail() || !(in >> std::ws).eof())
        throw ConfigError("invalid value '" + text + "' for " + key);
    return v;
}

std::size_t parse_count(const std::string& key, const std::string& text) {
    if (!text.empty() && text.front() == '-') throw ConfigError(key + " must be non-negative, got '" + text + "'");
    return parse_value<std::size_t>(key, text);
}

std::vector<std::size_t> parse_counts(const std::string& key, const std::string& text) {
    std::vector<std::size_t> out;
    for (const auto& item : split_list(text)) out.push_back(parse_count(key, item));
    if (out.empty()) throw ConfigError(key + " must list at least one value");
    return out;
}

using Setter = std::function<void(const std::string& key, const std::string& value)>;

// Applies every key of a section through its table; unknown keys name themselves.
void apply_section(const std::string& section, const pt::ptree& tree, const std::map<std::string, Setter>& table) {
    for (const auto& [key, node] : tree) {
        const std::string full = section + "." + key;
        if (!node.empty()) throw ConfigError("nested key " + full + " is not supported");
        const auto it = table.find(key);
        if (it == table.end()) throw ConfigError("unknown config key " + full);
        it->second(full, node.data());
    }
}

TaskSpec parse_task(const std::string& name, const pt::ptree& tree, TaskRole& role) {
    TaskSpec s;
    s.name = name;
    bool has_role = false, has_shape = false;
    const std::map<std::string, Setter> table = {
        {"role",
         [&](const std::string& k, const std::string& v) {
             if (v == "meta-train" || v == "meta_train")
                 role = TaskRole::meta_train;
             else if (v == "meta-test" || v == "meta_test")
                 role = TaskRole::meta_test;
             else
                 throw ConfigError("invalid value '" + v + "' for " + k + " (meta-train, meta-test)");
             has_role = true;
         }},
        {"shape",
         [&](const std::string&, const std::string& v) {
             s.shape_class = parse_shape_class(v);
             has_shape = true;
         }},
        {"distractors",
         [&](const std::string&, const std::string& v) {
             s.distractor_classes.clear();
             for (const auto& c : split_list(v)) s.distractor_classes.push_back(parse_shape_class(c));
         }},
        {"max_distractors", [&](const std::string& k, const std::string& v) { s.max_distractors = parse_value<int>(k, v); }},
        {"intensity_offset",
         [&](const std::string& k, const std::string& v) { s.institute_shift.intensity_offset = parse_value<double>(k, v); }},
        {"contrast_gain",
         [&](const std::string& k, const std::string& v) { s.institute_shift.contrast_gain = parse_value<double>(k, v); }},
        {"noise_sigma",
         [&](const std::string& k, const std::string& v) { s.institute_shift.noise_sigma = parse_value<double>(k, v); }},
        {"blur_radius",
         [&](const std::string& k, const std::string& v) { s.institute_shift.blur_radius = parse_value<int>(k, v); }},
        {"corruption_fraction",
         [&](const std::string& k, const std::string& v) { s.corruption.fraction = parse_value<double>(k, v); }},
        {"corruption_noise_sigma",
         [&](const std::string& k, const std::string& v) { s.corruption.noise_sigma = parse_value<double>(k, v); }},
        {"corruption_mode",
         [&](const std::string&, const std::string& v) { s.corruption.mode = parse_corruption_mode(v); }},
        {"task_tag", [&](const std::string&, const std::string& v) { s.task_tag = v; }},
        {"institute_tag", [&](const std::string&, const std::string& v) { s.institute_tag = v; }},
    };
    apply_section("task." + name, tree, table);
    if (!has_role) throw ConfigError("task." + name + ".role is required");
    if (!has_shape) throw ConfigError("task." + name + ".shape is required");
    return s;
}

}  // namespace

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> out;
    for (const auto& item : split_list(text)) {
        if (item.front() == '-') throw ConfigError("seeds must be non-negative, got '" + item + "'");
        out.push_back(parse_value<std::uint64_t>("seed", item));
    }
    if (out.empty()) throw ConfigError("at least one seed is required");
    return out;
}

void SynthConfig::validate() const {
    if (height == 0 || width == 0) throw ConfigError("synth.height and synth.width must be positive");
    if (samples_per_task < 4) throw ConfigError("synth.samples_per_task must be >= 4");
    if (pool_size < 4) throw ConfigError("synth.pool_size must be >= 4");
    if (holdout_size < 1) throw ConfigError("synth.holdout_size must be >= 1");
    std::set<std::string> names;
    for (const auto& t : tasks) {
        if (!names.insert(t.spec.name).second) throw ConfigError("duplicate task name '" + t.spec.name + "'");
        t.spec.validate();
    }
}

void RunConfig::validate() const {
    synth.validate();
    predictor.validate();
    controller.validate();
    ppo.validate();
    meta_train.validate();
    if (!(controller_train_ratio > 0.0 && controller_train_ratio < 1.0))
        throw ConfigError("meta_train.controller_train_ratio must lie in (0,1)");
    al.validate();
    analyze.mmd.validate();
    if (analyze.plateau.consecutive < 1) throw ConfigError("analyze.plateau_consecutive must be >= 1");
    if (!(analyze.plateau.min_gain_points >= 0.0)) throw ConfigError("analyze.plateau_min_gain must be >= 0");
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
    pt::ptree root;
    try {
        std::istringstream in(text);
        pt::ini_parser::read_ini(in, root);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(origin + ": line " + std::to_string(e.line()) + ": " + e.message());
    }

    RunConfig c;
    c.predictor.height = c.controller.height = c.synth.height;
    c.predictor.width = c.controller.width = c.synth.width;
    auto& s = c.synth;
    auto& p = c.predictor;
    auto& cc = c.controller;
    auto& ppo = c.ppo;
    auto& mt = c.meta_train;
    auto& al = c.al;
    auto& an = c.analyze;

    const std::map<std::string, std::map<std::string, Setter>> tables = {
        {"run", {{"seed", [&](const std::string& k, const std::string& v) { c.seed = parse_value<std::uint64_t>(k, v); }}}},
        {"synth",
         {
             {"height", [&](const std::string& k, const std::string& v) { s.height = parse_count(k, v); }},
             {"width", [&](const std::string& k, const std::string& v) { s.width = parse_count(k, v); }},
             {"samples_per_task", [&](const std::string& k, const std::string& v) { s.samples_per_task = parse_count(k, v); }},
             {"pool_size", [&](const std::string& k, const std::string& v) { s.pool_size = parse_count(k, v); }},
             {"holdout_size", [&](const std::string& k, const std::string& v) { s.holdout_size = parse_count(k, v); }},
         }},
        {"predictor",
         {
             {"channel_widths", [&](const std::string& k, const std::string& v) { p.channel_widths = parse_counts(k, v); }},
             {"learning_rate", [&](const std::string& k, const std::string& v) { p.learning_rate = parse_value<double>(k, v); }},
             {"convergence_patience",
              [&](const std::string& k, const std::string& v) { p.convergence_patience = parse_value<int>(k, v); }},
             {"min_delta", [&](const std::string& k, const std::string& v) { p.min_delta = parse_value<double>(k, v); }},
             {"max_epochs", [&](const std::string& k, const std::string& v) { p.max_epochs = parse_value<int>(k, v); }},
             {"batch_size", [&](const std::string& k, const std::string& v) { p.batch_size = parse_count(k, v); }},
         }},
        {"controller",
         {
             {"encoder_channels",
              [&](const std::string& k, const std::string& v) { cc.encoder_channels = parse_counts(k, v); }},
             {"fc_width", [&](const std::string& k, const std::string& v) { cc.fc_width = parse_count(k, v); }},
             {"hidden_size", [&](const std::string& k, const std::string& v) { cc.hidden_size = parse_count(k, v); }},
         }},
        {"ppo",
         {
             {"clip_epsilon", [&](const std::string& k, const std::string& v) { ppo.clip_ratio = parse_value<double>(k, v); }},
             {"epochs", [&](const std::string& k, const std::string& v) { ppo.epochs_per_update = parse_value<int>(k, v); }},
             {"gamma", [&](const std::string& k, const std::string& v) { ppo.gamma = parse_value<double>(k, v); }},
             {"gae_lambda", [&](const std::string& k, const std::string& v) { ppo.gae_lambda = parse_value<double>(k, v); }},
             {"value_coef", [&](const std::string& k, const std::string& v) { ppo.value_coef = parse_value<double>(k, v); }},
             {"entropy_coef", [&](const std::string& k, const std::string& v) { ppo.entropy_coef = parse_value<double>(k, v); }},
             {"learning_rate",
              [&](const std::string& k, const std::string& v) { ppo.learning_rate = parse_value<double>(k, v); }},
             {"max_grad_norm",
              [&](const std::string& k, const std::string& v) { ppo.max_grad_norm = parse_value<double>(k, v); }},
             {"advantage_norm", [&](const std::string&, const std::string& v) { ppo.advantage_norm = parse_advantage_norm(v); }},
             {"min_mean_score",
              [&](const std::string& k, const std::string& v) { ppo.min_mean_score = parse_value<double>(k, v); }},
         }},
        {"meta_train",
         {
             {"total_trials", [&](const std::string& k, const std::string& v) { mt.total_trials = parse_value<int>(k, v); }},
             {"episodes_per_trial",
              [&](const std::string& k, const std::string& v) { mt.episodes_per_trial = parse_value<int>(k, v); }},
             {"steps_per_episode",
              [&](const std::string& k, const std::string& v) { mt.steps_per_episode = parse_value<int>(k, v); }},
             {"minibatch_size", [&](const std::string& k, const std::string& v) { mt.minibatch_size = parse_count(k, v); }},
             {"predictor_steps_per_t",
              [&](const std::string& k, const std::string& v) { mt.predictor_steps_per_t = parse_value<int>(k, v); }},
             {"alpha_R", [&](const std::string& k, const std::string& v) { mt.alpha_R = parse_value<double>(k, v); }},
             {"checkpoint_every",
              [&](const std::string& k, const std::string& v) { mt.checkpoint_every = parse_value<int>(k, v); }},
             {"validation_weighting",
              [&](const std::string&, const std::string& v) { mt.validation_weighting = parse_validation_weighting(v); }},
             {"controller_train_ratio",
              [&](const std::string& k, const std::string& v) { c.controller_train_ratio = parse_value<double>(k, v); }},
         }},
        {"al",
         {
             {"beta0", [&](const std::string& k, const std::string& v) { al.beta0 = parse_count(k, v); }},
             {"beta", [&](const std::string& k, const std::string& v) { al.beta = parse_count(k, v); }},
             {"phi", [&](const std::string& k, const std::string& v) { al.phi = parse_value<double>(k, v); }},
             {"max_iterations", [&](const std::string& k, const std::string& v) { al.max_iterations = parse_value<int>(k, v); }},
             {"mc_passes", [&](const std::string& k, const std::string& v) { al.mc_passes = parse_value<int>(k, v); }},
             {"mc_dropout_rate",
              [&](const std::string& k, const std::string& v) { al.mc_dropout_rate = parse_value<double>(k, v); }},
         }},
        {"analyze",
         {
             {"plateau_min_gain",
              [&](const std::string& k, const std::string& v) { an.plateau.min_gain_points = parse_value<double>(k, v); }},
             {"plateau_consecutive",
              [&](const std::string& k, const std::string& v) { an.plateau.consecutive = parse_value<int>(k, v); }},
             {"mmd_bandwidth",
              [&](const std::string& k, const std::string& v) {
                  if (v == "median-heuristic") {
                      an.mmd.bandwidth = 0.0;
                      return;
                  }
                  an.mmd.bandwidth = parse_value<double>(k, v);
                  if (!(an.mmd.bandwidth > 0.0)) throw ConfigError(k + " must be positive or 'median-heuristic'");
              }},
             {"mmd_estimator",
              [&](const std::string& k, const std::string& v) {
                  if (v == "biased")
                      an.mmd.estimator = MMDEstimator::biased;
                  else if (v == "unbiased")
                      an.mmd.estimator = MMDEstimator::unbiased;
                  else
                      throw ConfigError("invalid value '" + v + "' for " + k + " (biased, unbiased)");
              }},
             {"mmd_downsample",
              [&](const std::string& k, const std::string& v) {
                  if (v == "native") {
                      an.mmd.downsample_height = an.mmd.downsample_width = 0;
                      return;
                  }
                  const auto x = v.find('x');
                  if (x == std::string::npos) throw ConfigError("invalid value '" + v + "' for " + k + " (HxW or native)");
                  an.mmd.downsample_height = parse_count(k, v.substr(0, x));
                  an.mmd.downsample_width = parse_count(k, v.substr(x + 1));
                  if (an.mmd.downsample_height == 0 || an.mmd.downsample_width == 0)
                      throw ConfigError(k + " sides must be positive");
              }},
         }},
    };

    // Synth dimensions are needed by the task sections, so that section goes first.
    if (const auto synth = root.get_child_optional("synth")) apply_section("synth", *synth, tables.at("synth"));
    for (const auto& [section, tree] : root) {
        if (section == "synth") continue;
        if (tree.empty() && !tree.data().empty())
            throw ConfigError("key '" + section + "' must appear inside a section");
        if (section.rfind("task.", 0) == 0) {
            const std::string name = section.substr(5);
            if (name.empty()) throw ConfigError("task section needs a name: [task.<name>]");
            SynthTask t;
            t.spec = parse_task(name, tree, t.role);
            t.spec.height = s.height;
            t.spec.width = s.width;
            s.tasks.push_back(std::move(t));
            continue;
        }
        const auto it = tables.find(section);
        if (it == tables.end()) throw ConfigError("unknown config section [" + section + "]");
        apply_section(section, tree, it->second);
    }
    p.height = cc.height = s.height;
    p.width = cc.width = s.width;
    c.al.seed = c.meta_train.seed = c.predictor.seed = c.seed;
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    return parse_run_config(read_text_file(path), path.string());
}

}  // namespace alprio
