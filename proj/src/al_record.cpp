#include "alprio/al_record.hpp"

#include <sstream>

#include <nlohmann/json.hpp>

#include "alprio/error.hpp"
#include "alprio/tensor_io.hpp"

namespace alprio {

using ojson = nlohmann::ordered_json;

std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::proposed: return "proposed";
        case Strategy::random: return "random";
        case Strategy::mc_dropout: return "mc-dropout";
    }
    return "random";
}

Strategy parse_strategy(const std::string& name) {
    if (name == "proposed") return Strategy::proposed;
    if (name == "random") return Strategy::random;
    if (name == "mc-dropout" || name == "mc_dropout") return Strategy::mc_dropout;
    throw ConfigError("unknown strategy '" + name + "' (proposed, random, mc-dropout)");
}

std::vector<std::size_t> ALRunRecord::labelled_counts() const {
    std::vector<std::size_t> out;
    for (const auto& it : iterations) out.push_back(it.labelled_count);
    return out;
}

std::string ALRunRecord::to_jsonl() const {
    std::string out;
    ojson h;
    h["type"] = "header";
    h["strategy"] = to_string(strategy);
    h["seed"] = seed;
    h["beta0"] = beta0;
    h["beta"] = beta;
    h["phi"] = phi;
    h["pool_size"] = pool_size;
    h["initial_ids"] = initial_ids;
    h["init_reward"] = init_reward;
    h["init_holdout_dice_mean"] = init_holdout_dice_mean;
    h["init_holdout_dice_std"] = init_holdout_dice_std;
    out += h.dump() + "\n";
    for (const auto& it : iterations) {
        ojson j;
        j["type"] = "iteration";
        j["c"] = it.c;
        j["labelled_count"] = it.labelled_count;
        j["selected_ids"] = it.selected_ids;
        if (it.mean_score_of_selected)
            j["mean_score_of_selected"] = *it.mean_score_of_selected;
        else
            j["mean_score_of_selected"] = nullptr;
        j["support_val_reward"] = it.support_val_reward;
        j["holdout_dice_mean"] = it.holdout_dice_mean;
        j["holdout_dice_std"] = it.holdout_dice_std;
        j["support_train_size"] = it.support_train_size;
        j["support_val_size"] = it.support_val_size;
        out += j.dump() + "\n";
    }
    ojson t;
    t["type"] = "oracle";
    t["query_count"] = oracle_queries.size();
    t["queried_ids"] = oracle_queries;
    t["exhausted"] = exhausted;
    out += t.dump() + "\n";
    return out;
}

ALRunRecord ALRunRecord::from_jsonl(const std::string& text, const std::string& origin) {
    ALRunRecord r;
    std::istringstream in(text);
    std::string line;
    bool header = false;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = ojson::parse(line);
            const std::string type = j.at("type");
            if (type == "header") {
                r.strategy = parse_strategy(j.at("strategy"));
                r.seed = j.at("seed");
                r.beta0 = j.at("beta0");
                r.beta = j.at("beta");
                r.phi = j.at("phi");
                r.pool_size = j.at("pool_size");
                r.initial_ids = j.at("initial_ids").get<std::vector<std::string>>();
                r.init_reward = j.at("init_reward");
                r.init_holdout_dice_mean = j.at("init_holdout_dice_mean");
                r.init_holdout_dice_std = j.at("init_holdout_dice_std");
                header = true;
            } else if (type == "iteration") {
                ALIterationRecord it;
                it.c = j.at("c");
                it.labelled_count = j.at("labelled_count");
                it.selected_ids = j.at("selected_ids").get<std::vector<std::string>>();
                if (!j.at("mean_score_of_selected").is_null())
                    it.mean_score_of_selected = j.at("mean_score_of_selected").get<double>();
                it.support_val_reward = j.at("support_val_reward");
                it.holdout_dice_mean = j.at("holdout_dice_mean");
                it.holdout_dice_std = j.at("holdout_dice_std");
                it.support_train_size = j.at("support_train_size");
                it.support_val_size = j.at("support_val_size");
                r.iterations.push_back(std::move(it));
            } else if (type == "oracle") {
                r.oracle_queries = j.at("queried_ids").get<std::vector<std::string>>();
                r.exhausted = j.at("exhausted");
            } else {
                throw FormatError(origin + ":" + std::to_string(lineno) + ": unknown line type '" + type + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (!header) throw FormatError(origin + ": missing header line");
    return r;
}

void write_record(const std::filesystem::path& path, const ALRunRecord& record) {
    write_text_file(path, record.to_jsonl());
}

ALRunRecord read_record(const std::filesystem::path& path) {
    return ALRunRecord::from_jsonl(read_text_file(path), path.string());
}

}  // namespace alprio
