#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace alprio {

enum class Strategy { proposed, random, mc_dropout };

std::string to_string(Strategy s);  // "proposed", "random", "mc-dropout"
Strategy parse_strategy(const std::string& name);

struct ALIterationRecord {
    int c = 0;
    std::size_t labelled_count = 0;
    std::vector<std::string> selected_ids;
    std::optional<double> mean_score_of_selected;  // absent for random selection
    double support_val_reward = 0.0;
    double holdout_dice_mean = 0.0;
    double holdout_dice_std = 0.0;
    std::size_t support_train_size = 0;
    std::size_t support_val_size = 0;

    friend bool operator==(const ALIterationRecord&, const ALIterationRecord&) = default;
};

struct ALRunRecord {
    Strategy strategy = Strategy::random;
    std::uint64_t seed = 0;
    std::size_t beta0 = 0;
    std::size_t beta = 0;
    double phi = 0.0;
    std::size_t pool_size = 0;
    std::vector<std::string> initial_ids;
    double init_reward = 0.0;
    double init_holdout_dice_mean = 0.0;
    double init_holdout_dice_std = 0.0;
    std::vector<ALIterationRecord> iterations;
    std::vector<std::string> oracle_queries;  // audit trail, in query order
    bool exhausted = false;                   // stopped because the pool ran out

    std::vector<std::size_t> labelled_counts() const;

    // JSON lines: a header, one line per iteration, then the oracle audit.
    std::string to_jsonl() const;
    static ALRunRecord from_jsonl(const std::string& text, const std::string& origin = "record");

    friend bool operator==(const ALRunRecord&, const ALRunRecord&) = default;
};

void write_record(const std::filesystem::path& path, const ALRunRecord& record);
ALRunRecord read_record(const std::filesystem::path& path);

}  // namespace alprio
