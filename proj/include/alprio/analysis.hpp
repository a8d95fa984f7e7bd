#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "alprio/al_record.hpp"
#include "alprio/predictor.hpp"
#include "alprio/synth_data.hpp"

namespace alprio {

struct HoldoutEvaluation {
    double mean_dice = 0.0;
    double std_dice = 0.0;  // population std
    std::vector<double> per_sample;
};

HoldoutEvaluation evaluate_holdout(const PredictorWeights& w, const PredictorConfig& cfg,
                                   const LabeledDataset& holdout);
// Same summary for externally produced probability maps, one per holdout pair.
HoldoutEvaluation evaluate_predictions(const std::vector<FloatTensor>& probabilities, const LabeledDataset& holdout);
HoldoutEvaluation summarise_dice(std::vector<double> per_sample);

enum class MMDEstimator { biased, unbiased };

struct MMDConfig {
    double bandwidth = 0.0;  // <= 0 selects the median heuristic
    MMDEstimator estimator = MMDEstimator::biased;
    std::size_t downsample_height = 16;  // 0 keeps the native size
    std::size_t downsample_width = 16;

    void validate() const;
};

// Area-average resampling of an (H, W) or (1, H, W) image.
std::vector<double> downsample_image(const FloatTensor& image, std::size_t out_h, std::size_t out_w);

// Median pairwise Euclidean distance over the rows given.
double median_pairwise_distance(const std::vector<std::vector<double>>& rows);

// Bandwidth the median heuristic picks for the pooled, downsampled sets.
double median_heuristic_bandwidth(const std::vector<const FloatTensor*>& set_a,
                                  const std::vector<const FloatTensor*>& set_b, const MMDConfig& cfg);

// Squared MMD with an RBF kernel over flattened, downsampled pixels. The two
// sets are put in a canonical order first, so swapping them is exact.
double mmd(const std::vector<const FloatTensor*>& set_a, const std::vector<const FloatTensor*>& set_b,
           const MMDConfig& cfg);

struct GroupStats {
    double mean = 0.0;
    double std = 0.0;  // sample std (n - 1)
    std::size_t n = 0;
};

struct ComparisonResult {
    GroupStats a;
    GroupStats b;
    double t_statistic = 0.0;
    double degrees_of_freedom = 0.0;
    double p_value = 1.0;  // two-sided
};

ComparisonResult welch_ttest(const std::vector<double>& a, const std::vector<double>& b);

struct PlateauRule {
    double min_gain_points = 0.5;  // Dice points, i.e. 100 x Dice
    int consecutive = 3;
};

struct ConvergenceResult {
    bool reached = false;
    int c_star = 0;             // plateau start, or the last iteration when not reached
    std::size_t labelled = 0;   // beta0 + beta * c_star
};

// dice[k] is the holdout Dice (in [0,1]) after iteration c = k + 1. The
// plateau starts at the first c followed by `consecutive` gains below the threshold.
ConvergenceResult labels_to_convergence(const std::vector<double>& dice, std::size_t beta0, std::size_t beta,
                                        const PlateauRule& rule = {});
ConvergenceResult labels_to_convergence(const ALRunRecord& record, const PlateauRule& rule = {});

struct ReportOptions {
    PlateauRule plateau;
    MMDConfig mmd;
    const LabeledDataset* pool = nullptr;     // enables the MMD series
    const LabeledDataset* holdout = nullptr;
};

// Writes CSV tables, summary.json and a README describing them. Output is a
// pure function of the records and options.
void emit_report(const std::vector<ALRunRecord>& records, const std::filesystem::path& out_dir,
                 const ReportOptions& options = {});

}  // namespace alprio
