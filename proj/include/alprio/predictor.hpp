#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "alprio/params.hpp"
#include "alprio/rng.hpp"
#include "alprio/synth_data.hpp"

namespace alprio {

using PredictorWeights = TrainableParams;

struct PredictorConfig {
    std::size_t height = 32;
    std::size_t width = 32;
    // Encoder widths at full, half and quarter resolution; the decoder mirrors them.
    std::vector<std::size_t> channel_widths = {8, 16, 32};
    double learning_rate = 3e-3;
    AdamSettings adam;
    int convergence_patience = 5;
    double min_delta = 1e-3;
    int max_epochs = 200;
    std::size_t batch_size = 4;
    std::uint64_t seed = 0;  // minibatch shuffling

    void validate() const;
    std::string to_json() const;
    static PredictorConfig from_json(const std::string& text);
};

// He-initialised U-Net parameters, deterministic per seed.
PredictorWeights init_predictor(const PredictorConfig& cfg, std::uint64_t seed);

// Per-pixel foreground probabilities, shape (H, W).
FloatTensor predict(const PredictorWeights& w, const PredictorConfig& cfg, const FloatTensor& image);

// Forward pass with inverted dropout after each encoder stage.
FloatTensor predict_with_dropout(const PredictorWeights& w, const PredictorConfig& cfg, const FloatTensor& image,
                                 double dropout_rate, Rng& rng);

// Threshold at 0.5.
FloatTensor binarize(const FloatTensor& probs, float threshold = 0.5f);

// 2|A n B| / (|A| + |B|) on binary masks; 1 when both are empty.
double dice_score(const FloatTensor& pred_mask, const FloatTensor& true_mask);

inline constexpr double kSoftDiceSmoothing = 1.0;

double soft_dice(const FloatTensor& pred_probs, const FloatTensor& true_mask);
double dice_loss(const FloatTensor& pred_probs, const FloatTensor& true_mask);

// Soft-Dice loss and its gradient w.r.t. the probabilities; generic so the
// finite-difference checks can run in double.
template <class T>
T dice_loss_with_grad(std::span<const T> probs, std::span<const T> mask, std::span<T> grad);

// Dice loss of one sample and the parameter gradient (accumulated into grads).
template <class T>
T predictor_loss_and_grad(const ParamSet<T>& params, const PredictorConfig& cfg, const Tensor<T>& image,
                          const Tensor<T>& mask, ParamSet<T>& grads);

// Mean-loss gradient over a minibatch; per-sample gradients are computed in
// parallel and reduced in index order, so the result is thread-count independent.
double minibatch_gradient(const PredictorWeights& w, const PredictorConfig& cfg,
                          const std::vector<const LabeledPair*>& batch, ParamSet<float>& grads);

// Binary Dice of every pair at threshold 0.5, in dataset order.
std::vector<double> per_sample_dice(const PredictorWeights& w, const PredictorConfig& cfg, const LabeledDataset& ds);
double mean_dice(const PredictorWeights& w, const PredictorConfig& cfg, const LabeledDataset& ds);

struct TrainingResult {
    PredictorWeights weights;           // snapshot at the best validation epoch
    double best_val_dice = 0.0;
    int best_epoch = 0;                 // 0 = initial weights
    std::vector<double> val_dice_log;   // entry e = validation Dice after epoch e (entry 0 = before training)
};

// Epochs of shuffled minibatch Adam until convergence_patience epochs pass
// without a min_delta improvement in validation Dice, or max_epochs.
TrainingResult train_until_converged(const PredictorWeights& w, const LabeledDataset& train,
                                     const LabeledDataset& val, const PredictorConfig& cfg);

void save_predictor(const std::filesystem::path& dir, const PredictorWeights& w, const PredictorConfig& cfg);
std::pair<PredictorWeights, PredictorConfig> load_predictor(const std::filesystem::path& dir);

}  // namespace alprio
