#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "alprio/predictor.hpp"
#include "test_support.hpp"

using namespace alprio;

namespace {

// 2|A n B| / (|A| + |B|) computed on index sets.
double set_dice(const FloatTensor& a, const FloatTensor& b) {
    std::set<std::size_t> sa, sb, inter;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] != 0.0f) sa.insert(i);
        if (b[i] != 0.0f) sb.insert(i);
    }
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::inserter(inter, inter.begin()));
    if (sa.empty() && sb.empty()) return 1.0;
    return 2.0 * static_cast<double>(inter.size()) / static_cast<double>(sa.size() + sb.size());
}

double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

}  // namespace

TEST_CASE("dice score matches a set-arithmetic oracle on random masks") {
    Rng rng = make_stream(1, "dice-oracle");
    int mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + uniform_index(rng, 64);
        const double pa = uniform01(rng), pb = uniform01(rng);
        FloatTensor a({n}), b({n});
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = uniform01(rng) < pa ? 1.0f : 0.0f;
            b[i] = uniform01(rng) < pb ? 1.0f : 0.0f;
        }
        mismatches += dice_score(a, b) == set_dice(a, b) ? 0 : 1;
    }
    CHECK(mismatches == 0);
}

TEST_CASE("dice edge cases") {
    const FloatTensor empty({4}), full({4}, 1.0f);
    CHECK(dice_score(empty, empty) == 1.0);
    CHECK(dice_score(empty, full) == 0.0);
    CHECK(dice_score(full, full) == 1.0);
    CHECK(soft_dice(full, full) == doctest::Approx((2.0 * 4 + 1) / (8.0 + 1)));
    CHECK(dice_loss(full, full) == doctest::Approx(1.0 - 9.0 / 9.0));
}

TEST_CASE("soft dice gradient matches central differences") {
    Rng rng = make_stream(2, "soft-dice-fd");
    const std::size_t n = 50;
    std::vector<double> p(n), y(n), g(n), scratch(n);
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = 0.05 + 0.9 * uniform01(rng);
        y[i] = uniform01(rng) < 0.4 ? 1.0 : 0.0;
    }
    dice_loss_with_grad<double>(p, y, g);
    double worst = 0.0;
    const double h = 1e-6;
    for (std::size_t i = 0; i < n; ++i) {
        auto q = p;
        q[i] += h;
        const double up = dice_loss_with_grad<double>(q, y, scratch);
        q[i] -= 2 * h;
        const double down = dice_loss_with_grad<double>(q, y, scratch);
        worst = std::max(worst, relative_error(g[i], (up - down) / (2 * h)));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("predictor parameter gradient matches central differences in double") {
    PredictorConfig cfg = testing::small_predictor(8);
    cfg.channel_widths = {2, 3, 4};
    const auto w = init_predictor(cfg, 3).params.cast<double>();
    const LabeledDataset ds = generate_task_dataset(testing::small_spec("disk", ShapeClass::disk, 8), 4, 1);
    const Tensor<double> image = ds[1].image.cast<double>();
    const Tensor<double> mask = ds[1].mask.cast<double>();
    ParamSet<double> grads = w.zeros_like();
    predictor_loss_and_grad<double>(w, cfg, image, mask, grads);

    Rng rng = make_stream(4, "predictor-fd");
    double worst = 0.0;
    const double h = 1e-6;
    for (int probe = 0; probe < 60; ++probe) {
        const std::size_t k = uniform_index(rng, w.total_size());
        ParamSet<double> up = w, down = w, scratch = w.zeros_like();
        up.flat(k) += h;
        down.flat(k) -= h;
        const double fd = (predictor_loss_and_grad<double>(up, cfg, image, mask, scratch) -
                           predictor_loss_and_grad<double>(down, cfg, image, mask, scratch)) /
                          (2 * h);
        const double analytic = grads.flat(k);
        if (std::abs(fd) < 1e-7 && std::abs(analytic) < 1e-7) continue;
        worst = std::max(worst, relative_error(analytic, fd));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("prediction shapes and determinism") {
    const PredictorConfig cfg = testing::small_predictor();
    const auto w = init_predictor(cfg, 9);
    CHECK(w == init_predictor(cfg, 9));
    CHECK_FALSE(w == init_predictor(cfg, 10));
    const LabeledDataset ds = generate_task_dataset(testing::small_spec("disk", ShapeClass::disk), 4, 1);
    const FloatTensor p = predict(w, cfg, ds[0].image);
    CHECK(p.shape == Shape{16, 16});
    CHECK(std::all_of(p.data.begin(), p.data.end(), [](float v) { return v > 0.0f && v < 1.0f; }));
    Rng a = make_stream(1, "mc"), b = make_stream(1, "mc");
    CHECK(predict_with_dropout(w, cfg, ds[0].image, 0.5, a) == predict_with_dropout(w, cfg, ds[0].image, 0.5, b));
    Rng c = make_stream(1, "mc");
    CHECK(predict_with_dropout(w, cfg, ds[0].image, 0.0, c) == p);
}

TEST_CASE("training raises validation dice and keeps the best snapshot") {
    PredictorConfig cfg = testing::small_predictor();
    cfg.channel_widths = {4, 8, 8};
    cfg.max_epochs = 40;
    const LabeledDataset ds = generate_task_dataset(testing::small_spec("disk", ShapeClass::disk), 24, 5);
    auto [train, val] = split_dataset(ds, 0.75, 1);
    const auto w0 = init_predictor(cfg, 1);
    const TrainingResult r = train_until_converged(w0, train, val, cfg);
    CHECK(r.val_dice_log.front() == doctest::Approx(mean_dice(w0, cfg, val)));
    CHECK(r.best_val_dice == doctest::Approx(*std::max_element(r.val_dice_log.begin(), r.val_dice_log.end())));
    CHECK(mean_dice(r.weights, cfg, val) == doctest::Approx(r.best_val_dice));
    CHECK(r.best_val_dice > r.val_dice_log.front() + 0.2);
    CHECK(r.best_val_dice > 0.7);
    // Same inputs, same result.
    CHECK(train_until_converged(w0, train, val, cfg).weights == r.weights);
}

TEST_CASE("minibatch gradient is the mean of per-sample gradients") {
    const PredictorConfig cfg = testing::small_predictor();
    const auto w = init_predictor(cfg, 2);
    const LabeledDataset ds = generate_task_dataset(testing::small_spec("cross", ShapeClass::cross), 4, 2);
    std::vector<const LabeledPair*> batch = {&ds.pairs[0], &ds.pairs[1], &ds.pairs[2]};
    ParamSet<float> g;
    const double loss = minibatch_gradient(w, cfg, batch, g);
    double sum = 0.0;
    ParamSet<float> manual = w.params.zeros_like();
    for (const auto* p : batch) sum += predictor_loss_and_grad<float>(w.params, cfg, p->image, p->mask, manual);
    CHECK(loss == doctest::Approx(sum / 3.0));
    for (std::size_t k = 0; k < 50; ++k) CHECK(g.flat(k * 7) == doctest::Approx(manual.flat(k * 7) / 3.0f).epsilon(1e-4));
}

TEST_CASE("predictor checkpoints round-trip") {
    testing::TempDir dir("predictor-ckpt");
    PredictorConfig cfg = testing::small_predictor();
    cfg.learning_rate = 0.0042;
    const auto w = init_predictor(cfg, 6);
    save_predictor(dir / "p", w, cfg);
    const auto [back, back_cfg] = load_predictor(dir / "p");
    CHECK(back == w);
    CHECK(back_cfg.learning_rate == cfg.learning_rate);
    CHECK(back_cfg.channel_widths == cfg.channel_widths);
}
