#include "alprio/predictor.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "alprio/kernels.hpp"
#include "alprio/parallel.hpp"

namespace alprio {

using nlohmann::json;
namespace k = kernels;

namespace {

enum Param : std::size_t {
    kEnc0W, kEnc0B, kEnc1W, kEnc1B, kEnc2W, kEnc2B,
    kUp1W, kUp1B, kDec1W, kDec1B, kUp0W, kUp0B, kDec0W, kDec0B,
    kHeadW, kHeadB, kParamCount
};

struct Dims {
    std::size_t H, W, c0, c1, c2;
    std::size_t full() const { return H * W; }
    std::size_t half() const { return (H / 2) * (W / 2); }
    std::size_t quarter() const { return (H / 4) * (W / 4); }
};

Dims dims_of(const PredictorConfig& cfg) {
    return {cfg.height, cfg.width, cfg.channel_widths[0], cfg.channel_widths[1], cfg.channel_widths[2]};
}

k::ConvGeometry conv3(std::size_t in, std::size_t out, std::size_t h, std::size_t w) {
    return {in, out, h, w, 3, 1, 1};
}

template <class T>
std::span<const T> cview(const std::vector<T>& v) { return {v.data(), v.size()}; }

template <class T>
std::span<const T> pview(const ParamSet<T>& p, std::size_t i) { return p[i].view(); }

template <class T>
struct Activations {
    std::vector<T> x;
    std::vector<T> a0, a1, a2;  // post-ReLU, post-dropout
    std::vector<T> m0, m1, m2;  // dropout multipliers; empty = no dropout
    std::vector<T> p0, p1;
    std::vector<std::size_t> i0, i1;
    std::vector<T> cat1, b1, cat0, b0, prob;
};

template <class T>
void relu_dropout(std::vector<T>& a, std::vector<T>& mask, double rate, Rng* rng) {
    for (T& v : a) v = v > T{0} ? v : T{0};
    if (rate <= 0.0 || rng == nullptr) return;
    mask.assign(a.size(), T{0});
    const T keep = static_cast<T>(1.0 / (1.0 - rate));
    for (std::size_t i = 0; i < a.size(); ++i) {
        mask[i] = uniform01(*rng) < rate ? T{0} : keep;
        a[i] *= mask[i];
    }
}

template <class T>
void relu_backward(const std::vector<T>& a, const std::vector<T>& mask, std::vector<T>& d) {
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = a[i] > T{0} ? d[i] * (mask.empty() ? T{1} : mask[i]) : T{0};
}

template <class T>
void forward(const ParamSet<T>& p, const Dims& d, std::span<const T> image, Activations<T>& act, double dropout,
             Rng* rng) {
    const std::size_t H = d.H, W = d.W, h2 = H / 2, w2 = W / 2, h4 = H / 4, w4 = W / 4;
    act.x.assign(image.begin(), image.end());

    act.a0.resize(d.c0 * d.full());
    k::conv2d_forward<T>(conv3(1, d.c0, H, W), cview(act.x), pview(p, kEnc0W), pview(p, kEnc0B), act.a0);
    relu_dropout(act.a0, act.m0, dropout, rng);

    act.p0.resize(d.c0 * d.half());
    act.i0.resize(act.p0.size());
    k::maxpool2x2_forward<T>(d.c0, H, W, cview(act.a0), act.p0, act.i0);

    act.a1.resize(d.c1 * d.half());
    k::conv2d_forward<T>(conv3(d.c0, d.c1, h2, w2), cview(act.p0), pview(p, kEnc1W), pview(p, kEnc1B), act.a1);
    relu_dropout(act.a1, act.m1, dropout, rng);

    act.p1.resize(d.c1 * d.quarter());
    act.i1.resize(act.p1.size());
    k::maxpool2x2_forward<T>(d.c1, h2, w2, cview(act.a1), act.p1, act.i1);

    act.a2.resize(d.c2 * d.quarter());
    k::conv2d_forward<T>(conv3(d.c1, d.c2, h4, w4), cview(act.p1), pview(p, kEnc2W), pview(p, kEnc2B), act.a2);
    relu_dropout(act.a2, act.m2, dropout, rng);

    act.cat1.resize(2 * d.c1 * d.half());
    k::upconv2x2_forward<T>(d.c2, d.c1, h4, w4, cview(act.a2), pview(p, kUp1W), pview(p, kUp1B),
                            std::span<T>(act.cat1.data(), d.c1 * d.half()));
    std::copy(act.a1.begin(), act.a1.end(), act.cat1.begin() + static_cast<long>(d.c1 * d.half()));

    act.b1.resize(d.c1 * d.half());
    k::conv2d_forward<T>(conv3(2 * d.c1, d.c1, h2, w2), cview(act.cat1), pview(p, kDec1W), pview(p, kDec1B), act.b1);
    for (T& v : act.b1) v = v > T{0} ? v : T{0};

    act.cat0.resize(2 * d.c0 * d.full());
    k::upconv2x2_forward<T>(d.c1, d.c0, h2, w2, cview(act.b1), pview(p, kUp0W), pview(p, kUp0B),
                            std::span<T>(act.cat0.data(), d.c0 * d.full()));
    std::copy(act.a0.begin(), act.a0.end(), act.cat0.begin() + static_cast<long>(d.c0 * d.full()));

    act.b0.resize(d.c0 * d.full());
    k::conv2d_forward<T>(conv3(2 * d.c0, d.c0, H, W), cview(act.cat0), pview(p, kDec0W), pview(p, kDec0B), act.b0);
    for (T& v : act.b0) v = v > T{0} ? v : T{0};

    act.prob.resize(d.full());
    k::conv2d_forward<T>({d.c0, 1, H, W, 1, 1, 0}, cview(act.b0), pview(p, kHeadW), pview(p, kHeadB), act.prob);
    for (T& v : act.prob) v = T{1} / (T{1} + std::exp(-v));
}

template <class T>
void backward(const ParamSet<T>& p, const Dims& d, const Activations<T>& act, std::span<const T> dprob,
              ParamSet<T>& g) {
    const std::size_t H = d.H, W = d.W, h2 = H / 2, w2 = W / 2, h4 = H / 4, w4 = W / 4;

    std::vector<T> dz(d.full());
    for (std::size_t i = 0; i < dz.size(); ++i) dz[i] = dprob[i] * act.prob[i] * (T{1} - act.prob[i]);

    std::vector<T> db0(d.c0 * d.full());
    k::conv2d_backward<T>({d.c0, 1, H, W, 1, 1, 0}, cview(act.b0), pview(p, kHeadW), cview(dz), db0,
                          g[kHeadW].view(), g[kHeadB].view());
    relu_backward(act.b0, {}, db0);

    std::vector<T> dcat0(2 * d.c0 * d.full());
    k::conv2d_backward<T>(conv3(2 * d.c0, d.c0, H, W), cview(act.cat0), pview(p, kDec0W), cview(db0), dcat0,
                          g[kDec0W].view(), g[kDec0B].view());

    std::vector<T> db1(d.c1 * d.half());
    k::upconv2x2_backward<T>(d.c1, d.c0, h2, w2, cview(act.b1), pview(p, kUp0W),
                             std::span<const T>(dcat0.data(), d.c0 * d.full()), db1, g[kUp0W].view(),
                             g[kUp0B].view());
    relu_backward(act.b1, {}, db1);

    std::vector<T> dcat1(2 * d.c1 * d.half());
    k::conv2d_backward<T>(conv3(2 * d.c1, d.c1, h2, w2), cview(act.cat1), pview(p, kDec1W), cview(db1), dcat1,
                          g[kDec1W].view(), g[kDec1B].view());

    std::vector<T> da2(d.c2 * d.quarter());
    k::upconv2x2_backward<T>(d.c2, d.c1, h4, w4, cview(act.a2), pview(p, kUp1W),
                             std::span<const T>(dcat1.data(), d.c1 * d.half()), da2, g[kUp1W].view(),
                             g[kUp1B].view());
    relu_backward(act.a2, act.m2, da2);

    std::vector<T> dp1(d.c1 * d.quarter());
    k::conv2d_backward<T>(conv3(d.c1, d.c2, h4, w4), cview(act.p1), pview(p, kEnc2W), cview(da2), dp1,
                          g[kEnc2W].view(), g[kEnc2B].view());

    std::vector<T> da1(d.c1 * d.half());
    k::maxpool2x2_backward<T>(act.i1, cview(dp1), da1);
    for (std::size_t i = 0; i < da1.size(); ++i) da1[i] += dcat1[d.c1 * d.half() + i];
    relu_backward(act.a1, act.m1, da1);

    std::vector<T> dp0(d.c0 * d.half());
    k::conv2d_backward<T>(conv3(d.c0, d.c1, h2, w2), cview(act.p0), pview(p, kEnc1W), cview(da1), dp0,
                          g[kEnc1W].view(), g[kEnc1B].view());

    std::vector<T> da0(d.c0 * d.full());
    k::maxpool2x2_backward<T>(act.i0, cview(dp0), da0);
    for (std::size_t i = 0; i < da0.size(); ++i) da0[i] += dcat0[d.c0 * d.full() + i];
    relu_backward(act.a0, act.m0, da0);

    k::conv2d_backward<T>(conv3(1, d.c0, H, W), cview(act.x), pview(p, kEnc0W), cview(da0), std::span<T>{},
                          g[kEnc0W].view(), g[kEnc0B].view());
}

void check_image(const PredictorConfig& cfg, const FloatTensor& image) {
    if (image.shape != Shape{1, cfg.height, cfg.width} && image.shape != Shape{cfg.height, cfg.width})
        throw ShapeError("predictor expects a (1," + std::to_string(cfg.height) + "," + std::to_string(cfg.width) +
                         ") image, got " + shape_string(image.shape));
}

void check_params(const PredictorWeights& w) {
    if (w.params.count() != kParamCount) throw ShapeError("predictor weights have the wrong structure");
}

}  // namespace

void PredictorConfig::validate() const {
    if (channel_widths.size() != 3) throw ConfigError("predictor.channel_widths must list exactly 3 widths");
    for (std::size_t c : channel_widths)
        if (c == 0) throw ConfigError("predictor.channel_widths entries must be positive");
    if (height % 4 != 0 || width % 4 != 0 || height == 0 || width == 0)
        throw ConfigError("predictor image size must be a positive multiple of 4");
    if (!(learning_rate > 0.0)) throw ConfigError("predictor.learning_rate must be > 0");
    if (convergence_patience < 1) throw ConfigError("predictor.convergence_patience must be >= 1");
    if (max_epochs < 0) throw ConfigError("predictor.max_epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("predictor.batch_size must be >= 1");
    if (!(min_delta >= 0.0)) throw ConfigError("predictor.min_delta must be >= 0");
}

std::string PredictorConfig::to_json() const {
    json j = {{"height", height},
              {"width", width},
              {"channel_widths", channel_widths},
              {"learning_rate", learning_rate},
              {"adam_beta1", adam.beta1},
              {"adam_beta2", adam.beta2},
              {"adam_eps", adam.eps},
              {"convergence_patience", convergence_patience},
              {"min_delta", min_delta},
              {"max_epochs", max_epochs},
              {"batch_size", batch_size},
              {"seed", seed}};
    return j.dump();
}

PredictorConfig PredictorConfig::from_json(const std::string& text) {
    const json j = json::parse(text);
    PredictorConfig c;
    c.height = j.at("height");
    c.width = j.at("width");
    c.channel_widths = j.at("channel_widths").get<std::vector<std::size_t>>();
    c.learning_rate = j.at("learning_rate");
    c.adam.beta1 = j.at("adam_beta1");
    c.adam.beta2 = j.at("adam_beta2");
    c.adam.eps = j.at("adam_eps");
    c.convergence_patience = j.at("convergence_patience");
    c.min_delta = j.at("min_delta");
    c.max_epochs = j.at("max_epochs");
    c.batch_size = j.at("batch_size");
    c.seed = j.at("seed");
    c.validate();
    return c;
}

PredictorWeights init_predictor(const PredictorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const Dims d = dims_of(cfg);
    Rng rng = make_stream(seed, "predictor-init");
    ParamSet<float> p;
    auto add = [&](const std::string& name, Shape shape, double fan_in, double gain) {
        FloatTensor t(shape);
        const double sd = std::sqrt(gain / fan_in);
        for (float& v : t.data) v = static_cast<float>(sd * gaussian(rng));
        p.add(name + ".weight", std::move(t));
    };
    auto bias = [&](const std::string& name, std::size_t n) { p.add(name + ".bias", FloatTensor({n})); };
    add("enc0", {d.c0, 1, 3, 3}, 9.0, 2.0);
    bias("enc0", d.c0);
    add("enc1", {d.c1, d.c0, 3, 3}, 9.0 * static_cast<double>(d.c0), 2.0);
    bias("enc1", d.c1);
    add("enc2", {d.c2, d.c1, 3, 3}, 9.0 * static_cast<double>(d.c1), 2.0);
    bias("enc2", d.c2);
    add("up1", {d.c2, d.c1, 2, 2}, static_cast<double>(d.c2), 1.0);
    bias("up1", d.c1);
    add("dec1", {d.c1, 2 * d.c1, 3, 3}, 18.0 * static_cast<double>(d.c1), 2.0);
    bias("dec1", d.c1);
    add("up0", {d.c1, d.c0, 2, 2}, static_cast<double>(d.c1), 1.0);
    bias("up0", d.c0);
    add("dec0", {d.c0, 2 * d.c0, 3, 3}, 18.0 * static_cast<double>(d.c0), 2.0);
    bias("dec0", d.c0);
    add("head", {1, d.c0, 1, 1}, static_cast<double>(d.c0), 1.0);
    bias("head", 1);
    return PredictorWeights::from(std::move(p));
}

FloatTensor predict(const PredictorWeights& w, const PredictorConfig& cfg, const FloatTensor& image) {
    check_image(cfg, image);
    check_params(w);
    Activations<float> act;
    forward<float>(w.params, dims_of(cfg), image.view(), act, 0.0, nullptr);
    return FloatTensor({cfg.height, cfg.width}, std::move(act.prob));
}

FloatTensor predict_with_dropout(const PredictorWeights& w, const PredictorConfig& cfg, const FloatTensor& image,
                                 double dropout_rate, Rng& rng) {
    check_image(cfg, image);
    check_params(w);
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw DomainError("dropout_rate must lie in [0,1)");
    Activations<float> act;
    forward<float>(w.params, dims_of(cfg), image.view(), act, dropout_rate, &rng);
    return FloatTensor({cfg.height, cfg.width}, std::move(act.prob));
}

FloatTensor binarize(const FloatTensor& probs, float threshold) {
    FloatTensor out(probs.shape);
    for (std::size_t i = 0; i < probs.size(); ++i) out.data[i] = probs.data[i] >= threshold ? 1.0f : 0.0f;
    return out;
}

double dice_score(const FloatTensor& pred_mask, const FloatTensor& true_mask) {
    if (pred_mask.shape != true_mask.shape)
        throw ShapeError("dice_score: shapes " + shape_string(pred_mask.shape) + " and " +
                         shape_string(true_mask.shape) + " differ");
    std::size_t a = 0, b = 0, both = 0;
    for (std::size_t i = 0; i < pred_mask.size(); ++i) {
        const bool pa = pred_mask.data[i] != 0.0f, pb = true_mask.data[i] != 0.0f;
        a += pa;
        b += pb;
        both += pa && pb;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

template <class T>
T dice_loss_with_grad(std::span<const T> probs, std::span<const T> mask, std::span<T> grad) {
    if (probs.size() != mask.size()) throw ShapeError("dice_loss: prediction and mask sizes differ");
    const T s = static_cast<T>(kSoftDiceSmoothing);
    T inter{}, total{};
    for (std::size_t i = 0; i < probs.size(); ++i) {
        inter += probs[i] * mask[i];
        total += probs[i] + mask[i];
    }
    const T num = T{2} * inter + s, den = total + s;
    if (!grad.empty())
        for (std::size_t i = 0; i < probs.size(); ++i) grad[i] = -(T{2} * mask[i] * den - num) / (den * den);
    return T{1} - num / den;
}

double soft_dice(const FloatTensor& pred_probs, const FloatTensor& true_mask) {
    return 1.0 - dice_loss(pred_probs, true_mask);
}

double dice_loss(const FloatTensor& pred_probs, const FloatTensor& true_mask) {
    if (pred_probs.shape != true_mask.shape)
        throw ShapeError("dice_loss: shapes " + shape_string(pred_probs.shape) + " and " +
                         shape_string(true_mask.shape) + " differ");
    const auto p = pred_probs.cast<double>();
    const auto m = true_mask.cast<double>();
    return dice_loss_with_grad<double>(p.view(), m.view(), std::span<double>{});
}

template <class T>
T predictor_loss_and_grad(const ParamSet<T>& params, const PredictorConfig& cfg, const Tensor<T>& image,
                          const Tensor<T>& mask, ParamSet<T>& grads) {
    if (params.count() != kParamCount || !params.same_structure(grads))
        throw ShapeError("predictor gradient buffers do not match the weights");
    if (image.size() != cfg.height * cfg.width || mask.size() != cfg.height * cfg.width)
        throw ShapeError("predictor_loss_and_grad: image or mask has the wrong size");
    const Dims d = dims_of(cfg);
    Activations<T> act;
    forward<T>(params, d, image.view(), act, 0.0, nullptr);
    std::vector<T> dprob(act.prob.size());
    const T loss = dice_loss_with_grad<T>(cview(act.prob), mask.view(), dprob);
    backward<T>(params, d, act, cview(dprob), grads);
    return loss;
}

double minibatch_gradient(const PredictorWeights& w, const PredictorConfig& cfg,
                          const std::vector<const LabeledPair*>& batch, ParamSet<float>& grads) {
    check_params(w);
    grads = w.params.zeros_like();
    if (batch.empty()) return 0.0;
    const long n = static_cast<long>(batch.size());
    std::vector<ParamSet<float>> per_sample(batch.size());
    std::vector<double> losses(batch.size());
    for (const auto* p : batch) check_image(cfg, p->image);
#pragma omp parallel for schedule(static) num_threads(kernels::worker_threads())
    for (long i = 0; i < n; ++i) {
        const auto iu = static_cast<std::size_t>(i);
        per_sample[iu] = w.params.zeros_like();
        losses[iu] = predictor_loss_and_grad<float>(w.params, cfg, batch[iu]->image, batch[iu]->mask, per_sample[iu]);
    }
    const float inv = 1.0f / static_cast<float>(n);
    double loss = 0.0;
    for (std::size_t s = 0; s < batch.size(); ++s) {
        loss += losses[s];
        for (std::size_t t = 0; t < grads.count(); ++t) {
            auto& dst = grads[t].data;
            const auto& src = per_sample[s][t].data;
            for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += src[e] * inv;
        }
    }
    return loss / static_cast<double>(n);
}

std::vector<double> per_sample_dice(const PredictorWeights& w, const PredictorConfig& cfg, const LabeledDataset& ds) {
    std::vector<double> out(ds.size());
    const long n = static_cast<long>(ds.size());
    ExceptionSlot error;
#pragma omp parallel for schedule(static) num_threads(kernels::worker_threads())
    for (long i = 0; i < n; ++i) {
        try {
            const auto& pair = ds.pairs[static_cast<std::size_t>(i)];
            out[static_cast<std::size_t>(i)] = dice_score(binarize(predict(w, cfg, pair.image)), pair.mask);
        } catch (...) {
            error.capture();
        }
    }
    error.rethrow();
    return out;
}

double mean_dice(const PredictorWeights& w, const PredictorConfig& cfg, const LabeledDataset& ds) {
    if (ds.empty()) throw ConfigError("mean_dice: empty dataset");
    const auto d = per_sample_dice(w, cfg, ds);
    double s = 0.0;
    for (double v : d) s += v;
    return s / static_cast<double>(d.size());
}

TrainingResult train_until_converged(const PredictorWeights& w, const LabeledDataset& train,
                                     const LabeledDataset& val, const PredictorConfig& cfg) {
    cfg.validate();
    if (train.empty()) throw ConfigError("train_until_converged: empty training set");
    if (val.empty()) throw ConfigError("train_until_converged: empty validation set");

    TrainingResult result;
    PredictorWeights current = w;
    result.weights = w;
    result.best_val_dice = mean_dice(current, cfg, val);
    result.val_dice_log.push_back(result.best_val_dice);

    Rng rng = make_stream(cfg.seed, "minibatch");
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    double reference = result.best_val_dice;
    int stale = 0;
    ParamSet<float> grads;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        shuffle(order, rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::vector<const LabeledPair*> batch;
            for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i)
                batch.push_back(&train.pairs[order[i]]);
            minibatch_gradient(current, cfg, batch, grads);
            adam_step_inplace(current, grads, cfg.learning_rate, cfg.adam);
        }
        const double d = mean_dice(current, cfg, val);
        result.val_dice_log.push_back(d);
        if (d > result.best_val_dice) {
            result.best_val_dice = d;
            result.best_epoch = epoch;
            result.weights = current;
        }
        if (d >= reference + cfg.min_delta) {
            reference = d;
            stale = 0;
        } else if (++stale >= cfg.convergence_patience) {
            break;
        }
    }
    return result;
}

void save_predictor(const std::filesystem::path& dir, const PredictorWeights& w, const PredictorConfig& cfg) {
    save_checkpoint(dir, "predictor", w, cfg.to_json());
}

std::pair<PredictorWeights, PredictorConfig> load_predictor(const std::filesystem::path& dir) {
    auto loaded = load_checkpoint(dir, "predictor");
    PredictorConfig cfg;
    try {
        cfg = PredictorConfig::from_json(loaded.config_json);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(dir.string() + ": bad predictor config: " + e.what());
    }
    if (!loaded.weights.params.same_structure(init_predictor(cfg, 0).params))
        throw FormatError(dir.string() + ": tensors do not match the recorded predictor config");
    return {std::move(loaded.weights), cfg};
}

template float dice_loss_with_grad<float>(std::span<const float>, std::span<const float>, std::span<float>);
template double dice_loss_with_grad<double>(std::span<const double>, std::span<const double>, std::span<double>);
template float predictor_loss_and_grad<float>(const ParamSet<float>&, const PredictorConfig&, const Tensor<float>&,
                                              const Tensor<float>&, ParamSet<float>&);
template double predictor_loss_and_grad<double>(const ParamSet<double>&, const PredictorConfig&,
                                                const Tensor<double>&, const Tensor<double>&, ParamSet<double>&);

}  // namespace alprio
