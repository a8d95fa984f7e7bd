#include "alprio/controller.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "alprio/kernels.hpp"

namespace alprio {

using nlohmann::json;
namespace k = kernels;

namespace {

enum Param : std::size_t {
    kE0W, kE0B, kE1W, kE1B, kE2W, kE2B,
    kFc1W, kFc1B,
    kWr, kWz, kWn, kUr, kUz, kUn, kBr, kBz, kBn, kBhn,
    kFc2W, kFc2B, kPolW, kPolB, kValW, kValB,
    kParamCount
};

std::array<k::ConvGeometry, 3> encoder_geometry(const ControllerConfig& cfg) {
    const auto& c = cfg.encoder_channels;
    return {k::ConvGeometry{1, c[0], cfg.height, cfg.width, 3, 2, 1},
            k::ConvGeometry{c[0], c[1], cfg.height / 2, cfg.width / 2, 3, 2, 1},
            k::ConvGeometry{c[1], c[2], cfg.height / 4, cfg.width / 4, 3, 2, 1}};
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

template <class T>
std::span<const T> cv(const std::vector<T>& v) { return {v.data(), v.size()}; }

template <class T>
void relu(std::vector<T>& v) {
    for (T& x : v) x = x > T{0} ? x : T{0};
}

template <class T>
void relu_grad(const std::vector<T>& act, std::vector<T>& d) {
    for (std::size_t i = 0; i < d.size(); ++i)
        if (!(act[i] > T{0})) d[i] = T{0};
}

template <class T>
struct StepCache {
    std::vector<T> x0, e1, e2, e3, in, f1, hp, r, z, n, uh, h, f2;
    T logit{}, value{};
    double score = 0.0;
};

template <class T>
void step_forward(const ParamSet<T>& p, const ControllerConfig& cfg, const ControllerInput& input,
                  std::span<const T> hprev, StepCache<T>& c) {
    if (input.image.size() != cfg.height * cfg.width)
        throw ShapeError("controller expects " + std::to_string(cfg.height) + "x" + std::to_string(cfg.width) +
                         " images, got " + shape_string(input.image.shape));
    const auto geo = encoder_geometry(cfg);
    const std::size_t F = cfg.feature_size(), D = cfg.input_size(), FC = cfg.fc_width, H = cfg.hidden_size;

    c.x0.assign(input.image.data.begin(), input.image.data.end());
    c.e1.resize(geo[0].out_size());
    k::conv2d_forward<T>(geo[0], cv(c.x0), p[kE0W].view(), p[kE0B].view(), c.e1);
    relu(c.e1);
    c.e2.resize(geo[1].out_size());
    k::conv2d_forward<T>(geo[1], cv(c.e1), p[kE1W].view(), p[kE1B].view(), c.e2);
    relu(c.e2);
    c.e3.resize(geo[2].out_size());
    k::conv2d_forward<T>(geo[2], cv(c.e2), p[kE2W].view(), p[kE2B].view(), c.e3);
    relu(c.e3);

    c.in.assign(c.e3.begin(), c.e3.end());
    c.in.resize(D);
    c.in[F] = static_cast<T>(input.prev_action);
    c.in[F + 1] = static_cast<T>(input.prev_raw_reward);
    c.in[F + 2] = static_cast<T>(input.prev_done);

    c.f1.resize(FC);
    k::dense_forward<T>(D, FC, cv(c.in), p[kFc1W].view(), p[kFc1B].view(), c.f1);
    relu(c.f1);

    c.hp.assign(hprev.begin(), hprev.end());
    std::vector<T> tmp(H);
    c.r.resize(H);
    c.z.resize(H);
    c.n.resize(H);
    c.uh.resize(H);
    k::dense_forward<T>(FC, H, cv(c.f1), p[kWr].view(), p[kBr].view(), c.r);
    k::dense_forward<T>(H, H, cv(c.hp), p[kUr].view(), {}, tmp);
    for (std::size_t i = 0; i < H; ++i) c.r[i] = static_cast<T>(1) / (T{1} + std::exp(-(c.r[i] + tmp[i])));
    k::dense_forward<T>(FC, H, cv(c.f1), p[kWz].view(), p[kBz].view(), c.z);
    k::dense_forward<T>(H, H, cv(c.hp), p[kUz].view(), {}, tmp);
    for (std::size_t i = 0; i < H; ++i) c.z[i] = static_cast<T>(1) / (T{1} + std::exp(-(c.z[i] + tmp[i])));
    k::dense_forward<T>(H, H, cv(c.hp), p[kUn].view(), p[kBhn].view(), c.uh);
    k::dense_forward<T>(FC, H, cv(c.f1), p[kWn].view(), p[kBn].view(), c.n);
    c.h.resize(H);
    for (std::size_t i = 0; i < H; ++i) {
        c.n[i] = std::tanh(c.n[i] + c.r[i] * c.uh[i]);
        c.h[i] = (T{1} - c.z[i]) * c.n[i] + c.z[i] * c.hp[i];
    }

    c.f2.resize(FC);
    k::dense_forward<T>(H, FC, cv(c.h), p[kFc2W].view(), p[kFc2B].view(), c.f2);
    relu(c.f2);

    T out[1];
    k::dense_forward<T>(FC, 1, cv(c.f2), p[kPolW].view(), p[kPolB].view(), std::span<T>(out, 1));
    c.logit = out[0];
    c.score = sigmoid(static_cast<double>(c.logit));
    k::dense_forward<T>(FC, 1, cv(c.f2), p[kValW].view(), p[kValB].view(), std::span<T>(out, 1));
    c.value = out[0];
}

// dh carries the gradient w.r.t. this step's output state on entry and the
// gradient w.r.t. its input state on exit.
template <class T>
void step_backward(const ParamSet<T>& p, const ControllerConfig& cfg, const StepCache<T>& c, T dlogit, T dvalue,
                   std::vector<T>& dh, ParamSet<T>& g) {
    const auto geo = encoder_geometry(cfg);
    const std::size_t D = cfg.input_size(), FC = cfg.fc_width, H = cfg.hidden_size;

    std::vector<T> df2(FC), tmp_fc(FC);
    k::dense_backward<T>(FC, 1, cv(c.f2), p[kPolW].view(), std::span<const T>(&dlogit, 1), df2, g[kPolW].view(),
                         g[kPolB].view());
    k::dense_backward<T>(FC, 1, cv(c.f2), p[kValW].view(), std::span<const T>(&dvalue, 1), tmp_fc,
                         g[kValW].view(), g[kValB].view());
    for (std::size_t i = 0; i < FC; ++i) df2[i] += tmp_fc[i];
    relu_grad(c.f2, df2);

    std::vector<T> dhn(H);
    k::dense_backward<T>(H, FC, cv(c.h), p[kFc2W].view(), cv(df2), dhn, g[kFc2W].view(), g[kFc2B].view());
    for (std::size_t i = 0; i < H; ++i) dhn[i] += dh[i];

    std::vector<T> dr(H), dz(H), dn(H), duh(H), dprev(H), df1(FC), tmp_h(H);
    for (std::size_t i = 0; i < H; ++i) {
        dn[i] = dhn[i] * (T{1} - c.z[i]) * (T{1} - c.n[i] * c.n[i]);
        dz[i] = dhn[i] * (c.hp[i] - c.n[i]) * c.z[i] * (T{1} - c.z[i]);
        dprev[i] = dhn[i] * c.z[i];
        duh[i] = dn[i] * c.r[i];
        dr[i] = dn[i] * c.uh[i] * c.r[i] * (T{1} - c.r[i]);
    }
    auto add_into = [](std::vector<T>& dst, const std::vector<T>& src) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    };
    k::dense_backward<T>(H, H, cv(c.hp), p[kUn].view(), cv(duh), tmp_h, g[kUn].view(), g[kBhn].view());
    add_into(dprev, tmp_h);
    k::dense_backward<T>(H, H, cv(c.hp), p[kUr].view(), cv(dr), tmp_h, g[kUr].view(), {});
    add_into(dprev, tmp_h);
    k::dense_backward<T>(H, H, cv(c.hp), p[kUz].view(), cv(dz), tmp_h, g[kUz].view(), {});
    add_into(dprev, tmp_h);
    k::dense_backward<T>(FC, H, cv(c.f1), p[kWn].view(), cv(dn), df1, g[kWn].view(), g[kBn].view());
    k::dense_backward<T>(FC, H, cv(c.f1), p[kWr].view(), cv(dr), tmp_fc, g[kWr].view(), g[kBr].view());
    add_into(df1, tmp_fc);
    k::dense_backward<T>(FC, H, cv(c.f1), p[kWz].view(), cv(dz), tmp_fc, g[kWz].view(), g[kBz].view());
    add_into(df1, tmp_fc);
    relu_grad(c.f1, df1);
    dh = std::move(dprev);

    std::vector<T> din(D);
    k::dense_backward<T>(D, FC, cv(c.in), p[kFc1W].view(), cv(df1), din, g[kFc1W].view(), g[kFc1B].view());
    std::vector<T> de3(din.begin(), din.begin() + static_cast<long>(c.e3.size()));
    relu_grad(c.e3, de3);
    std::vector<T> de2(c.e2.size());
    k::conv2d_backward<T>(geo[2], cv(c.e2), p[kE2W].view(), cv(de3), de2, g[kE2W].view(), g[kE2B].view());
    relu_grad(c.e2, de2);
    std::vector<T> de1(c.e1.size());
    k::conv2d_backward<T>(geo[1], cv(c.e1), p[kE1W].view(), cv(de2), de1, g[kE1W].view(), g[kE1B].view());
    relu_grad(c.e1, de1);
    k::conv2d_backward<T>(geo[0], cv(c.x0), p[kE0W].view(), cv(de1), std::span<T>{}, g[kE0W].view(),
                          g[kE0B].view());
}

void check_weights(const ControllerWeights& w, const ControllerConfig& cfg) {
    if (w.params.count() != kParamCount || w.params[kE0W].shape != Shape{cfg.encoder_channels[0], 1, 3, 3} ||
        w.params[kFc1W].shape != Shape{cfg.fc_width, cfg.input_size()} ||
        w.params[kUr].shape != Shape{cfg.hidden_size, cfg.hidden_size})
        throw ShapeError("controller weights do not match the controller config");
}

double clamp_score(double h) { return std::clamp(h, kScoreClamp, 1.0 - kScoreClamp); }

}  // namespace

std::size_t ControllerConfig::feature_size() const {
    return encoder_channels.at(2) * (height / 8) * (width / 8);
}

void ControllerConfig::validate() const {
    if (encoder_channels.size() != 3) throw ConfigError("controller.encoder_channels must list exactly 3 widths");
    for (std::size_t c : encoder_channels)
        if (c == 0) throw ConfigError("controller.encoder_channels entries must be positive");
    if (height == 0 || width == 0 || height % 8 != 0 || width % 8 != 0)
        throw ConfigError("controller image size must be a positive multiple of 8");
    if (fc_width == 0) throw ConfigError("controller.fc_width must be positive");
    if (hidden_size == 0) throw ConfigError("controller.hidden_size must be positive");
}

std::string ControllerConfig::to_json() const {
    return json{{"height", height},
                {"width", width},
                {"encoder_channels", encoder_channels},
                {"fc_width", fc_width},
                {"hidden_size", hidden_size}}
        .dump();
}

ControllerConfig ControllerConfig::from_json(const std::string& text) {
    const json j = json::parse(text);
    ControllerConfig c;
    c.height = j.at("height");
    c.width = j.at("width");
    c.encoder_channels = j.at("encoder_channels").get<std::vector<std::size_t>>();
    c.fc_width = j.at("fc_width");
    c.hidden_size = j.at("hidden_size");
    c.validate();
    return c;
}

std::string to_string(AdvantageNorm n) {
    switch (n) {
        case AdvantageNorm::batch: return "batch";
        case AdvantageNorm::running_scale: return "running-scale";
        case AdvantageNorm::none: return "none";
    }
    return "batch";
}

AdvantageNorm parse_advantage_norm(const std::string& s) {
    if (s == "batch") return AdvantageNorm::batch;
    if (s == "running-scale" || s == "running_scale") return AdvantageNorm::running_scale;
    if (s == "none") return AdvantageNorm::none;
    throw ConfigError("ppo.advantage_norm: unknown mode '" + s + "' (batch, running-scale, none)");
}

void PPOConfig::validate() const {
    if (!(clip_ratio > 0.0)) throw ConfigError("ppo.clip_ratio must be > 0");
    if (epochs_per_update < 1) throw ConfigError("ppo.epochs_per_update must be >= 1");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("ppo.gamma must lie in [0,1]");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("ppo.gae_lambda must lie in [0,1]");
    if (!(value_coef >= 0.0)) throw ConfigError("ppo.value_coef must be >= 0");
    if (!(entropy_coef >= 0.0)) throw ConfigError("ppo.entropy_coef must be >= 0");
    if (!(learning_rate > 0.0)) throw ConfigError("ppo.learning_rate must be > 0");
    if (!(max_grad_norm >= 0.0)) throw ConfigError("ppo.max_grad_norm must be >= 0");
}

std::string PPOConfig::to_json() const {
    return json{{"clip_ratio", clip_ratio},
                {"epochs_per_update", epochs_per_update},
                {"gamma", gamma},
                {"gae_lambda", gae_lambda},
                {"value_coef", value_coef},
                {"entropy_coef", entropy_coef},
                {"learning_rate", learning_rate},
                {"max_grad_norm", max_grad_norm},
                {"adam_beta1", adam.beta1},
                {"adam_beta2", adam.beta2},
                {"adam_eps", adam.eps},
                {"advantage_norm", to_string(advantage_norm)},
                {"min_mean_score", min_mean_score}}
        .dump();
}

PPOConfig PPOConfig::from_json(const std::string& text) {
    const json j = json::parse(text);
    PPOConfig c;
    c.clip_ratio = j.at("clip_ratio");
    c.epochs_per_update = j.at("epochs_per_update");
    c.gamma = j.at("gamma");
    c.gae_lambda = j.at("gae_lambda");
    c.value_coef = j.at("value_coef");
    c.entropy_coef = j.at("entropy_coef");
    c.learning_rate = j.at("learning_rate");
    c.max_grad_norm = j.at("max_grad_norm");
    c.adam.beta1 = j.at("adam_beta1");
    c.adam.beta2 = j.at("adam_beta2");
    c.adam.eps = j.at("adam_eps");
    c.advantage_norm = parse_advantage_norm(j.at("advantage_norm").get<std::string>());
    c.min_mean_score = j.at("min_mean_score");
    c.validate();
    return c;
}

ControllerWeights init_controller(const ControllerConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng = make_stream(seed, "controller-init");
    const auto& c = cfg.encoder_channels;
    const std::size_t D = cfg.input_size(), FC = cfg.fc_width, H = cfg.hidden_size;
    ParamSet<float> p;
    auto normal = [&](const std::string& name, Shape shape, double sd) {
        FloatTensor t(std::move(shape));
        for (float& v : t.data) v = static_cast<float>(sd * gaussian(rng));
        p.add(name, std::move(t));
    };
    auto uniform = [&](const std::string& name, Shape shape, double bound) {
        FloatTensor t(std::move(shape));
        for (float& v : t.data) v = static_cast<float>(bound * (2.0 * uniform01(rng) - 1.0));
        p.add(name, std::move(t));
    };
    auto zeros = [&](const std::string& name, std::size_t n) { p.add(name, FloatTensor({n})); };

    normal("enc0.weight", {c[0], 1, 3, 3}, std::sqrt(2.0 / 9.0));
    zeros("enc0.bias", c[0]);
    normal("enc1.weight", {c[1], c[0], 3, 3}, std::sqrt(2.0 / (9.0 * static_cast<double>(c[0]))));
    zeros("enc1.bias", c[1]);
    normal("enc2.weight", {c[2], c[1], 3, 3}, std::sqrt(2.0 / (9.0 * static_cast<double>(c[1]))));
    zeros("enc2.bias", c[2]);
    normal("fc1.weight", {FC, D}, std::sqrt(2.0 / static_cast<double>(D)));
    zeros("fc1.bias", FC);
    const double gb = 1.0 / std::sqrt(static_cast<double>(H));
    uniform("gru.w_r", {H, FC}, gb);
    uniform("gru.w_z", {H, FC}, gb);
    uniform("gru.w_n", {H, FC}, gb);
    uniform("gru.u_r", {H, H}, gb);
    uniform("gru.u_z", {H, H}, gb);
    uniform("gru.u_n", {H, H}, gb);
    zeros("gru.b_r", H);
    zeros("gru.b_z", H);
    zeros("gru.b_n", H);
    zeros("gru.b_hn", H);
    normal("fc2.weight", {FC, H}, std::sqrt(2.0 / static_cast<double>(H)));
    zeros("fc2.bias", FC);
    normal("policy.weight", {1, FC}, 0.01);
    zeros("policy.bias", 1);
    normal("value.weight", {1, FC}, 0.01);
    zeros("value.bias", 1);
    return ControllerWeights::from(std::move(p));
}

ControllerState initial_state(const ControllerConfig& cfg) {
    return ControllerState{std::vector<float>(cfg.hidden_size, 0.0f), 0};
}

ControllerState reset_state(const ControllerConfig& cfg, const ControllerState& previous) {
    return ControllerState{std::vector<float>(cfg.hidden_size, 0.0f), previous.trial_id + 1};
}

ScoreResult score_batch(const ControllerWeights& w, const ControllerConfig& cfg, const ControllerState& state,
                        const std::vector<ControllerInput>& inputs) {
    if (inputs.empty()) throw DomainError("score_batch: empty input list");
    check_weights(w, cfg);
    if (state.hidden.size() != cfg.hidden_size)
        throw ShapeError("controller state has " + std::to_string(state.hidden.size()) + " hidden units, expected " +
                         std::to_string(cfg.hidden_size));
    ScoreResult out;
    out.state = state;
    StepCache<float> cache;
    for (const auto& in : inputs) {
        step_forward<float>(w.params, cfg, in, out.state.hidden, cache);
        out.scores.push_back(cache.score);
        out.values.push_back(static_cast<double>(cache.value));
        out.state.hidden = cache.h;
    }
    return out;
}

std::vector<int> sample_actions(const std::vector<double>& scores, Rng& rng) {
    std::vector<int> actions;
    actions.reserve(scores.size());
    for (double s : scores) {
        if (!(s >= 0.0 && s <= 1.0)) throw DomainError("sample_actions: score " + std::to_string(s) + " outside [0,1]");
        actions.push_back(uniform01(rng) < s ? 1 : 0);
    }
    return actions;
}

double log_policy(const std::vector<double>& scores, const std::vector<int>& actions) {
    if (scores.size() != actions.size()) throw ShapeError("log_policy: scores and actions differ in length");
    double lp = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double h = clamp_score(scores[i]);
        lp += actions[i] != 0 ? std::log(h) : std::log1p(-h);
    }
    return lp;
}

std::vector<std::size_t> select_top_k(const std::vector<double>& scores, std::size_t k) {
    if (k > scores.size())
        throw DomainError("select_top_k: k=" + std::to_string(k) + " exceeds " + std::to_string(scores.size()) +
                          " scores");
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    idx.resize(k);
    return idx;
}

ReturnsAdvantages compute_returns_and_advantages(const Episode& episode, const PPOConfig& cfg) {
    const std::size_t n = episode.steps.size();
    if (n == 0) throw ConfigError("compute_returns_and_advantages: empty episode");
    ReturnsAdvantages out;
    out.returns.assign(n, 0.0);
    out.advantages.assign(n, 0.0);
    double ret = 0.0, gae = 0.0, next_value = 0.0;
    for (std::size_t t = n; t-- > 0;) {
        const auto& s = episode.steps[t];
        const double cont = s.done ? 0.0 : 1.0;
        ret = s.reward + cfg.gamma * cont * ret;
        const double delta = s.reward + cfg.gamma * cont * next_value - s.value;
        gae = delta + cfg.gamma * cfg.gae_lambda * cont * gae;
        out.returns[t] = ret;
        out.advantages[t] = gae;
        next_value = s.value;
    }
    return out;
}

void AdvantageScaler::observe(const std::vector<double>& advantages) {
    if (advantages.empty()) return;
    double ms = 0.0;
    for (double a : advantages) ms += a * a;
    ms /= static_cast<double>(advantages.size());
    mean_square = initialised ? decay * mean_square + (1.0 - decay) * ms : ms;
    initialised = true;
}

double AdvantageScaler::scale() const {
    return initialised && mean_square > 0.0 ? 1.0 / std::sqrt(mean_square) : 1.0;
}

void normalize_advantages(std::vector<std::vector<double>>& advantages, AdvantageNorm mode, AdvantageScaler* scaler) {
    if (mode == AdvantageNorm::none) return;
    std::vector<double> all;
    for (const auto& a : advantages) all.insert(all.end(), a.begin(), a.end());
    if (all.empty()) return;
    if (mode == AdvantageNorm::batch) {
        double mean = 0.0;
        for (double a : all) mean += a;
        mean /= static_cast<double>(all.size());
        double var = 0.0;
        for (double a : all) var += (a - mean) * (a - mean);
        const double sd = std::sqrt(var / static_cast<double>(all.size()));
        for (auto& a : advantages)
            for (double& v : a) v = (v - mean) / (sd + 1e-8);
        return;
    }
    AdvantageScaler local;
    AdvantageScaler& s = scaler != nullptr ? *scaler : local;
    s.observe(all);
    const double f = s.scale();
    for (auto& a : advantages)
        for (double& v : a) v *= f;
}

template <class T>
PPOTerms ppo_episode_loss(const ParamSet<T>& params, const ControllerConfig& cfg, const Episode& episode,
                          const std::vector<double>& advantages, const std::vector<double>& returns,
                          const PPOConfig& ppo, ParamSet<T>* grads) {
    const std::size_t n = episode.steps.size();
    if (n == 0) throw ConfigError("ppo: empty episode");
    if (advantages.size() != n || returns.size() != n)
        throw ShapeError("ppo: advantages/returns do not match the episode length");
    if (episode.initial_hidden.size() != cfg.hidden_size) throw ShapeError("ppo: episode hidden state size mismatch");

    std::vector<std::vector<StepCache<T>>> caches(n);
    std::vector<T> hidden(episode.initial_hidden.begin(), episode.initial_hidden.end());
    for (std::size_t t = 0; t < n; ++t) {
        const auto& s = episode.steps[t];
        if (s.inputs.empty() || s.actions.size() != s.inputs.size() || s.probs.size() != s.inputs.size())
            throw ShapeError("ppo: transition " + std::to_string(t) + " has inconsistent lengths");
        caches[t].resize(s.inputs.size());
        for (std::size_t i = 0; i < s.inputs.size(); ++i) {
            step_forward<T>(params, cfg, s.inputs[i], cv(hidden), caches[t][i]);
            hidden = caches[t][i].h;
        }
    }

    PPOTerms terms;
    const double inv_n = 1.0 / static_cast<double>(n);
    std::vector<std::vector<double>> dlogit(n), dvalue(n);
    for (std::size_t t = 0; t < n; ++t) {
        const auto& s = episode.steps[t];
        const auto& c = caches[t];
        const std::size_t b = c.size();
        double logp = 0.0, entropy = 0.0, value = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
            const double h = clamp_score(c[i].score);
            logp += s.actions[i] != 0 ? std::log(h) : std::log1p(-h);
            entropy += -h * std::log(h) - (1.0 - h) * std::log1p(-h);
            value += static_cast<double>(c[i].value);
        }
        value /= static_cast<double>(b);
        const double ratio = std::exp(logp - log_policy(s.probs, s.actions));
        const double A = advantages[t];
        const double clipped = std::clamp(ratio, 1.0 - ppo.clip_ratio, 1.0 + ppo.clip_ratio);
        const bool unclipped_active = ratio * A <= clipped * A;
        const double surr = std::min(ratio * A, clipped * A);
        const double verr = value - returns[t];
        terms.ratios.push_back(ratio);
        terms.surrogate += surr * inv_n;
        terms.value_loss += 0.5 * verr * verr * inv_n;
        terms.entropy += entropy * inv_n;

        const double dlogp = unclipped_active ? -A * ratio * inv_n : 0.0;
        dlogit[t].resize(b);
        dvalue[t].resize(b);
        for (std::size_t i = 0; i < b; ++i) {
            const double raw = c[i].score;
            const bool inside = raw > kScoreClamp && raw < 1.0 - kScoreClamp;
            const double h = clamp_score(raw);
            const double dlp = inside ? (s.actions[i] != 0 ? 1.0 - h : -h) : 0.0;
            const double dent = inside ? h * (1.0 - h) * (std::log1p(-h) - std::log(h)) : 0.0;
            dlogit[t][i] = dlogp * dlp - ppo.entropy_coef * inv_n * dent;
            dvalue[t][i] = ppo.value_coef * inv_n * verr / static_cast<double>(b);
        }
    }
    terms.loss = -terms.surrogate + ppo.value_coef * terms.value_loss - ppo.entropy_coef * terms.entropy;

    if (grads != nullptr) {
        if (!grads->same_structure(params)) throw ShapeError("ppo: gradient buffers do not match the weights");
        std::vector<T> dh(cfg.hidden_size, T{0});
        for (std::size_t t = n; t-- > 0;)
            for (std::size_t i = caches[t].size(); i-- > 0;)
                step_backward<T>(params, cfg, caches[t][i], static_cast<T>(dlogit[t][i]),
                                 static_cast<T>(dvalue[t][i]), dh, *grads);
    }
    return terms;
}

PPOResult ppo_update(const ControllerWeights& w, const ControllerConfig& cfg, const std::vector<Episode>& episodes,
                     const PPOConfig& ppo, AdvantageScaler* scaler) {
    ppo.validate();
    check_weights(w, cfg);
    if (episodes.empty()) throw ConfigError("ppo_update: no episodes");
    std::vector<std::vector<double>> adv, ret;
    for (const auto& e : episodes) {
        if (e.steps.empty()) throw ConfigError("ppo_update: empty episode");
        auto ra = compute_returns_and_advantages(e, ppo);
        adv.push_back(std::move(ra.advantages));
        ret.push_back(std::move(ra.returns));
    }
    normalize_advantages(adv, ppo.advantage_norm, scaler);

    PPOResult out;
    out.weights = w;
    const float inv_e = 1.0f / static_cast<float>(episodes.size());
    for (int epoch = 0; epoch < ppo.epochs_per_update; ++epoch) {
        ParamSet<float> grads = out.weights.params.zeros_like();
        double loss = 0.0;
        for (std::size_t e = 0; e < episodes.size(); ++e) {
            ParamSet<float> g = grads.zeros_like();
            const auto terms = ppo_episode_loss<float>(out.weights.params, cfg, episodes[e], adv[e], ret[e], ppo, &g);
            if (epoch == 0) out.first_epoch_ratios.insert(out.first_epoch_ratios.end(), terms.ratios.begin(),
                                                          terms.ratios.end());
            loss += terms.loss / static_cast<double>(episodes.size());
            for (std::size_t i = 0; i < g.count(); ++i)
                for (std::size_t j = 0; j < g[i].size(); ++j) grads[i].data[j] += g[i].data[j] * inv_e;
        }
        if (!std::isfinite(loss)) throw NumericError("ppo_update: non-finite loss in epoch " + std::to_string(epoch));
        out.epoch_losses.push_back(loss);
        clip_global_norm(grads, ppo.max_grad_norm);
        adam_step_inplace(out.weights, grads, ppo.learning_rate, ppo.adam);
    }
    return out;
}

void save_controller(const std::filesystem::path& dir, const ControllerWeights& w, const ControllerConfig& cfg,
                     const PPOConfig& ppo) {
    check_weights(w, cfg);
    const json j = {{"controller", json::parse(cfg.to_json())}, {"ppo", json::parse(ppo.to_json())}};
    save_checkpoint(dir, "controller", w, j.dump());
}

LoadedController load_controller(const std::filesystem::path& dir) {
    auto loaded = load_checkpoint(dir, "controller");
    LoadedController out;
    try {
        const json j = json::parse(loaded.config_json);
        out.config = ControllerConfig::from_json(j.at("controller").dump());
        out.ppo = PPOConfig::from_json(j.at("ppo").dump());
    } catch (const json::exception& e) {
        throw FormatError(dir.string() + ": bad controller config: " + e.what());
    }
    if (!loaded.weights.params.same_structure(init_controller(out.config, 0).params))
        throw FormatError(dir.string() + ": tensors do not match the recorded controller config");
    out.weights = std::move(loaded.weights);
    return out;
}

template PPOTerms ppo_episode_loss<float>(const ParamSet<float>&, const ControllerConfig&, const Episode&,
                                          const std::vector<double>&, const std::vector<double>&, const PPOConfig&,
                                          ParamSet<float>*);
template PPOTerms ppo_episode_loss<double>(const ParamSet<double>&, const ControllerConfig&, const Episode&,
                                           const std::vector<double>&, const std::vector<double>&,
                                           const PPOConfig&, ParamSet<double>*);

}  // namespace alprio
