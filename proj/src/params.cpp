#include "alprio/params.hpp"

#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "alprio/rng.hpp"
#include "alprio/tensor_io.hpp"

namespace alprio {

using nlohmann::json;

bool TrainableParams::all_finite() const {
    for (std::size_t i = 0; i < params.count(); ++i)
        if (!params[i].all_finite()) return false;
    return true;
}

void TrainableParams::reset_moments() {
    first_moment.zero();
    second_moment.zero();
    step_counter = 0;
}

void adam_step_inplace(TrainableParams& w, const ParamSet<float>& grads, double lr, const AdamSettings& adam) {
    if (!w.params.same_structure(grads)) throw ShapeError("adam_step: gradient structure does not match weights");
    for (std::size_t i = 0; i < grads.count(); ++i)
        if (!grads[i].all_finite()) throw NumericError("adam_step: non-finite gradient in tensor '" + grads.name(i) + "'");

    const std::int64_t t = w.step_counter + 1;
    const double c1 = 1.0 - std::pow(adam.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(adam.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < grads.count(); ++i) {
        auto& p = w.params[i].data;
        auto& m = w.first_moment[i].data;
        auto& v = w.second_moment[i].data;
        const auto& g = grads[i].data;
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double gk = g[k];
            const double mk = adam.beta1 * m[k] + (1.0 - adam.beta1) * gk;
            const double vk = adam.beta2 * v[k] + (1.0 - adam.beta2) * gk * gk;
            m[k] = static_cast<float>(mk);
            v[k] = static_cast<float>(vk);
            const double step = lr * (mk / c1) / (std::sqrt(vk / c2) + adam.eps);
            p[k] = static_cast<float>(p[k] - step);
        }
    }
    w.step_counter = t;
}

TrainableParams adam_step(const TrainableParams& w, const ParamSet<float>& grads, double lr, const AdamSettings& adam) {
    TrainableParams out = w;
    adam_step_inplace(out, grads, lr, adam);
    return out;
}

TrainableParams reptile_sync(const TrainableParams& w_t, const TrainableParams& w_new, double epsilon) {
    if (!w_t.params.same_structure(w_new.params)) throw ShapeError("reptile_sync: weight structures differ");
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw DomainError("reptile_sync: epsilon must lie in [0,1]");
    TrainableParams out = w_t;
    for (std::size_t i = 0; i < out.params.count(); ++i) {
        auto& dst = out.params[i].data;
        const auto& a = w_t.params[i].data;
        const auto& b = w_new.params[i].data;
        for (std::size_t k = 0; k < dst.size(); ++k)
            dst[k] = static_cast<float>((1.0 - epsilon) * static_cast<double>(a[k]) + epsilon * static_cast<double>(b[k]));
    }
    out.reset_moments();
    return out;
}

double anneal_epsilon(std::int64_t trial_index, std::int64_t total_trials) {
    if (total_trials < 1) throw ConfigError("anneal_epsilon: total_trials must be >= 1");
    if (trial_index < 0 || trial_index >= total_trials)
        throw ConfigError("anneal_epsilon: trial index " + std::to_string(trial_index) + " outside [0, " +
                          std::to_string(total_trials) + ")");
    if (total_trials == 1) return 1.0;
    return 1.0 - static_cast<double>(trial_index) / static_cast<double>(total_trials - 1);
}

double clip_global_norm(ParamSet<float>& grads, double max_norm) {
    double sq = 0.0;
    for (std::size_t i = 0; i < grads.count(); ++i)
        for (float g : grads[i].data) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double scale = max_norm / norm;
        for (std::size_t i = 0; i < grads.count(); ++i)
            for (float& g : grads[i].data) g = static_cast<float>(g * scale);
    }
    return norm;
}

std::string hash_hex(std::string_view text) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(text)));
    return buf;
}

namespace {

std::string tensor_file(std::string_view group, const std::string& name) {
    return std::string(group) + "." + name + ".alpt";
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, std::string_view kind, const TrainableParams& w,
                     const std::string& config_json) {
    std::filesystem::create_directories(dir);
    json names = json::array();
    for (std::size_t i = 0; i < w.params.count(); ++i) {
        const std::string& n = w.params.name(i);
        names.push_back(n);
        write_tensor(dir / tensor_file("param", n), w.params[i]);
        write_tensor(dir / tensor_file("adam_m", n), w.first_moment[i]);
        write_tensor(dir / tensor_file("adam_v", n), w.second_moment[i]);
    }
    json sidecar;
    sidecar["format"] = "alprio-checkpoint-1";
    sidecar["kind"] = kind;
    sidecar["tensors"] = names;
    sidecar["step_counter"] = w.step_counter;
    sidecar["config"] = json::parse(config_json);
    sidecar["config_hash"] = hash_hex(config_json);
    write_text_file(dir / "checkpoint.json", sidecar.dump(2) + "\n");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir, std::string_view kind) {
    const auto sidecar_path = dir / "checkpoint.json";
    json sidecar;
    try {
        sidecar = json::parse(read_text_file(sidecar_path));
    } catch (const json::exception& e) {
        throw FormatError(sidecar_path.string() + ": " + e.what());
    }
    if (sidecar.value("format", "") != "alprio-checkpoint-1")
        throw FormatError(sidecar_path.string() + ": unknown checkpoint format");
    if (sidecar.value("kind", "") != kind)
        throw FormatError(sidecar_path.string() + ": expected a " + std::string(kind) + " checkpoint, found '" +
                          sidecar.value("kind", "") + "'");
    LoadedCheckpoint out;
    ParamSet<float> p, m, v;
    for (const auto& n : sidecar.at("tensors")) {
        const std::string name = n.get<std::string>();
        p.add(name, read_tensor(dir / tensor_file("param", name)));
        m.add(name, read_tensor(dir / tensor_file("adam_m", name)));
        v.add(name, read_tensor(dir / tensor_file("adam_v", name)));
    }
    if (!p.same_structure(m) || !p.same_structure(v))
        throw FormatError(dir.string() + ": moment tensors do not match parameter shapes");
    out.weights.params = std::move(p);
    out.weights.first_moment = std::move(m);
    out.weights.second_moment = std::move(v);
    out.weights.step_counter = sidecar.at("step_counter").get<std::int64_t>();
    out.config_json = sidecar.at("config").dump();
    out.config_hash = sidecar.at("config_hash").get<std::string>();
    return out;
}

}  // namespace alprio
