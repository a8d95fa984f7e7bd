#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "alprio/tensor.hpp"

namespace alprio {

// Ordered name -> tensor map. Order is insertion order and is part of the
// structure: two sets match only if names, order and shapes agree.
template <class T>
class ParamSet {
public:
    void add(std::string name, Tensor<T> value) {
        names_.push_back(std::move(name));
        tensors_.push_back(std::move(value));
    }

    std::size_t count() const { return tensors_.size(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    const std::vector<std::string>& names() const { return names_; }

    Tensor<T>& operator[](std::size_t i) { return tensors_[i]; }
    const Tensor<T>& operator[](std::size_t i) const { return tensors_[i]; }

    std::size_t index_of(std::string_view name) const {
        for (std::size_t i = 0; i < names_.size(); ++i)
            if (names_[i] == name) return i;
        throw ShapeError("no parameter named '" + std::string(name) + "'");
    }
    Tensor<T>& at(std::string_view name) { return tensors_[index_of(name)]; }
    const Tensor<T>& at(std::string_view name) const { return tensors_[index_of(name)]; }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += t.size();
        return n;
    }

    ParamSet zeros_like() const {
        ParamSet out;
        for (std::size_t i = 0; i < count(); ++i) out.add(names_[i], Tensor<T>(tensors_[i].shape));
        return out;
    }

    void zero() {
        for (auto& t : tensors_) t.zero();
    }

    template <class U>
    ParamSet<U> cast() const {
        ParamSet<U> out;
        for (std::size_t i = 0; i < count(); ++i) out.add(names_[i], tensors_[i].template cast<U>());
        return out;
    }

    template <class U>
    bool same_structure(const ParamSet<U>& other) const {
        if (other.count() != count()) return false;
        for (std::size_t i = 0; i < count(); ++i)
            if (other.name(i) != names_[i] || other[i].shape != tensors_[i].shape) return false;
        return true;
    }

    // Element access across the flattened concatenation, for finite-difference checks.
    T& flat(std::size_t k) {
        for (auto& t : tensors_) {
            if (k < t.size()) return t.data[k];
            k -= t.size();
        }
        throw ShapeError("flat parameter index out of range");
    }

    friend bool operator==(const ParamSet& a, const ParamSet& b) = default;

private:
    std::vector<std::string> names_;
    std::vector<Tensor<T>> tensors_;
};

// Parameters together with their Adam moment estimates.
struct TrainableParams {
    ParamSet<float> params;
    ParamSet<float> first_moment;
    ParamSet<float> second_moment;
    std::int64_t step_counter = 0;

    static TrainableParams from(ParamSet<float> p) {
        TrainableParams t;
        t.first_moment = p.zeros_like();
        t.second_moment = p.zeros_like();
        t.params = std::move(p);
        return t;
    }

    bool all_finite() const;
    void reset_moments();

    friend bool operator==(const TrainableParams&, const TrainableParams&) = default;
};

struct AdamSettings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One bias-corrected Adam step. Throws NumericError naming the first tensor
// with a non-finite gradient.
TrainableParams adam_step(const TrainableParams& w, const ParamSet<float>& grads, double lr,
                          const AdamSettings& adam = {});
void adam_step_inplace(TrainableParams& w, const ParamSet<float>& grads, double lr, const AdamSettings& adam = {});

// w_t + epsilon (w_new - w_t), evaluated as (1-eps) w_t + eps w_new so both
// endpoints are reproduced exactly. Moments and step counter are reset.
TrainableParams reptile_sync(const TrainableParams& w_t, const TrainableParams& w_new, double epsilon);

// 1 - i/(n-1), or 1 when n == 1.
double anneal_epsilon(std::int64_t trial_index, std::int64_t total_trials);

// Scales grads in place so their global L2 norm is at most max_norm; returns the pre-clip norm.
double clip_global_norm(ParamSet<float>& grads, double max_norm);

// Checkpoint directory: one ALPT1 file per named tensor (parameters and both
// moment maps) plus checkpoint.json carrying the tensor order, step counter,
// a caller-supplied config object and its hash.
void save_checkpoint(const std::filesystem::path& dir, std::string_view kind, const TrainableParams& w,
                     const std::string& config_json);
struct LoadedCheckpoint {
    TrainableParams weights;
    std::string config_json;
    std::string config_hash;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir, std::string_view kind);

std::string hash_hex(std::string_view text);

}  // namespace alprio
