#include "alprio/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>

#include <nlohmann/json.hpp>

#include "alprio/kernels.hpp"
#include "alprio/parallel.hpp"
#include "alprio/tensor_io.hpp"

namespace alprio {

using nlohmann::json;

namespace {

constexpr float kBackground = 0.15f;
constexpr float kForeground = 0.6f;

const std::pair<ShapeClass, const char*> kShapeNames[] = {
    {ShapeClass::disk, "disk"},     {ShapeClass::ellipse, "ellipse"}, {ShapeClass::rectangle, "rectangle"},
    {ShapeClass::ring, "ring"},     {ShapeClass::cross, "cross"},     {ShapeClass::blob, "blob"},
};

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

double bounding_radius(const ShapeGeometry& g) {
    switch (g.shape_class) {
        case ShapeClass::rectangle:
        case ShapeClass::cross:
            return std::hypot(g.a, g.b);
        case ShapeClass::blob:
            return g.a * (1.0 + g.harmonic_amp[0] + g.harmonic_amp[1]);
        default:
            return g.a;
    }
}

void box_blur(std::vector<float>& img, std::size_t h, std::size_t w, int radius) {
    if (radius <= 0) return;
    std::vector<float> tmp(img.size());
    const long r = radius;
    auto clampi = [](long v, long hi) { return std::clamp<long>(v, 0, hi - 1); };
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (long d = -r; d <= r; ++d) acc += img[y * w + static_cast<std::size_t>(clampi(static_cast<long>(x) + d, static_cast<long>(w)))];
            tmp[y * w + x] = static_cast<float>(acc / static_cast<double>(2 * r + 1));
        }
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (long d = -r; d <= r; ++d) acc += tmp[static_cast<std::size_t>(clampi(static_cast<long>(y) + d, static_cast<long>(h))) * w + x];
            img[y * w + x] = static_cast<float>(acc / static_cast<double>(2 * r + 1));
        }
}

}  // namespace

std::string to_string(ShapeClass c) {
    for (const auto& [cls, name] : kShapeNames)
        if (cls == c) return name;
    return "unknown";
}

ShapeClass parse_shape_class(const std::string& name) {
    for (const auto& [cls, n] : kShapeNames)
        if (name == n) return cls;
    throw ConfigError("unknown shape class '" + name + "'");
}

void TaskSpec::validate() const {
    auto fail = [&](const std::string& field, const std::string& why) {
        throw ConfigError("task '" + name + "': " + field + " " + why);
    };
    if (name.empty()) fail("name", "must not be empty");
    if (!(institute_shift.noise_sigma >= 0.0)) fail("noise_sigma", "must be >= 0");
    if (institute_shift.blur_radius < 0) fail("blur_radius", "must be >= 0");
    if (!std::isfinite(institute_shift.intensity_offset)) fail("intensity_offset", "must be finite");
    if (!(institute_shift.contrast_gain > 0.0) || !std::isfinite(institute_shift.contrast_gain))
        fail("contrast_gain", "must be a positive finite number");
    if (std::find(distractor_classes.begin(), distractor_classes.end(), shape_class) != distractor_classes.end())
        fail("distractor_classes", "must not contain the target class " + to_string(shape_class));
    if (max_distractors < 0) fail("max_distractors", "must be >= 0");
    if (height < 8 || width < 8) fail("image_size", "must be at least 8x8");
    if (height % 8 != 0 || width % 8 != 0) fail("image_size", "must be a multiple of 8");
    if (!(corruption.fraction >= 0.0 && corruption.fraction <= 1.0)) fail("corruption_fraction", "must lie in [0,1]");
    if (!(corruption.noise_sigma >= 0.0)) fail("corruption_noise_sigma", "must be >= 0");
}

void LabeledDataset::validate() const {
    if (pairs.empty()) throw FormatError("dataset '" + source + "' is empty");
    const std::size_t h = pairs.front().mask.rank() == 2 ? pairs.front().mask.dim(0) : 0;
    const std::size_t w = pairs.front().mask.rank() == 2 ? pairs.front().mask.dim(1) : 0;
    std::set<std::string> ids;
    for (const auto& p : pairs) {
        if (p.image.shape != Shape{1, h, w} || p.mask.shape != Shape{h, w})
            throw FormatError("pair '" + p.id + "': image " + shape_string(p.image.shape) + " and mask " +
                              shape_string(p.mask.shape) + " do not share the dataset dims (" +
                              std::to_string(h) + "," + std::to_string(w) + ")");
        for (float v : p.mask.data)
            if (v != 0.0f && v != 1.0f) throw FormatError("pair '" + p.id + "': mask is not binary");
        if (!ids.insert(p.id).second) throw FormatError("duplicate id '" + p.id + "' in dataset '" + source + "'");
    }
}

void EnvironmentDistribution::validate() const {
    if (environments.empty()) throw ConfigError("environment distribution is empty");
    if (environments.size() != sampling_weights.size())
        throw ConfigError("environment distribution: weight count does not match environment count");
    double total = 0.0;
    for (double wgt : sampling_weights) {
        if (!(wgt >= 0.0)) throw ConfigError("environment distribution: negative sampling weight");
        total += wgt;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("environment distribution: weights do not sum to 1");
}

bool ShapeGeometry::covers(std::size_t x, std::size_t y) const {
    const double dx = static_cast<double>(x) + 0.5 - cx;
    const double dy = static_cast<double>(y) + 0.5 - cy;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = c * dx + s * dy;
    const double v = -s * dx + c * dy;
    switch (shape_class) {
        case ShapeClass::disk:
            return dx * dx + dy * dy <= a * a;
        case ShapeClass::ellipse:
            return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
        case ShapeClass::rectangle:
            return std::abs(u) <= a && std::abs(v) <= b;
        case ShapeClass::ring: {
            const double d2 = dx * dx + dy * dy;
            return d2 <= a * a && d2 >= inner * inner;
        }
        case ShapeClass::cross:
            return (std::abs(u) <= a && std::abs(v) <= b) || (std::abs(u) <= b && std::abs(v) <= a);
        case ShapeClass::blob: {
            const double theta = std::atan2(dy, dx);
            const double r = a * (1.0 + harmonic_amp[0] * std::cos(2.0 * theta + harmonic_phase[0]) +
                                  harmonic_amp[1] * std::cos(3.0 * theta + harmonic_phase[1]));
            return dx * dx + dy * dy <= r * r;
        }
    }
    return false;
}

ShapeGeometry random_geometry(ShapeClass c, std::size_t height, std::size_t width, Rng& rng) {
    const double m = static_cast<double>(std::min(height, width));
    constexpr double pi = std::numbers::pi;
    ShapeGeometry g;
    g.shape_class = c;
    switch (c) {
        case ShapeClass::disk:
            g.a = uniform(rng, 0.12, 0.25) * m;
            break;
        case ShapeClass::ellipse:
            g.a = uniform(rng, 0.15, 0.30) * m;
            g.b = uniform(rng, 0.45, 0.80) * g.a;
            g.angle = uniform(rng, 0.0, pi);
            break;
        case ShapeClass::rectangle:
            g.a = uniform(rng, 0.12, 0.26) * m;
            g.b = uniform(rng, 0.50, 0.90) * g.a;
            g.angle = uniform(rng, 0.0, pi);
            break;
        case ShapeClass::ring:
            g.a = uniform(rng, 0.18, 0.30) * m;
            g.inner = uniform(rng, 0.45, 0.65) * g.a;
            break;
        case ShapeClass::cross:
            g.a = uniform(rng, 0.18, 0.30) * m;
            g.b = uniform(rng, 0.25, 0.40) * g.a;
            g.angle = uniform(rng, 0.0, pi / 2.0);
            break;
        case ShapeClass::blob:
            g.a = uniform(rng, 0.14, 0.24) * m;
            for (int k = 0; k < 2; ++k) {
                g.harmonic_amp[k] = uniform(rng, 0.0, 0.25);
                g.harmonic_phase[k] = uniform(rng, 0.0, 2.0 * pi);
            }
            break;
    }
    const double margin = bounding_radius(g) + 1.0;
    auto centre = [&](double extent) {
        const double lo = margin, hi = extent - margin;
        return hi > lo ? uniform(rng, lo, hi) : extent / 2.0;
    };
    g.cx = centre(static_cast<double>(width));
    g.cy = centre(static_cast<double>(height));
    return g;
}

FloatTensor rasterise(const ShapeGeometry& g, std::size_t height, std::size_t width) {
    FloatTensor mask({height, width});
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x)
            if (g.covers(x, y)) mask.data[y * width + x] = 1.0f;
    return mask;
}

std::string to_string(CorruptionMode m) { return m == CorruptionMode::missing ? "missing" : "shuffled"; }

CorruptionMode parse_corruption_mode(const std::string& name) {
    if (name == "shuffled") return CorruptionMode::shuffled;
    if (name == "missing") return CorruptionMode::missing;
    throw ConfigError("corruption_mode: unknown mode '" + name + "' (shuffled, missing)");
}

RenderedSample render_sample_detailed(const TaskSpec& spec, Rng& rng, bool corrupted) {
    const std::size_t H = spec.height, W = spec.width;
    RenderedSample out;
    out.target = random_geometry(spec.shape_class, H, W, rng);
    FloatTensor target_mask = rasterise(out.target, H, W);

    std::vector<float> img(H * W, kBackground);
    std::vector<bool> occupied(H * W, false);
    for (std::size_t i = 0; i < img.size(); ++i)
        if (target_mask.data[i] != 0.0f) {
            img[i] = kForeground;
            occupied[i] = true;
        }

    if (!spec.distractor_classes.empty() && spec.max_distractors > 0) {
        const auto count = uniform_index(rng, static_cast<std::uint64_t>(spec.max_distractors) + 1);
        for (std::uint64_t d = 0; d < count; ++d) {
            const ShapeClass cls = spec.distractor_classes[uniform_index(rng, spec.distractor_classes.size())];
            for (int attempt = 0; attempt < 10; ++attempt) {
                const ShapeGeometry g = random_geometry(cls, H, W, rng);
                const FloatTensor m = rasterise(g, H, W);
                bool overlaps = false;
                for (std::size_t i = 0; i < img.size() && !overlaps; ++i) overlaps = m.data[i] != 0.0f && occupied[i];
                if (overlaps) continue;
                for (std::size_t i = 0; i < img.size(); ++i)
                    if (m.data[i] != 0.0f) {
                        img[i] = kForeground;
                        occupied[i] = true;
                    }
                break;
            }
        }
    }

    const InstituteShift& site = spec.institute_shift;
    for (float& v : img) v = static_cast<float>(site.contrast_gain * v + site.intensity_offset);
    box_blur(img, H, W, site.blur_radius);
    if (site.noise_sigma > 0.0)
        for (float& v : img) v = static_cast<float>(v + site.noise_sigma * gaussian(rng));
    if (corrupted) {
        if (spec.corruption.noise_sigma > 0.0)
            for (float& v : img) v = static_cast<float>(v + spec.corruption.noise_sigma * gaussian(rng));
        if (spec.corruption.mode == CorruptionMode::shuffled)
            target_mask = rasterise(random_geometry(spec.shape_class, H, W, rng), H, W);
        else
            target_mask.zero();
    }
    for (float& v : img) v = std::clamp(v, 0.0f, 1.0f);

    out.pair.image = FloatTensor({1, H, W}, std::move(img));
    out.pair.mask = std::move(target_mask);
    out.pair.task_tag = spec.task_tag.empty() ? to_string(spec.shape_class) : spec.task_tag;
    out.pair.institute_tag = spec.institute_tag.empty() ? "site" : spec.institute_tag;
    out.pair.corrupted = corrupted;
    return out;
}

LabeledPair render_sample(const TaskSpec& spec, Rng& rng, bool corrupted) {
    return render_sample_detailed(spec, rng, corrupted).pair;
}

LabeledDataset generate_task_dataset(const TaskSpec& spec, std::size_t samples_per_task, std::uint64_t seed) {
    spec.validate();
    if (samples_per_task < 4) throw ConfigError("samples_per_task must be >= 4");

    std::vector<bool> corrupt(samples_per_task, false);
    const auto n_corrupt = static_cast<std::size_t>(
        std::floor(spec.corruption.fraction * static_cast<double>(samples_per_task) + 0.5));
    if (n_corrupt > 0) {
        std::vector<std::size_t> order(samples_per_task);
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng pick = make_stream(seed, "corrupt/" + spec.name);
        shuffle(order, pick);
        for (std::size_t i = 0; i < n_corrupt; ++i) corrupt[order[i]] = true;
    }

    LabeledDataset ds;
    ds.source = spec.name;
    ds.pairs.resize(samples_per_task);
    const long n = static_cast<long>(samples_per_task);
    ExceptionSlot error;
#pragma omp parallel for schedule(static) num_threads(kernels::worker_threads())
    for (long i = 0; i < n; ++i) {
        try {
            const auto iu = static_cast<std::size_t>(i);
            Rng rng = make_stream(seed, "data/" + spec.name + "/" + std::to_string(iu));
            LabeledPair p = render_sample(spec, rng, corrupt[iu]);
            char id[32];
            std::snprintf(id, sizeof id, "-%04zu", iu);
            p.id = spec.name + id;
            ds.pairs[iu] = std::move(p);
        } catch (...) {
            error.capture();
        }
    }
    error.rethrow();
    return ds;
}

std::pair<LabeledDataset, LabeledDataset> split_dataset(const LabeledDataset& ds, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must lie in (0,1), got " + std::to_string(ratio));
    const std::size_t n = ds.size();
    if (n < 2) throw ConfigError("split_dataset needs at least 2 pairs, got " + std::to_string(n));
    auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 0.5));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng = make_stream(seed, "split");
    shuffle(order, rng);
    std::vector<bool> to_train(n, false);
    for (std::size_t i = 0; i < n_train; ++i) to_train[order[i]] = true;

    LabeledDataset train, val;
    train.source = ds.source + "/train";
    val.source = ds.source + "/val";
    for (std::size_t i = 0; i < n; ++i) (to_train[i] ? train : val).pairs.push_back(ds.pairs[i]);
    return {std::move(train), std::move(val)};
}

MDPEnvironment make_environment(const std::string& env_id, const LabeledDataset& ds, double train_ratio,
                                std::uint64_t seed) {
    ds.validate();
    MDPEnvironment env;
    env.env_id = env_id;
    auto [train, val] = split_dataset(ds, train_ratio, splitmix64(seed ^ fnv1a(env_id)));
    env.controller_train = std::move(train);
    env.controller_val = std::move(val);
    env.task_tag = ds.pairs.front().task_tag;
    env.institute_tag = ds.pairs.front().institute_tag;
    return env;
}

EnvironmentDistribution generate_task_family(const std::vector<TaskSpec>& specs, std::size_t samples_per_task,
                                             std::uint64_t seed, const FamilyOptions& options) {
    if (specs.empty()) throw ConfigError("generate_task_family: no task specs given");
    EnvironmentDistribution dist;
    for (const auto& spec : specs) {
        const LabeledDataset ds = generate_task_dataset(spec, samples_per_task, seed);
        dist.environments.push_back(make_environment(spec.name, ds, options.train_ratio, seed));
    }
    dist.sampling_weights.assign(specs.size(), 1.0 / static_cast<double>(specs.size()));
    return dist;
}

void save_dataset(const LabeledDataset& ds, const std::filesystem::path& dir) {
    ds.validate();
    json manifest;
    manifest["source"] = ds.source;
    json pairs = json::array();
    for (const auto& p : ds.pairs) {
        const std::string image_rel = "tensors/" + p.id + ".image.alpt";
        const std::string mask_rel = "tensors/" + p.id + ".mask.alpt";
        write_tensor(dir / image_rel, p.image);
        write_tensor(dir / mask_rel, p.mask);
        pairs.push_back({{"id", p.id},
                         {"image", image_rel},
                         {"mask", mask_rel},
                         {"task_tag", p.task_tag},
                         {"institute_tag", p.institute_tag},
                         {"corrupted", p.corrupted}});
    }
    manifest["pairs"] = std::move(pairs);
    write_text_file(dir / "manifest.json", manifest.dump(1) + "\n");
}

LabeledDataset load_dataset(const std::filesystem::path& manifest_path) {
    json manifest;
    try {
        manifest = json::parse(read_text_file(manifest_path));
    } catch (const json::exception& e) {
        throw FormatError(manifest_path.string() + ": " + e.what());
    }
    const auto base = manifest_path.parent_path();
    LabeledDataset ds;
    try {
        ds.source = manifest.at("source").get<std::string>();
        for (const auto& entry : manifest.at("pairs")) {
            LabeledPair p;
            p.id = entry.at("id").get<std::string>();
            p.image = read_tensor(base / entry.at("image").get<std::string>());
            p.mask = read_tensor(base / entry.at("mask").get<std::string>());
            p.task_tag = entry.at("task_tag").get<std::string>();
            p.institute_tag = entry.at("institute_tag").get<std::string>();
            p.corrupted = entry.value("corrupted", false);
            if (p.image.rank() != 3 || p.image.dim(0) != 1 || p.mask.rank() != 2 ||
                p.image.dim(1) != p.mask.dim(0) || p.image.dim(2) != p.mask.dim(1))
                throw FormatError("pair '" + p.id + "': image " + shape_string(p.image.shape) + " and mask " +
                                  shape_string(p.mask.shape) + " disagree");
            ds.pairs.push_back(std::move(p));
        }
    } catch (const json::exception& e) {
        throw FormatError(manifest_path.string() + ": " + e.what());
    }
    ds.validate();
    return ds;
}

}  // namespace alprio
