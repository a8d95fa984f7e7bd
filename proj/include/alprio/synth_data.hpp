#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "alprio/rng.hpp"
#include "alprio/tensor.hpp"

namespace alprio {

enum class ShapeClass { disk, ellipse, rectangle, ring, cross, blob };

std::string to_string(ShapeClass c);
ShapeClass parse_shape_class(const std::string& name);

// Photometric profile of one acquisition site.
struct InstituteShift {
    double intensity_offset = 0.0;
    double contrast_gain = 1.0;
    double noise_sigma = 0.0;
    int blur_radius = 0;
};

// Planted label noise: a fraction of samples get heavy extra image noise and a
// wrong mask. "shuffled" draws the mask from an unrelated target geometry,
// "missing" leaves it empty.
enum class CorruptionMode { shuffled, missing };
std::string to_string(CorruptionMode m);
CorruptionMode parse_corruption_mode(const std::string& name);

struct Corruption {
    double fraction = 0.0;
    double noise_sigma = 0.3;
    CorruptionMode mode = CorruptionMode::shuffled;
};

struct TaskSpec {
    std::string name = "task";
    ShapeClass shape_class = ShapeClass::disk;
    InstituteShift institute_shift;
    std::vector<ShapeClass> distractor_classes;
    int max_distractors = 2;
    std::size_t height = 32;
    std::size_t width = 32;
    Corruption corruption;
    std::string task_tag;       // defaults to the shape class name
    std::string institute_tag;  // defaults to "site"

    // Throws ConfigError naming the offending field.
    void validate() const;
};

struct LabeledPair {
    std::string id;
    FloatTensor image;  // (1, H, W), values in [0,1]
    FloatTensor mask;   // (H, W), values in {0,1}
    std::string task_tag;
    std::string institute_tag;
    bool corrupted = false;

    std::size_t height() const { return mask.dim(0); }
    std::size_t width() const { return mask.dim(1); }

    friend bool operator==(const LabeledPair&, const LabeledPair&) = default;
};

struct LabeledDataset {
    std::vector<LabeledPair> pairs;
    std::string source;

    std::size_t size() const { return pairs.size(); }
    bool empty() const { return pairs.empty(); }
    const LabeledPair& operator[](std::size_t i) const { return pairs[i]; }

    // Non-empty, binary masks, matching dims, unique ids. Throws FormatError.
    void validate() const;

    friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

struct MDPEnvironment {
    std::string env_id;
    LabeledDataset controller_train;
    LabeledDataset controller_val;
    std::string task_tag;
    std::string institute_tag;
};

struct EnvironmentDistribution {
    std::vector<MDPEnvironment> environments;
    std::vector<double> sampling_weights;

    // Lengths match, weights non-negative and summing to 1 (within 1e-9).
    void validate() const;
};

// Geometry of one rendered shape, in pixel units.
struct ShapeGeometry {
    ShapeClass shape_class = ShapeClass::disk;
    double cx = 0.0, cy = 0.0;
    double a = 1.0;      // radius / semi-axis / half-length
    double b = 1.0;      // second semi-axis / half-width / arm thickness
    double inner = 0.0;  // ring inner radius
    double angle = 0.0;
    double harmonic_amp[2] = {0.0, 0.0};
    double harmonic_phase[2] = {0.0, 0.0};

    // Pixel (x, y) covered, tested at the pixel centre.
    bool covers(std::size_t x, std::size_t y) const;
};

ShapeGeometry random_geometry(ShapeClass c, std::size_t height, std::size_t width, Rng& rng);
FloatTensor rasterise(const ShapeGeometry& g, std::size_t height, std::size_t width);

struct RenderedSample {
    LabeledPair pair;
    ShapeGeometry target;
};

// One target-class shape plus 0..max_distractors distractors; the mask marks
// the target only. A corrupted sample gets the planted noise and a mask from
// an independent target geometry.
RenderedSample render_sample_detailed(const TaskSpec& spec, Rng& rng, bool corrupted = false);
LabeledPair render_sample(const TaskSpec& spec, Rng& rng, bool corrupted = false);

// samples_per_task pairs for one spec; ids "<name>-NNNN". Exactly
// round(fraction * n) samples are corrupted.
LabeledDataset generate_task_dataset(const TaskSpec& spec, std::size_t samples_per_task, std::uint64_t seed);

// (train, val) partition. |train| = round-half-up(ratio * n), clamped so each
// side keeps at least one pair; both parts keep the input order.
std::pair<LabeledDataset, LabeledDataset> split_dataset(const LabeledDataset& ds, double ratio, std::uint64_t seed);

MDPEnvironment make_environment(const std::string& env_id, const LabeledDataset& ds, double train_ratio,
                                std::uint64_t seed);

struct FamilyOptions {
    double train_ratio = 0.5;  // controller-train share of each environment
};

EnvironmentDistribution generate_task_family(const std::vector<TaskSpec>& specs, std::size_t samples_per_task,
                                             std::uint64_t seed, const FamilyOptions& options = {});

// Writes <dir>/manifest.json and <dir>/tensors/*.alpt.
void save_dataset(const LabeledDataset& ds, const std::filesystem::path& dir);
LabeledDataset load_dataset(const std::filesystem::path& manifest_path);

}  // namespace alprio
