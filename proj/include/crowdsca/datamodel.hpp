#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace crowdsca {

/// RGB image with values in [0,1], stored planar (channel, row, col).
struct CrowdImage {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;  // 3 * height * width

    CrowdImage() = default;
    CrowdImage(int h, int w, float fill = 0.0F) : height(h), width(w), pixels(3UL * h * w, fill) {}

    float& at(int channel, int row, int col) {
        return pixels[(static_cast<std::size_t>(channel) * height + row) * width + col];
    }
    [[nodiscard]] float at(int channel, int row, int col) const {
        return pixels[(static_cast<std::size_t>(channel) * height + row) * width + col];
    }
    friend bool operator==(const CrowdImage&, const CrowdImage&) = default;
};

/// Continuous pixel coordinates: pixel (i, j) spans [i, i+1) x [j, j+1).
struct HeadPoint {
    double row = 0.0;
    double col = 0.0;
    friend bool operator==(const HeadPoint&, const HeadPoint&) = default;
};
using HeadPoints = std::vector<HeadPoint>;

enum class MaskProvenance { exact, detection_rectangles };

struct CrowdMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> values;  // 0 or 1, row-major
    MaskProvenance provenance = MaskProvenance::exact;

    CrowdMask() = default;
    CrowdMask(int h, int w, MaskProvenance p)
        : height(h), width(w), values(static_cast<std::size_t>(h) * w, 0), provenance(p) {}

    std::uint8_t& at(int row, int col) { return values[static_cast<std::size_t>(row) * width + col]; }
    [[nodiscard]] std::uint8_t at(int row, int col) const {
        return values[static_cast<std::size_t>(row) * width + col];
    }
    friend bool operator==(const CrowdMask&, const CrowdMask&) = default;
};

enum class DensityLevel { low, mid, high };
enum class BackgroundStyle { plain, textured };

struct SceneAttributes {
    DensityLevel density_level = DensityLevel::low;
    BackgroundStyle background_style = BackgroundStyle::plain;
    double brightness = 0.5;
    friend bool operator==(const SceneAttributes&, const SceneAttributes&) = default;
};

std::string_view to_string(DensityLevel v);
std::string_view to_string(BackgroundStyle v);
std::string_view to_string(MaskProvenance v);
DensityLevel parse_density_level(std::string_view s);
BackgroundStyle parse_background_style(std::string_view s);

struct SourceSample {
    std::string id;
    CrowdImage image;
    HeadPoints heads;
    CrowdMask mask;  // provenance == exact
    SceneAttributes attributes;
    friend bool operator==(const SourceSample&, const SourceSample&) = default;
};

/// Target-domain sample. Training only ever sees image and mask; heads are held out for evaluation.
struct TargetSample {
    std::string id;
    CrowdImage image;
    CrowdMask mask;  // provenance == detection_rectangles
    std::optional<HeadPoints> heads;
    std::optional<SceneAttributes> attributes;
    friend bool operator==(const TargetSample&, const TargetSample&) = default;
};

enum class DomainKind { source, target };
std::string_view to_string(DomainKind v);
DomainKind parse_domain_kind(std::string_view s);

template <typename Sample>
struct Dataset {
    std::vector<Sample> samples;

    [[nodiscard]] std::size_t size() const { return samples.size(); }
    [[nodiscard]] bool empty() const { return samples.empty(); }
    friend bool operator==(const Dataset&, const Dataset&) = default;
};
using SourceDataset = Dataset<SourceSample>;
using TargetDataset = Dataset<TargetSample>;

// ---------------------------------------------------------------------------
// synthetic two-domain scenes

struct SceneConfig {
    int height = 160;
    int width = 160;
    int n_people = 10;
    SceneAttributes attributes;
};

struct ScenePair {
    SourceSample source;  // exact silhouette mask, heads
    TargetSample target;  // same pixels, rectangle mask, heads held out
};

/// Renders one scene of filled anti-aliased ellipses ("people") over a plain or
/// value-noise background. Deterministic in (cfg, seed).
ScenePair generate_synthetic_scene(const SceneConfig& cfg, std::uint64_t seed);

/// A two-domain benchmark: source scenes on plain backgrounds with exact masks,
/// target scenes on textured backgrounds with rectangle masks (heads withheld),
/// and held-out target scenes that keep their heads for evaluation.
struct BenchmarkConfig {
    int n_source = 40;
    int n_target = 40;
    int n_test = 20;
    int height = 160;
    int width = 160;
    double brightness_lo = 0.3;
    double brightness_hi = 0.8;
    std::uint64_t seed = 0;
};

struct Benchmark {
    SourceDataset source;
    TargetDataset target;
    TargetDataset test;
};

/// People per scene for each density level: low 4-12, mid 12-24, high 24-40.
std::pair<int, int> people_range(DensityLevel level);

Benchmark generate_benchmark(const BenchmarkConfig& cfg);

/// Checks the CrowdImage / HeadPoints / CrowdMask invariants; throws ValidationError.
void validate(const SourceSample& s);
void validate(const TargetSample& s);

// ---------------------------------------------------------------------------
// on-disk layout: images/<id>.png, masks/<id>.png, heads/<id>.json, meta.json

void save_dataset(const std::filesystem::path& root, const SourceDataset& ds);
void save_dataset(const std::filesystem::path& root, const TargetDataset& ds);

SourceDataset load_source_dataset(const std::filesystem::path& root);
TargetDataset load_target_dataset(const std::filesystem::path& root);

/// Single RGB PNG <-> CrowdImage (values k/255).
CrowdImage load_image(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const CrowdImage& img);

/// Reads only the `kind` field of meta.json.
DomainKind dataset_kind(const std::filesystem::path& root);

// ---------------------------------------------------------------------------
// scene regularization

using ScenePredicate = std::function<bool(const SceneAttributes&)>;

/// Parses conjunctions such as "brightness>0.5 && background_style==plain".
/// Fields: density_level, background_style (==, !=); brightness (<, <=, >, >=, ==, !=).
/// Unknown fields, operators, or enum values raise ConfigError.
ScenePredicate parse_scene_predicate(std::string_view expr);

/// Order-preserving subset of samples whose attributes satisfy the predicate.
SourceDataset scene_regularization_filter(const SourceDataset& ds, const ScenePredicate& keep);

// ---------------------------------------------------------------------------
// cropping

struct CropWindow {
    int row = 0;
    int col = 0;
    int height = 0;
    int width = 0;
};

/// Uniform crop offset for a (crop_h, crop_w) window; deterministic in seed.
CropWindow choose_crop(int height, int width, int crop_h, int crop_w, std::uint64_t seed);

CrowdImage crop(const CrowdImage& img, const CropWindow& win);
CrowdMask crop(const CrowdMask& mask, const CropWindow& win);
/// Translates points into window coordinates, dropping points outside it.
HeadPoints crop(const HeadPoints& heads, const CropWindow& win);

SourceSample random_crop_pair(const SourceSample& s, int crop_h, int crop_w, std::uint64_t seed);
TargetSample random_crop_pair(const TargetSample& s, int crop_h, int crop_w, std::uint64_t seed);

}  // namespace crowdsca
