#pragma once

#include <filesystem>
#include <vector>

#include "crowdsca/datamodel.hpp"

namespace crowdsca {

/// Non-negative per-pixel density; its sum is the crowd count.
struct DensityMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;  // row-major

    DensityMap() = default;
    DensityMap(int h, int w) : height(h), width(w), values(static_cast<std::size_t>(h) * w, 0.0) {}

    double& at(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
    [[nodiscard]] double at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }
    friend bool operator==(const DensityMap&, const DensityMap&) = default;
};

struct KernelConfig {
    double sigma = 4.0;
    double truncate = 4.0;  // window half-width in units of sigma
};

/// Sum of per-head Gaussian kernels sampled at pixel centres. Each kernel is
/// truncated to a square window of half-width truncate*sigma and renormalized
/// over its in-image pixels, so every head contributes mass exactly 1.
/// Throws ConfigError for sigma <= 0 and ValidationError for out-of-bounds points.
DensityMap gaussian_density_map(const HeadPoints& heads, int height, int width, KernelConfig kernel = {});

double count_from_density(const DensityMap& d);

/// Binary grid: 8-byte magic "CSDMAP01", uint32 height, uint32 width (little endian),
/// followed by height*width float32 values, row-major.
void save_density_bin(const std::filesystem::path& path, const DensityMap& d);
DensityMap load_density_bin(const std::filesystem::path& path);

/// False-color rendering scaled to [0, vmax]; vmax <= 0 uses the map's own maximum.
void save_density_png(const std::filesystem::path& path, const DensityMap& d, double vmax = 0.0);

/// Side-by-side prediction | ground truth rendering on a shared colour scale.
void save_density_pair_png(const std::filesystem::path& path, const DensityMap& pred, const DensityMap& gt);

}  // namespace crowdsca
