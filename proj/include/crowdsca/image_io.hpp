#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace crowdsca::io {

/// Interleaved 8-bit raster as stored in PNG files.
struct Raster8 {
    int height = 0;
    int width = 0;
    int channels = 0;  // 1 (gray) or 3 (RGB)
    std::vector<std::uint8_t> bytes;
};

/// Reads a PNG, converting to the requested channel count (1 or 3). Throws LoadError.
Raster8 read_png(const std::filesystem::path& path, int channels);

/// Writes an 8-bit gray or RGB PNG. Throws LoadError when the file cannot be written.
void write_png(const std::filesystem::path& path, const Raster8& raster);

/// Maps t in [0,1] to a false-color RGB triple (dark blue -> red -> yellow).
void false_color(double t, std::uint8_t rgb[3]);

}  // namespace crowdsca::io
