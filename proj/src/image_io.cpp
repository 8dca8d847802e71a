#include "crowdsca/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "crowdsca/errors.hpp"

namespace crowdsca::io {

Raster8 read_png(const std::filesystem::path& path, int channels) {
    if (channels != 1 && channels != 3) {
        throw ConfigError("read_png: channels must be 1 or 3");
    }
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_file(&image, path.c_str()) == 0) {
        throw LoadError("cannot read PNG " + path.string() + ": " + image.message);
    }
    image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    Raster8 out;
    out.height = static_cast<int>(image.height);
    out.width = static_cast<int>(image.width);
    out.channels = channels;
    out.bytes.resize(PNG_IMAGE_SIZE(image));
    if (png_image_finish_read(&image, nullptr, out.bytes.data(), 0, nullptr) == 0) {
        std::string msg = image.message;
        png_image_free(&image);
        throw LoadError("cannot decode PNG " + path.string() + ": " + msg);
    }
    return out;
}

void write_png(const std::filesystem::path& path, const Raster8& raster) {
    if (raster.channels != 1 && raster.channels != 3) {
        throw ConfigError("write_png: channels must be 1 or 3");
    }
    if (raster.bytes.size() != static_cast<std::size_t>(raster.height) * raster.width * raster.channels) {
        throw ConfigError("write_png: buffer size does not match dimensions");
    }
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(raster.width);
    image.height = static_cast<png_uint_32>(raster.height);
    image.format = raster.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (png_image_write_to_file(&image, path.c_str(), 0, raster.bytes.data(), 0, nullptr) == 0) {
        throw LoadError("cannot write PNG " + path.string() + ": " + image.message);
    }
}

void false_color(double t, std::uint8_t rgb[3]) {
    t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
    // piecewise-linear ramp through navy, purple, red, orange, pale yellow
    static constexpr double stops[5][3] = {
        {0.00, 0.00, 0.20}, {0.45, 0.05, 0.55}, {0.85, 0.15, 0.25}, {0.98, 0.55, 0.05}, {1.00, 0.97, 0.70}};
    const double x = t * 4.0;
    const int i = std::min(3, static_cast<int>(x));
    const double f = x - i;
    for (int k = 0; k < 3; ++k) {
        const double v = stops[i][k] * (1.0 - f) + stops[i + 1][k] * f;
        rgb[k] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
}

}  // namespace crowdsca::io
