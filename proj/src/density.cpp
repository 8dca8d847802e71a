#include "crowdsca/density.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "crowdsca/errors.hpp"
#include "crowdsca/image_io.hpp"

namespace crowdsca {

DensityMap gaussian_density_map(const HeadPoints& heads, int height, int width, KernelConfig kernel) {
    if (!(kernel.sigma > 0.0) || !std::isfinite(kernel.sigma)) {
        throw ConfigError("gaussian_density_map: sigma must be positive");
    }
    if (!(kernel.truncate > 0.0)) {
        throw ConfigError("gaussian_density_map: truncate must be positive");
    }
    DensityMap d(height, width);
    const double radius = kernel.truncate * kernel.sigma;
    const double inv2s2 = 1.0 / (2.0 * kernel.sigma * kernel.sigma);
    std::vector<double> wr;
    std::vector<double> wc;
    for (const auto& p : heads) {
        if (!(p.row >= 0.0 && p.row < height && p.col >= 0.0 && p.col < width)) {
            std::ostringstream os;
            os << "gaussian_density_map: head (" << p.row << ", " << p.col << ") outside " << height << "x" << width;
            throw ValidationError(os.str());
        }
        // pixel i is inside the window when |i + 0.5 - row| <= radius
        const int r0 = std::max(0, static_cast<int>(std::ceil(p.row - 0.5 - radius)));
        const int r1 = std::min(height - 1, static_cast<int>(std::floor(p.row - 0.5 + radius)));
        const int c0 = std::max(0, static_cast<int>(std::ceil(p.col - 0.5 - radius)));
        const int c1 = std::min(width - 1, static_cast<int>(std::floor(p.col - 0.5 + radius)));
        wr.assign(static_cast<std::size_t>(r1 - r0 + 1), 0.0);
        wc.assign(static_cast<std::size_t>(c1 - c0 + 1), 0.0);
        for (int r = r0; r <= r1; ++r) {
            const double dr = r + 0.5 - p.row;
            wr[static_cast<std::size_t>(r - r0)] = std::exp(-dr * dr * inv2s2);
        }
        for (int c = c0; c <= c1; ++c) {
            const double dc = c + 0.5 - p.col;
            wc[static_cast<std::size_t>(c - c0)] = std::exp(-dc * dc * inv2s2);
        }
        const double mass = std::accumulate(wr.begin(), wr.end(), 0.0) * std::accumulate(wc.begin(), wc.end(), 0.0);
        for (int r = r0; r <= r1; ++r) {
            const double row_w = wr[static_cast<std::size_t>(r - r0)] / mass;
            double* line = &d.values[static_cast<std::size_t>(r) * width];
            for (int c = c0; c <= c1; ++c) {
                line[c] += row_w * wc[static_cast<std::size_t>(c - c0)];
            }
        }
    }
    return d;
}

double count_from_density(const DensityMap& d) {
    return std::accumulate(d.values.begin(), d.values.end(), 0.0);
}

namespace {

constexpr std::array<char, 8> kMagic = {'C', 'S', 'D', 'M', 'A', 'P', '0', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
    std::array<unsigned char, 4> b{};
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b.data()), 4);
}

std::uint32_t get_u32(std::istream& is) {
    std::array<unsigned char, 4> b{};
    is.read(reinterpret_cast<char*>(b.data()), 4);
    return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_density_bin(const std::filesystem::path& path, const DensityMap& d) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw LoadError("cannot write " + path.string());
    }
    os.write(kMagic.data(), kMagic.size());
    put_u32(os, static_cast<std::uint32_t>(d.height));
    put_u32(os, static_cast<std::uint32_t>(d.width));
    for (double v : d.values) {
        put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
}

DensityMap load_density_bin(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw LoadError("cannot open " + path.string());
    }
    std::array<char, 8> magic{};
    is.read(magic.data(), magic.size());
    if (!is || magic != kMagic) {
        throw LoadError(path.string() + ": not a density grid");
    }
    const auto h = get_u32(is);
    const auto w = get_u32(is);
    if (!is || h == 0 || w == 0 || h > (1U << 16) || w > (1U << 16)) {
        throw LoadError(path.string() + ": bad density grid header");
    }
    DensityMap d(static_cast<int>(h), static_cast<int>(w));
    for (auto& v : d.values) {
        v = std::bit_cast<float>(get_u32(is));
    }
    if (!is) {
        throw LoadError(path.string() + ": truncated density grid");
    }
    return d;
}

void save_density_png(const std::filesystem::path& path, const DensityMap& d, double vmax) {
    if (vmax <= 0.0) {
        vmax = d.values.empty() ? 0.0 : *std::max_element(d.values.begin(), d.values.end());
    }
    const double scale = vmax > 0.0 ? 1.0 / vmax : 0.0;
    io::Raster8 r{d.height, d.width, 3, std::vector<std::uint8_t>(3UL * d.height * d.width)};
    for (std::size_t i = 0; i < d.values.size(); ++i) {
        io::false_color(d.values[i] * scale, &r.bytes[3 * i]);
    }
    io::write_png(path, r);
}

void save_density_pair_png(const std::filesystem::path& path, const DensityMap& pred, const DensityMap& gt) {
    if (pred.height != gt.height || pred.width != gt.width) {
        throw ConfigError("save_density_pair_png: shape mismatch");
    }
    double vmax = 0.0;
    for (double v : gt.values) vmax = std::max(vmax, v);
    for (double v : pred.values) vmax = std::max(vmax, v);
    const double scale = vmax > 0.0 ? 1.0 / vmax : 0.0;
    constexpr int gap = 4;
    const int W = 2 * gt.width + gap;
    io::Raster8 r{gt.height, W, 3, std::vector<std::uint8_t>(3UL * gt.height * W, 255)};
    for (int row = 0; row < gt.height; ++row) {
        for (int col = 0; col < gt.width; ++col) {
            io::false_color(pred.at(row, col) * scale, &r.bytes[3 * (static_cast<std::size_t>(row) * W + col)]);
            io::false_color(gt.at(row, col) * scale,
                            &r.bytes[3 * (static_cast<std::size_t>(row) * W + col + gt.width + gap)]);
        }
    }
    io::write_png(path, r);
}

}  // namespace crowdsca
