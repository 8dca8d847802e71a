#include "crowdsca/datamodel.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "crowdsca/errors.hpp"
#include "crowdsca/image_io.hpp"
#include "crowdsca/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace crowdsca {

std::string_view to_string(DensityLevel v) {
    switch (v) {
        case DensityLevel::low: return "low";
        case DensityLevel::mid: return "mid";
        case DensityLevel::high: return "high";
    }
    return "?";
}

std::string_view to_string(BackgroundStyle v) {
    return v == BackgroundStyle::plain ? "plain" : "textured";
}

std::string_view to_string(MaskProvenance v) {
    return v == MaskProvenance::exact ? "exact" : "detection_rectangles";
}

std::string_view to_string(DomainKind v) { return v == DomainKind::source ? "source" : "target"; }

DensityLevel parse_density_level(std::string_view s) {
    if (s == "low") return DensityLevel::low;
    if (s == "mid") return DensityLevel::mid;
    if (s == "high") return DensityLevel::high;
    throw ConfigError("unknown density_level '" + std::string(s) + "' (expected low|mid|high)");
}

BackgroundStyle parse_background_style(std::string_view s) {
    if (s == "plain") return BackgroundStyle::plain;
    if (s == "textured") return BackgroundStyle::textured;
    throw ConfigError("unknown background_style '" + std::string(s) + "' (expected plain|textured)");
}

DomainKind parse_domain_kind(std::string_view s) {
    if (s == "source") return DomainKind::source;
    if (s == "target") return DomainKind::target;
    throw ConfigError("unknown dataset kind '" + std::string(s) + "' (expected source|target)");
}

// ---------------------------------------------------------------------------
// generator

namespace {

constexpr int kSuper = 4;  // supersampling per axis for anti-aliasing
constexpr double kNoiseCell = 10.0;
constexpr double kNoiseAmplitude = 0.22;

float quantize8(double v) {
    return static_cast<float>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0F;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

struct Ellipse {
    double cy, cx, ry, rx;
    std::array<double, 3> color;
};

}  // namespace

ScenePair generate_synthetic_scene(const SceneConfig& cfg, std::uint64_t seed) {
    if (cfg.height < 16 || cfg.width < 16 || cfg.height % 8 != 0 || cfg.width % 8 != 0) {
        throw ConfigError("scene dimensions must be multiples of 8 and at least 16, got " +
                          std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
    }
    if (cfg.n_people < 0) {
        throw ConfigError("n_people must be non-negative");
    }
    if (!(cfg.attributes.brightness >= 0.0 && cfg.attributes.brightness <= 1.0)) {
        throw ConfigError("brightness must lie in [0,1]");
    }
    const int H = cfg.height;
    const int W = cfg.width;
    Rng rng(derive_seed(seed, {0x5CE7E}));

    // background
    const double base = 0.2 + 0.6 * cfg.attributes.brightness;
    std::array<double, 3> tint{};
    for (auto& t : tint) {
        t = rng.uniform(-0.06, 0.06);
    }
    std::vector<double> canvas(3UL * H * W);
    const bool textured = cfg.attributes.background_style == BackgroundStyle::textured;
    const int gh = static_cast<int>(std::ceil(H / kNoiseCell)) + 2;
    const int gw = static_cast<int>(std::ceil(W / kNoiseCell)) + 2;
    std::vector<double> lattice;
    if (textured) {
        lattice.resize(3UL * gh * gw);
        for (auto& v : lattice) {
            v = rng.uniform(-1.0, 1.0);
        }
    }
    for (int c = 0; c < 3; ++c) {
        for (int r = 0; r < H; ++r) {
            for (int j = 0; j < W; ++j) {
                double v = base + tint[c] + 0.05 * ((r + 0.5) / H - 0.5);
                if (textured) {
                    const double y = (r + 0.5) / kNoiseCell;
                    const double x = (j + 0.5) / kNoiseCell;
                    const int y0 = static_cast<int>(y);
                    const int x0 = static_cast<int>(x);
                    const double fy = smoothstep(y - y0);
                    const double fx = smoothstep(x - x0);
                    auto L = [&](int yy, int xx) { return lattice[(static_cast<std::size_t>(c) * gh + yy) * gw + xx]; };
                    const double top = L(y0, x0) * (1 - fx) + L(y0, x0 + 1) * fx;
                    const double bot = L(y0 + 1, x0) * (1 - fx) + L(y0 + 1, x0 + 1) * fx;
                    v += kNoiseAmplitude * (top * (1 - fy) + bot * fy);
                }
                canvas[(static_cast<std::size_t>(c) * H + r) * W + j] = v;
            }
        }
    }

    // people
    std::vector<Ellipse> people;
    people.reserve(static_cast<std::size_t>(cfg.n_people));
    for (int p = 0; p < cfg.n_people; ++p) {
        Ellipse e{};
        e.ry = rng.uniform(3.0, 8.0);
        e.rx = e.ry * rng.uniform(0.55, 0.8);
        e.cy = rng.uniform(e.ry, H - e.ry);
        e.cx = rng.uniform(e.rx, W - e.rx);
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        const double contrast = rng.uniform(0.3, 0.5);
        for (auto& ch : e.color) {
            ch = std::clamp(base + sign * contrast + rng.uniform(-0.1, 0.1), 0.0, 1.0);
        }
        people.push_back(e);
    }

    CrowdMask exact(H, W, MaskProvenance::exact);
    CrowdMask rects(H, W, MaskProvenance::detection_rectangles);
    HeadPoints heads;
    heads.reserve(people.size());
    for (const auto& e : people) {
        const int r0 = std::max(0, static_cast<int>(std::floor(e.cy - e.ry)));
        const int r1 = std::min(H - 1, static_cast<int>(std::ceil(e.cy + e.ry)) - 1);
        const int c0 = std::max(0, static_cast<int>(std::floor(e.cx - e.rx)));
        const int c1 = std::min(W - 1, static_cast<int>(std::ceil(e.cx + e.rx)) - 1);
        for (int r = r0; r <= r1; ++r) {
            for (int j = c0; j <= c1; ++j) {
                rects.at(r, j) = 1;
                int inside = 0;
                for (int sy = 0; sy < kSuper; ++sy) {
                    for (int sx = 0; sx < kSuper; ++sx) {
                        const double dy = (r + (sy + 0.5) / kSuper - e.cy) / e.ry;
                        const double dx = (j + (sx + 0.5) / kSuper - e.cx) / e.rx;
                        inside += (dy * dy + dx * dx <= 1.0) ? 1 : 0;
                    }
                }
                if (inside == 0) {
                    continue;
                }
                const double alpha = static_cast<double>(inside) / (kSuper * kSuper);
                if (alpha >= 0.5) {
                    exact.at(r, j) = 1;
                }
                for (int c = 0; c < 3; ++c) {
                    double& px = canvas[(static_cast<std::size_t>(c) * H + r) * W + j];
                    px = (1.0 - alpha) * px + alpha * e.color[c];
                }
            }
        }
        heads.push_back({e.cy - e.ry, e.cx});
    }

    CrowdImage image(H, W);
    for (std::size_t i = 0; i < canvas.size(); ++i) {
        image.pixels[i] = quantize8(canvas[i]);
    }

    ScenePair pair;
    pair.source.image = image;
    pair.source.heads = heads;
    pair.source.mask = std::move(exact);
    pair.source.attributes = cfg.attributes;
    pair.target.image = std::move(image);
    pair.target.mask = std::move(rects);
    pair.target.heads = std::move(heads);
    pair.target.attributes = cfg.attributes;
    return pair;
}

std::pair<int, int> people_range(DensityLevel level) {
    switch (level) {
        case DensityLevel::low: return {4, 12};
        case DensityLevel::mid: return {12, 24};
        case DensityLevel::high: return {24, 40};
    }
    return {0, 0};
}

Benchmark generate_benchmark(const BenchmarkConfig& cfg) {
    if (cfg.n_source < 0 || cfg.n_target < 0 || cfg.n_test < 0) {
        throw ConfigError("benchmark sample counts must be non-negative");
    }
    if (!(cfg.brightness_lo >= 0.0 && cfg.brightness_lo <= cfg.brightness_hi && cfg.brightness_hi <= 1.0)) {
        throw ConfigError("brightness range must satisfy 0 <= lo <= hi <= 1");
    }
    constexpr std::uint64_t kSplitTags[] = {0x53524331ULL, 0x54475431ULL, 0x54535431ULL};
    auto scene = [&](int split, int index, BackgroundStyle style) {
        Rng rng(derive_seed(cfg.seed, {kSplitTags[split], static_cast<std::uint64_t>(index)}));
        SceneConfig sc;
        sc.height = cfg.height;
        sc.width = cfg.width;
        sc.attributes.density_level = static_cast<DensityLevel>(rng.uniform_int(0, 2));
        sc.attributes.background_style = style;
        sc.attributes.brightness = rng.uniform(cfg.brightness_lo, cfg.brightness_hi);
        const auto [lo, hi] = people_range(sc.attributes.density_level);
        sc.n_people = rng.uniform_int(lo, hi);
        return generate_synthetic_scene(sc, rng.next());
    };
    auto name = [](const char* prefix, int i) {
        std::ostringstream os;
        os << prefix << '_';
        os.width(4);
        os.fill('0');
        os << i;
        return os.str();
    };
    Benchmark b;
    for (int i = 0; i < cfg.n_source; ++i) {
        auto pair = scene(0, i, BackgroundStyle::plain);
        pair.source.id = name("src", i);
        b.source.samples.push_back(std::move(pair.source));
    }
    for (int i = 0; i < cfg.n_target; ++i) {
        auto pair = scene(1, i, BackgroundStyle::textured);
        pair.target.id = name("tgt", i);
        pair.target.heads.reset();
        b.target.samples.push_back(std::move(pair.target));
    }
    for (int i = 0; i < cfg.n_test; ++i) {
        auto pair = scene(2, i, BackgroundStyle::textured);
        pair.target.id = name("test", i);
        b.test.samples.push_back(std::move(pair.target));
    }
    return b;
}

// ---------------------------------------------------------------------------
// validation

namespace {

void validate_image(const CrowdImage& img, const std::string& id) {
    if (img.height < 16 || img.width < 16) {
        throw ValidationError(id + ": image smaller than 16x16");
    }
    if (img.pixels.size() != 3UL * img.height * img.width) {
        throw ValidationError(id + ": pixel buffer does not match dimensions");
    }
    for (float v : img.pixels) {
        if (!(v >= 0.0F && v <= 1.0F)) {
            throw ValidationError(id + ": pixel value outside [0,1]");
        }
    }
}

void validate_mask(const CrowdMask& m, const CrowdImage& img, const std::string& id) {
    if (m.height != img.height || m.width != img.width ||
        m.values.size() != static_cast<std::size_t>(m.height) * m.width) {
        throw ValidationError(id + ": mask dimensions differ from image");
    }
    for (auto v : m.values) {
        if (v > 1) {
            throw ValidationError(id + ": mask value not in {0,1}");
        }
    }
}

void validate_heads(const HeadPoints& heads, const CrowdImage& img, const std::string& id) {
    for (const auto& p : heads) {
        if (!(p.row >= 0.0 && p.row < img.height && p.col >= 0.0 && p.col < img.width)) {
            std::ostringstream os;
            os << id << ": head point (" << p.row << ", " << p.col << ") outside " << img.height << "x"
               << img.width << " image";
            throw ValidationError(os.str());
        }
    }
}

}  // namespace

void validate(const SourceSample& s) {
    validate_image(s.image, s.id);
    validate_mask(s.mask, s.image, s.id);
    validate_heads(s.heads, s.image, s.id);
}

void validate(const TargetSample& s) {
    validate_image(s.image, s.id);
    validate_mask(s.mask, s.image, s.id);
    if (s.heads) {
        validate_heads(*s.heads, s.image, s.id);
    }
}

// ---------------------------------------------------------------------------
// persistence

namespace {

void ensure_layout(const fs::path& root) {
    std::error_code ec;
    for (const char* sub : {"images", "masks", "heads"}) {
        fs::create_directories(root / sub, ec);
        if (ec) {
            throw LoadError("cannot create " + (root / sub).string() + ": " + ec.message());
        }
    }
}

void write_image(const fs::path& path, const CrowdImage& img) {
    io::Raster8 r{img.height, img.width, 3, {}};
    r.bytes.resize(3UL * img.height * img.width);
    for (int row = 0; row < img.height; ++row) {
        for (int col = 0; col < img.width; ++col) {
            for (int c = 0; c < 3; ++c) {
                r.bytes[(static_cast<std::size_t>(row) * img.width + col) * 3 + c] =
                    static_cast<std::uint8_t>(std::lround(std::clamp(img.at(c, row, col), 0.0F, 1.0F) * 255.0F));
            }
        }
    }
    io::write_png(path, r);
}

CrowdImage read_image(const fs::path& path) {
    if (!fs::exists(path)) {
        throw LoadError("missing image file " + path.string());
    }
    const auto r = io::read_png(path, 3);
    CrowdImage img(r.height, r.width);
    for (int row = 0; row < r.height; ++row) {
        for (int col = 0; col < r.width; ++col) {
            for (int c = 0; c < 3; ++c) {
                img.at(c, row, col) = r.bytes[(static_cast<std::size_t>(row) * r.width + col) * 3 + c] / 255.0F;
            }
        }
    }
    return img;
}

void write_mask(const fs::path& path, const CrowdMask& m) {
    io::Raster8 r{m.height, m.width, 1, {}};
    r.bytes.resize(m.values.size());
    std::transform(m.values.begin(), m.values.end(), r.bytes.begin(),
                   [](std::uint8_t v) { return static_cast<std::uint8_t>(v ? 255 : 0); });
    io::write_png(path, r);
}

CrowdMask read_mask(const fs::path& path, MaskProvenance prov) {
    if (!fs::exists(path)) {
        throw LoadError("missing mask file " + path.string());
    }
    const auto r = io::read_png(path, 1);
    CrowdMask m(r.height, r.width, prov);
    for (std::size_t i = 0; i < r.bytes.size(); ++i) {
        const auto v = r.bytes[i];
        if (v != 0 && v != 255) {
            throw ValidationError(path.string() + ": mask value " + std::to_string(v) + " is neither 0 nor 255");
        }
        m.values[i] = v ? 1 : 0;
    }
    return m;
}

void write_heads(const fs::path& path, const HeadPoints& heads) {
    json arr = json::array();
    for (const auto& p : heads) {
        arr.push_back({p.row, p.col});
    }
    std::ofstream out(path);
    if (!out) {
        throw LoadError("cannot write " + path.string());
    }
    out << arr.dump() << '\n';
}

HeadPoints read_heads(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw LoadError("missing head annotation file " + path.string());
    }
    HeadPoints heads;
    try {
        const auto arr = json::parse(in);
        for (const auto& p : arr) {
            if (!p.is_array() || p.size() != 2) {
                throw LoadError(path.string() + ": each head must be a [row, col] pair");
            }
            heads.push_back({p[0].get<double>(), p[1].get<double>()});
        }
    } catch (const json::exception& e) {
        throw LoadError(path.string() + ": " + e.what());
    }
    return heads;
}

json attributes_json(const SceneAttributes& a) {
    return {{"density_level", to_string(a.density_level)},
            {"background_style", to_string(a.background_style)},
            {"brightness", a.brightness}};
}

SceneAttributes attributes_from_json(const json& j) {
    SceneAttributes a;
    a.density_level = parse_density_level(j.at("density_level").get<std::string>());
    a.background_style = parse_background_style(j.at("background_style").get<std::string>());
    a.brightness = j.at("brightness").get<double>();
    if (!(a.brightness >= 0.0 && a.brightness <= 1.0)) {
        throw ValidationError("brightness outside [0,1]");
    }
    return a;
}

void write_meta(const fs::path& root, DomainKind kind, const json& samples) {
    std::ofstream out(root / "meta.json");
    if (!out) {
        throw LoadError("cannot write " + (root / "meta.json").string());
    }
    out << json{{"kind", to_string(kind)}, {"samples", samples}}.dump(2) << '\n';
}

json read_meta(const fs::path& root) {
    std::ifstream in(root / "meta.json");
    if (!in) {
        throw LoadError("missing " + (root / "meta.json").string());
    }
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw LoadError((root / "meta.json").string() + ": " + e.what());
    }
}

}  // namespace

CrowdImage load_image(const std::filesystem::path& path) { return read_image(path); }
void save_image(const std::filesystem::path& path, const CrowdImage& img) { write_image(path, img); }

void save_dataset(const fs::path& root, const SourceDataset& ds) {
    ensure_layout(root);
    json samples = json::array();
    for (const auto& s : ds.samples) {
        write_image(root / "images" / (s.id + ".png"), s.image);
        write_mask(root / "masks" / (s.id + ".png"), s.mask);
        write_heads(root / "heads" / (s.id + ".json"), s.heads);
        json rec = attributes_json(s.attributes);
        rec["id"] = s.id;
        samples.push_back(rec);
    }
    write_meta(root, DomainKind::source, samples);
}

void save_dataset(const fs::path& root, const TargetDataset& ds) {
    ensure_layout(root);
    json samples = json::array();
    for (const auto& s : ds.samples) {
        write_image(root / "images" / (s.id + ".png"), s.image);
        write_mask(root / "masks" / (s.id + ".png"), s.mask);
        if (s.heads) {
            write_heads(root / "heads" / (s.id + ".json"), *s.heads);
        }
        json rec = s.attributes ? attributes_json(*s.attributes) : json::object();
        rec["id"] = s.id;
        samples.push_back(rec);
    }
    write_meta(root, DomainKind::target, samples);
}

DomainKind dataset_kind(const fs::path& root) {
    const auto meta = read_meta(root);
    if (!meta.contains("kind")) {
        throw LoadError((root / "meta.json").string() + ": missing 'kind'");
    }
    return parse_domain_kind(meta["kind"].get<std::string>());
}

SourceDataset load_source_dataset(const fs::path& root) {
    const auto meta = read_meta(root);
    if (meta.value("kind", "") != "source") {
        throw LoadError(root.string() + " is not a source dataset");
    }
    SourceDataset ds;
    try {
        for (const auto& rec : meta.at("samples")) {
            SourceSample s;
            s.id = rec.at("id").get<std::string>();
            s.image = read_image(root / "images" / (s.id + ".png"));
            s.mask = read_mask(root / "masks" / (s.id + ".png"), MaskProvenance::exact);
            s.heads = read_heads(root / "heads" / (s.id + ".json"));
            s.attributes = attributes_from_json(rec);
            validate(s);
            ds.samples.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        throw LoadError((root / "meta.json").string() + ": " + e.what());
    }
    return ds;
}

TargetDataset load_target_dataset(const fs::path& root) {
    const auto meta = read_meta(root);
    const auto kind = meta.value("kind", "");
    if (kind != "target" && kind != "source") {
        throw LoadError(root.string() + ": unknown dataset kind '" + kind + "'");
    }
    TargetDataset ds;
    try {
        for (const auto& rec : meta.at("samples")) {
            TargetSample s;
            s.id = rec.at("id").get<std::string>();
            s.image = read_image(root / "images" / (s.id + ".png"));
            s.mask = read_mask(root / "masks" / (s.id + ".png"), MaskProvenance::detection_rectangles);
            const auto head_file = root / "heads" / (s.id + ".json");
            if (fs::exists(head_file)) {
                s.heads = read_heads(head_file);
            }
            if (rec.contains("density_level")) {
                s.attributes = attributes_from_json(rec);
            }
            validate(s);
            ds.samples.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        throw LoadError((root / "meta.json").string() + ": " + e.what());
    }
    return ds;
}

// ---------------------------------------------------------------------------
// scene regularization

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

ScenePredicate parse_clause(std::string_view clause) {
    clause = trim(clause);
    static constexpr std::array<std::string_view, 6> ops = {"<=", ">=", "==", "!=", "<", ">"};
    std::size_t pos = std::string_view::npos;
    std::string_view op;
    for (auto candidate : ops) {
        const auto p = clause.find(candidate);
        if (p != std::string_view::npos && (pos == std::string_view::npos || p < pos ||
                                            (p == pos && candidate.size() > op.size()))) {
            pos = p;
            op = candidate;
        }
    }
    if (pos == std::string_view::npos) {
        throw ConfigError("scene predicate clause '" + std::string(clause) + "' has no comparison operator");
    }
    const auto field = trim(clause.substr(0, pos));
    const auto value = trim(clause.substr(pos + op.size()));
    const std::string op_s(op);

    if (field == "brightness") {
        double threshold = 0.0;
        const auto res = std::from_chars(value.data(), value.data() + value.size(), threshold);
        if (res.ec != std::errc{} || res.ptr != value.data() + value.size()) {
            throw ConfigError("brightness threshold '" + std::string(value) + "' is not a number");
        }
        if (op_s == "<") return [=](const SceneAttributes& a) { return a.brightness < threshold; };
        if (op_s == "<=") return [=](const SceneAttributes& a) { return a.brightness <= threshold; };
        if (op_s == ">") return [=](const SceneAttributes& a) { return a.brightness > threshold; };
        if (op_s == ">=") return [=](const SceneAttributes& a) { return a.brightness >= threshold; };
        if (op_s == "==") return [=](const SceneAttributes& a) { return a.brightness == threshold; };
        return [=](const SceneAttributes& a) { return a.brightness != threshold; };
    }
    if (op_s != "==" && op_s != "!=") {
        throw ConfigError("operator '" + op_s + "' is not defined for enum field '" + std::string(field) + "'");
    }
    const bool equal = op_s == "==";
    if (field == "density_level") {
        const auto v = parse_density_level(value);
        return [=](const SceneAttributes& a) { return (a.density_level == v) == equal; };
    }
    if (field == "background_style") {
        const auto v = parse_background_style(value);
        return [=](const SceneAttributes& a) { return (a.background_style == v) == equal; };
    }
    throw ConfigError("unknown scene attribute '" + std::string(field) + "'");
}

}  // namespace

ScenePredicate parse_scene_predicate(std::string_view expr) {
    expr = trim(expr);
    if (expr.empty() || expr == "*" || expr == "all") {
        return [](const SceneAttributes&) { return true; };
    }
    if (expr == "none") {
        return [](const SceneAttributes&) { return false; };
    }
    std::vector<ScenePredicate> clauses;
    while (true) {
        const auto p = expr.find("&&");
        clauses.push_back(parse_clause(expr.substr(0, p)));
        if (p == std::string_view::npos) break;
        expr.remove_prefix(p + 2);
    }
    return [clauses = std::move(clauses)](const SceneAttributes& a) {
        return std::all_of(clauses.begin(), clauses.end(), [&](const auto& c) { return c(a); });
    };
}

SourceDataset scene_regularization_filter(const SourceDataset& ds, const ScenePredicate& keep) {
    SourceDataset out;
    std::copy_if(ds.samples.begin(), ds.samples.end(), std::back_inserter(out.samples),
                 [&](const SourceSample& s) { return keep(s.attributes); });
    return out;
}

// ---------------------------------------------------------------------------
// cropping

CropWindow choose_crop(int height, int width, int crop_h, int crop_w, std::uint64_t seed) {
    if (crop_h <= 0 || crop_w <= 0 || crop_h % 8 != 0 || crop_w % 8 != 0) {
        throw ConfigError("crop dimensions must be positive multiples of 8");
    }
    if (crop_h > height || crop_w > width) {
        throw ConfigError("crop " + std::to_string(crop_h) + "x" + std::to_string(crop_w) + " exceeds image " +
                          std::to_string(height) + "x" + std::to_string(width));
    }
    Rng rng(derive_seed(seed, {0xC409}));
    CropWindow win{0, 0, crop_h, crop_w};
    win.row = rng.uniform_int(0, height - crop_h);
    win.col = rng.uniform_int(0, width - crop_w);
    return win;
}

CrowdImage crop(const CrowdImage& img, const CropWindow& win) {
    CrowdImage out(win.height, win.width);
    for (int c = 0; c < 3; ++c) {
        for (int r = 0; r < win.height; ++r) {
            for (int j = 0; j < win.width; ++j) {
                out.at(c, r, j) = img.at(c, r + win.row, j + win.col);
            }
        }
    }
    return out;
}

CrowdMask crop(const CrowdMask& mask, const CropWindow& win) {
    CrowdMask out(win.height, win.width, mask.provenance);
    for (int r = 0; r < win.height; ++r) {
        for (int j = 0; j < win.width; ++j) {
            out.at(r, j) = mask.at(r + win.row, j + win.col);
        }
    }
    return out;
}

HeadPoints crop(const HeadPoints& heads, const CropWindow& win) {
    HeadPoints out;
    for (const auto& p : heads) {
        const HeadPoint q{p.row - win.row, p.col - win.col};
        if (q.row >= 0.0 && q.row < win.height && q.col >= 0.0 && q.col < win.width) {
            out.push_back(q);
        }
    }
    return out;
}

SourceSample random_crop_pair(const SourceSample& s, int crop_h, int crop_w, std::uint64_t seed) {
    const auto win = choose_crop(s.image.height, s.image.width, crop_h, crop_w, seed);
    return SourceSample{s.id, crop(s.image, win), crop(s.heads, win), crop(s.mask, win), s.attributes};
}

TargetSample random_crop_pair(const TargetSample& s, int crop_h, int crop_w, std::uint64_t seed) {
    const auto win = choose_crop(s.image.height, s.image.width, crop_h, crop_w, seed);
    TargetSample out{s.id, crop(s.image, win), crop(s.mask, win), std::nullopt, s.attributes};
    if (s.heads) {
        out.heads = crop(*s.heads, win);
    }
    return out;
}

}  // namespace crowdsca
