#include "crowdsca/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "crowdsca/datamodel.hpp"
#include "crowdsca/errors.hpp"

namespace crowdsca {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    N out{};
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) {
        throw ConfigError("config key '" + key + "': cannot parse '" + raw + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + raw + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& raw) {
    std::vector<int> out;
    std::stringstream ss(raw);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(parse_number<int>(key, item));
    }
    if (out.empty()) {
        throw ConfigError("config key '" + key + "': empty list");
    }
    return out;
}

std::pair<int, int> parse_crop(const std::string& key, const std::string& raw) {
    const auto x = raw.find('x');
    if (x == std::string::npos) {
        throw ConfigError("config key '" + key + "': expected HxW, got '" + raw + "'");
    }
    return {parse_number<int>(key, raw.substr(0, x)), parse_number<int>(key, raw.substr(x + 1))};
}

std::string list_str(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

std::string num(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (crop_h < 8 || crop_w < 8 || crop_h % 8 != 0 || crop_w % 8 != 0) {
        throw ConfigError("train.crop dimensions must be positive multiples of 8");
    }
    if (!(lr_main > 0.0) || !(lr_disc > 0.0)) throw ConfigError("learning rates must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0)) {
        throw ConfigError("invalid Adam hyperparameters");
    }
    if (iters < 0) throw ConfigError("train.iters must be >= 0");
    if (!(sigma > 0.0)) throw ConfigError("train.sigma must be > 0");
    if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
    weights.validate();
    arch.validate();
    if (adapt && (crop_h / kFeatureStride < kDiscriminatorStride || crop_w / kFeatureStride < kDiscriminatorStride)) {
        throw ConfigError("adaptation needs crops of at least 128x128 (discriminator input >= 16x16 features)");
    }
    if (!scene_filter.empty()) {
        (void)parse_scene_predicate(scene_filter);
    }
}

std::string TrainConfig::canonical() const {
    RunConfig rc{*this, "", ""};
    return to_ini(rc);
}

std::uint64_t TrainConfig::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canonical()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::vector<std::string> known_config_keys() {
    return {"train.batch_size", "train.crop",        "train.lr_main",     "train.lr_disc",
            "train.beta1",      "train.beta2",       "train.adam_eps",    "train.lambda_s",
            "train.lambda_t",   "train.lambda_d",    "train.iters",       "train.seed",
            "train.adapt",      "train.sigma",       "train.checkpoint_every", "train.scene_filter",
            "arch.extractor_widths", "arch.extractor_convs", "arch.density_widths", "arch.pyramid_width",
            "arch.pyramid_bins", "arch.discriminator_widths", "arch.leaky_slope", "arch.prob_eps",
            "data.source",      "data.target"};
}

void apply_setting(RunConfig& cfg, const std::string& section, const std::string& key, const std::string& value) {
    const std::string full = section + "." + key;
    auto& t = cfg.train;
    auto& a = t.arch;
    if (full == "train.batch_size") t.batch_size = parse_number<int>(full, value);
    else if (full == "train.crop") std::tie(t.crop_h, t.crop_w) = parse_crop(full, value);
    else if (full == "train.lr_main") t.lr_main = parse_number<double>(full, value);
    else if (full == "train.lr_disc") t.lr_disc = parse_number<double>(full, value);
    else if (full == "train.beta1") t.beta1 = parse_number<double>(full, value);
    else if (full == "train.beta2") t.beta2 = parse_number<double>(full, value);
    else if (full == "train.adam_eps") t.adam_eps = parse_number<double>(full, value);
    else if (full == "train.lambda_s") t.weights.lambda_s = parse_number<double>(full, value);
    else if (full == "train.lambda_t") t.weights.lambda_t = parse_number<double>(full, value);
    else if (full == "train.lambda_d") t.weights.lambda_d = parse_number<double>(full, value);
    else if (full == "train.iters") t.iters = parse_number<int>(full, value);
    else if (full == "train.seed") t.seed = parse_number<std::uint64_t>(full, value);
    else if (full == "train.adapt") t.adapt = parse_bool(full, value);
    else if (full == "train.sigma") t.sigma = parse_number<double>(full, value);
    else if (full == "train.checkpoint_every") t.checkpoint_every = parse_number<int>(full, value);
    else if (full == "train.scene_filter") t.scene_filter = trim(value);
    else if (full == "arch.extractor_widths") a.extractor_widths = parse_int_list(full, value);
    else if (full == "arch.extractor_convs") a.extractor_convs = parse_int_list(full, value);
    else if (full == "arch.density_widths") a.density_widths = parse_int_list(full, value);
    else if (full == "arch.pyramid_width") a.pyramid_width = parse_number<int>(full, value);
    else if (full == "arch.pyramid_bins") a.pyramid_bins = parse_int_list(full, value);
    else if (full == "arch.discriminator_widths") a.discriminator_widths = parse_int_list(full, value);
    else if (full == "arch.leaky_slope") a.leaky_slope = parse_number<double>(full, value);
    else if (full == "arch.prob_eps") a.prob_eps = parse_number<double>(full, value);
    else if (full == "data.source") cfg.source_dir = trim(value);
    else if (full == "data.target") cfg.target_dir = trim(value);
    else throw ConfigError("unknown config key '" + full + "'");
}

namespace {

RunConfig from_tree(const boost::property_tree::ptree& tree, const std::string& origin) {
    RunConfig cfg;
    std::vector<std::string> unknown;
    for (const auto& [section, body] : tree) {
        if (body.empty()) {
            unknown.push_back(section + " (key outside a section)");
            continue;
        }
        for (const auto& [key, leaf] : body) {
            try {
                apply_setting(cfg, section, key, leaf.get_value<std::string>());
            } catch (const ConfigError& e) {
                const std::string msg = e.what();
                if (msg.rfind("unknown config key", 0) == 0) {
                    unknown.push_back(section + "." + key);
                } else {
                    throw;
                }
            }
        }
    }
    if (!unknown.empty()) {
        std::string list;
        for (const auto& k : unknown) list += (list.empty() ? "" : ", ") + k;
        throw ConfigError("unknown config key(s) in " + origin + ": " + list);
    }
    return cfg;
}

}  // namespace

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path.string());
    }
    std::ostringstream text;
    text << in.rdbuf();
    return parse_run_config(text.str(), path.string());
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
    boost::property_tree::ptree tree;
    std::istringstream in(text);
    try {
        boost::property_tree::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError("cannot parse config " + origin + ": " + e.what());
    }
    return from_tree(tree, origin);
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        const auto dot = o.find('.');
        if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
            throw ConfigError("override '" + o + "' must look like section.key=value");
        }
        apply_setting(cfg, trim(o.substr(0, dot)), trim(o.substr(dot + 1, eq - dot - 1)), o.substr(eq + 1));
    }
}

std::string to_ini(const RunConfig& cfg) {
    const auto& t = cfg.train;
    const auto& a = t.arch;
    std::ostringstream os;
    os << "[train]\n"
       << "batch_size = " << t.batch_size << "\n"
       << "crop = " << t.crop_h << "x" << t.crop_w << "\n"
       << "lr_main = " << num(t.lr_main) << "\n"
       << "lr_disc = " << num(t.lr_disc) << "\n"
       << "beta1 = " << num(t.beta1) << "\n"
       << "beta2 = " << num(t.beta2) << "\n"
       << "adam_eps = " << num(t.adam_eps) << "\n"
       << "lambda_s = " << num(t.weights.lambda_s) << "\n"
       << "lambda_t = " << num(t.weights.lambda_t) << "\n"
       << "lambda_d = " << num(t.weights.lambda_d) << "\n"
       << "iters = " << t.iters << "\n"
       << "seed = " << t.seed << "\n"
       << "adapt = " << (t.adapt ? "true" : "false") << "\n"
       << "sigma = " << num(t.sigma) << "\n"
       << "checkpoint_every = " << t.checkpoint_every << "\n"
       << "scene_filter = " << t.scene_filter << "\n"
       << "\n[arch]\n"
       << "extractor_widths = " << list_str(a.extractor_widths) << "\n"
       << "extractor_convs = " << list_str(a.extractor_convs) << "\n"
       << "density_widths = " << list_str(a.density_widths) << "\n"
       << "pyramid_width = " << a.pyramid_width << "\n"
       << "pyramid_bins = " << list_str(a.pyramid_bins) << "\n"
       << "discriminator_widths = " << list_str(a.discriminator_widths) << "\n"
       << "leaky_slope = " << num(a.leaky_slope) << "\n"
       << "prob_eps = " << num(a.prob_eps) << "\n";
    if (!cfg.source_dir.empty() || !cfg.target_dir.empty()) {
        os << "\n[data]\n"
           << "source = " << cfg.source_dir << "\n"
           << "target = " << cfg.target_dir << "\n";
    }
    return os.str();
}

}  // namespace crowdsca
