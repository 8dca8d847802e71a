#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "crowdsca/losses.hpp"
#include "crowdsca/networks.hpp"

namespace crowdsca {

struct TrainConfig {
    int batch_size = 8;
    int crop_h = 128;  // full-scale runs use 480 x 640
    int crop_w = 128;
    double lr_main = 1e-5;
    double lr_disc = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    LossWeights weights;
    int iters = 1000;
    std::uint64_t seed = 0;
    bool adapt = true;  // false: source-only baseline
    double sigma = 4.0;
    int checkpoint_every = 0;  // 0: final checkpoint only
    std::string scene_filter;  // scene regularization predicate, empty keeps all
    ArchConfig arch;

    void validate() const;
    /// Canonical text of every field (sorted, one "section.key = value" per line).
    [[nodiscard]] std::string canonical() const;
    /// FNV-1a hash of canonical().
    [[nodiscard]] std::uint64_t hash() const;
};

/// Config file contents: training settings plus dataset locations.
struct RunConfig {
    TrainConfig train;
    std::string source_dir;
    std::string target_dir;
};

/// Applies one "section.key=value" assignment. Unknown keys raise ConfigError naming the key.
void apply_setting(RunConfig& cfg, const std::string& section, const std::string& key, const std::string& value);

/// Parses an INI-style file ([train], [arch], [data] sections, flat key = value).
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(const std::string& text, const std::string& origin = "<string>");

/// Applies overrides of the form "section.key=value".
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);

/// Writes cfg back out in the same format load_run_config reads.
std::string to_ini(const RunConfig& cfg);

/// Every recognised "section.key".
std::vector<std::string> known_config_keys();

}  // namespace crowdsca
