#pragma once

#include "ocuq/calibration.hpp"
#include "ocuq/gda.hpp"
#include "ocuq/head.hpp"
#include "ocuq/nn.hpp"
#include "ocuq/synthworld.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ocuq {

struct TrainingConfig {
    int epochs = 6;
    Index batch_size = 256;
    OptimizerConfig optimizer;
    std::uint64_t seed = 42;
    int ensemble = 5;
};

struct GdaConfig {
    std::size_t cap_per_class = 20000;
    std::vector<double> eps_ladder = default_eps_ladder();
    std::uint64_t seed = 42;
};

struct CalibrationConfig {
    int bins = 15;
    double t_min = 0.05;
    double t_max = 20.0;
    std::vector<double> lambda_grid = default_lambda_grid();
    UgtsMode mode = UgtsMode::additive;
};

struct BenchmarkConfig {
    std::vector<std::string> methods{"ours", "max-softmax", "entropy", "mcd:n=5:p=0.1", "de:n=3", "de:n=5"};
    std::vector<CorruptionKind> corruptions = all_corruption_kinds();
    std::vector<int> severities{1, 2, 3};
    bool region = true;
    double half_angle_deg = 45.0;
    int histogram_bins = 50;
    int null_scenes = 400;
    std::vector<int> ablation_layers{3, 5};
    std::vector<int> sweep_dims{16, 32, 64};
    std::uint64_t seed = 42;
};

/// Sectioned key-value configuration: [world] [head] [training] [gda]
/// [calibration] [benchmark]. Every key has a default.
struct RunConfig {
    WorldConfig world;
    HeadConfig head;
    TrainingConfig training;
    GdaConfig gda;
    CalibrationConfig calibration;
    BenchmarkConfig benchmark;
};

/// Parses an INI-style file; unknown sections or keys raise ConfigError naming them.
RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(const std::string& text);

/// Applies one "section.key=value" override.
void apply_override(RunConfig& config, const std::string& assignment);
void set_value(RunConfig& config, const std::string& section, const std::string& key, const std::string& value);

/// Keeps head dims consistent with the world (input_dim, num_classes).
void sync_head_to_world(RunConfig& config);

/// Renders back to the same INI format; parse_config(to_text(c)) == c.
std::string to_text(const RunConfig& config);

nlohmann::json to_json(const RunConfig& config);
nlohmann::json to_json(const WorldConfig& config);
WorldConfig world_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const HeadConfig& config);
HeadConfig head_config_from_json(const nlohmann::json& j);

/// FNV-1a 64 of the canonical text, as 16 lowercase hex digits.
std::string config_hash(const RunConfig& config);

std::vector<std::string> split_list(const std::string& text, char sep = ',');

}  // namespace ocuq
