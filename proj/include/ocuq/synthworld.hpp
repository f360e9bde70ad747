#pragma once

#include "ocuq/core.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ocuq {

/// Per-kind magnitude coefficients for feature-space corruptions.
struct CorruptionStrengths {
    double noise = 0.05;  // z += noise * m * sigma_z * eps
    double fog = 0.25;   // w = min(1, fog * m * r / r_max)
    double bias = 0.4;   // z += bias * m * sigma_z * b
};

struct WorldConfig {
    Index grid_x = 24;
    Index grid_y = 24;
    Index grid_z = 4;
    Index num_classes = 17;
    Index feature_dim = 32;
    int objects_min = 6;
    int objects_max = 14;
    double anchor_scale = 1.0;
    double anchor_separation = 5.0;
    double projection_scale = 0.5;
    double noise_sigma = 0.25;
    std::uint64_t seed = 42;
    int train_scenes = 32;
    int val_scenes = 100;
    int test_scenes = 100;
    CorruptionStrengths strengths;

    Index num_voxels() const { return grid_x * grid_y * grid_z; }
};

void validate(const WorldConfig& config);

/// Frozen stand-in for the perception backbone: everything a scene's
/// features are built from. Drawn once per dataset seed.
struct World {
    WorldConfig config;
    Matrix anchors;     // K x d, row c is the class anchor a_c
    Matrix projection;  // d x K, maps a neighborhood histogram into feature space
    Vector fog;         // d
    Vector bias_direction;  // d, unit norm
    double feature_std = 0.0;  // sigma_z on the clean training split
};

World generate_world(const WorldConfig& config);

/// One voxel grid. Voxel index = (x * grid_y + y) * grid_z + z.
struct VoxelScene {
    std::vector<ClassId> labels;
    FeatureMatrix features;  // num_voxels x feature_dim
    std::uint64_t scene_id = 0;
    std::uint64_t seed = 0;
};

struct FeatureDataset {
    std::vector<VoxelScene> scenes;
    WorldConfig config;
    std::string split;

    std::size_t num_voxels() const;
};

inline Index voxel_index(const WorldConfig& c, Index x, Index y, Index z) {
    return (x * c.grid_y + y) * c.grid_z + z;
}

/// Labels: background class 0 overwritten by random boxes and ellipsoids.
/// Features: z_v = a_label(v) + P h_v + noise_sigma * eps_v, where h_v is the
/// normalized class histogram of the 3x3x3 neighborhood (border-clamped).
VoxelScene generate_scene(const World& world, std::uint64_t scene_seed, std::uint64_t scene_id = 0);

/// Split tags used in seed derivation.
std::uint64_t split_tag(std::string_view split);

/// Scenes with seeds derive_seed({world seed, split tag, index}).
FeatureDataset generate_split(const World& world, std::string_view split, int count);

/// sqrt of the mean per-channel variance over every voxel of the dataset.
double feature_std(const FeatureDataset& dataset);

enum class CorruptionKind { noise, blur, sector_drop, fog, bias_shift };
enum class CorruptionRegion { full_scene, front_sector };

const char* to_string(CorruptionKind kind);
CorruptionKind parse_corruption_kind(std::string_view name);
const std::vector<CorruptionKind>& all_corruption_kinds();

struct CorruptionSpec {
    CorruptionKind kind = CorruptionKind::noise;
    int severity = 1;  // 0 is the identity
    CorruptionRegion region = CorruptionRegion::full_scene;
    double half_angle_deg = 45.0;
};

/// Voxels whose azimuth from the grid center lies within +-half_angle of +x,
/// for every z layer.
std::vector<std::uint8_t> front_sector_mask(const WorldConfig& config, double half_angle_deg);

/// Applies `spec` to the affected voxels (all, or the front sector). With
/// m = severity:
///   noise        z += noise * m * sigma_z * eps
///   blur         z <- mean of z over the (2m+1)^3 window, truncated at borders
///   sector_drop  z <- 0 where |azimuth| <= extent * m / 3 (extent 180 deg for
///                the full scene, the half angle for the front sector)
///   fog          z <- (1-w) z + w f, w = min(1, fog * m * r / r_max)
///   bias_shift   z += bias * m * sigma_z * b
VoxelScene apply_corruption(const World& world, const VoxelScene& scene, const CorruptionSpec& spec,
                            std::uint64_t seed);

std::vector<std::string> default_class_names(Index num_classes);

}  // namespace ocuq
