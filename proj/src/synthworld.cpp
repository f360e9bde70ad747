#include "ocuq/synthworld.hpp"

#include "ocuq/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace ocuq {

void validate(const WorldConfig& c) {
    if (c.num_classes < 2) throw ConfigError("world.num_classes must be >= 2");
    if (c.num_classes > 65535) throw ConfigError("world.num_classes must fit in 16 bits");
    if (c.feature_dim < 2) throw ConfigError("world.feature_dim must be >= 2");
    if (c.grid_x < 1 || c.grid_y < 1 || c.grid_z < 1) throw ConfigError("world grid dims must be >= 1");
    if (c.objects_min < 0 || c.objects_max < c.objects_min)
        throw ConfigError("world.objects_min/objects_max must satisfy 0 <= min <= max");
    if (c.anchor_scale <= 0.0 || c.anchor_separation < 0.0 || c.noise_sigma < 0.0 ||
        c.projection_scale < 0.0)
        throw ConfigError("world scales must be nonnegative (anchor_scale positive)");
    if (c.train_scenes < 0 || c.val_scenes < 0 || c.test_scenes < 0)
        throw ConfigError("world scene counts must be nonnegative");
}

World generate_world(const WorldConfig& config) {
    validate(config);
    const Index k = config.num_classes;
    const Index d = config.feature_dim;
    Rng rng(derive_seed({config.seed, 0x776f726c64ULL}));

    World world;
    world.config = config;
    world.anchors.resize(k, d);
    int rejections = 0;
    for (Index c = 0; c < k;) {
        RowVector candidate(d);
        for (Index j = 0; j < d; ++j) candidate[j] = config.anchor_scale * rng.normal();
        bool ok = true;
        for (Index prev = 0; prev < c && ok; ++prev)
            ok = (world.anchors.row(prev) - candidate).norm() >= config.anchor_separation;
        if (ok) {
            world.anchors.row(c) = candidate;
            ++c;
        } else if (++rejections > 100000) {
            throw GenerationError("anchor separation " + std::to_string(config.anchor_separation) +
                                  " unreachable after 1e5 rejections");
        }
    }
    world.projection.resize(d, k);
    for (Index i = 0; i < world.projection.size(); ++i)
        world.projection.data()[i] = config.projection_scale * rng.normal();
    world.fog.resize(d);
    for (Index j = 0; j < d; ++j) world.fog[j] = config.anchor_scale * rng.normal();
    world.bias_direction.resize(d);
    for (Index j = 0; j < d; ++j) world.bias_direction[j] = rng.normal();
    world.bias_direction.normalize();
    return world;
}

std::size_t FeatureDataset::num_voxels() const {
    std::size_t n = 0;
    for (const auto& s : scenes) n += s.labels.size();
    return n;
}

namespace {

void paint_objects(const WorldConfig& c, Rng& rng, std::vector<ClassId>& labels) {
    const int span = c.objects_max - c.objects_min + 1;
    const int n_obj = c.objects_min + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(span)));
    for (int o = 0; o < n_obj; ++o) {
        const auto cls = static_cast<ClassId>(1 + rng.uniform_int(static_cast<std::uint64_t>(c.num_classes - 1)));
        const bool ellipsoid = rng.bernoulli(0.5);
        const double cx = rng.uniform(0.0, static_cast<double>(c.grid_x));
        const double cy = rng.uniform(0.0, static_cast<double>(c.grid_y));
        const double cz = rng.uniform(0.0, static_cast<double>(c.grid_z));
        const double hx = rng.uniform(1.0, 0.2 * static_cast<double>(c.grid_x) + 1.0);
        const double hy = rng.uniform(1.0, 0.2 * static_cast<double>(c.grid_y) + 1.0);
        const double hz = rng.uniform(0.5, 0.5 * static_cast<double>(c.grid_z) + 0.5);
        for (Index x = 0; x < c.grid_x; ++x)
            for (Index y = 0; y < c.grid_y; ++y)
                for (Index z = 0; z < c.grid_z; ++z) {
                    const double dx = (static_cast<double>(x) + 0.5 - cx) / hx;
                    const double dy = (static_cast<double>(y) + 0.5 - cy) / hy;
                    const double dz = (static_cast<double>(z) + 0.5 - cz) / hz;
                    const bool inside = ellipsoid
                                            ? dx * dx + dy * dy + dz * dz <= 1.0
                                            : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0 && std::abs(dz) <= 1.0;
                    if (inside) labels[static_cast<std::size_t>(voxel_index(c, x, y, z))] = cls;
                }
    }
}

Index clamp_index(Index v, Index n) { return std::clamp<Index>(v, 0, n - 1); }

}  // namespace

VoxelScene generate_scene(const World& world, std::uint64_t scene_seed, std::uint64_t scene_id) {
    const WorldConfig& c = world.config;
    const Index n = c.num_voxels();
    const Index k = c.num_classes;
    const Index d = c.feature_dim;
    Rng rng(scene_seed);

    VoxelScene scene;
    scene.scene_id = scene_id;
    scene.seed = scene_seed;
    scene.labels.assign(static_cast<std::size_t>(n), 0);
    paint_objects(c, rng, scene.labels);

    scene.features.resize(n, d);
    Vector hist(k);
    Vector z(d);
    for (Index x = 0; x < c.grid_x; ++x)
        for (Index y = 0; y < c.grid_y; ++y)
            for (Index zz = 0; zz < c.grid_z; ++zz) {
                hist.setZero();
                for (Index ox = -1; ox <= 1; ++ox)
                    for (Index oy = -1; oy <= 1; ++oy)
                        for (Index oz = -1; oz <= 1; ++oz) {
                            const Index nb = voxel_index(c, clamp_index(x + ox, c.grid_x),
                                                         clamp_index(y + oy, c.grid_y),
                                                         clamp_index(zz + oz, c.grid_z));
                            hist[scene.labels[static_cast<std::size_t>(nb)]] += 1.0;
                        }
                hist /= 27.0;
                const Index v = voxel_index(c, x, y, zz);
                z = world.anchors.row(scene.labels[static_cast<std::size_t>(v)]).transpose();
                z.noalias() += world.projection * hist;
                for (Index j = 0; j < d; ++j) z[j] += c.noise_sigma * rng.normal();
                scene.features.row(v) = z.transpose().cast<float>();
            }
    return scene;
}

std::uint64_t split_tag(std::string_view split) {
    // FNV-1a over the split name.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char ch : split) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ULL;
    }
    return h;
}

FeatureDataset generate_split(const World& world, std::string_view split, int count) {
    FeatureDataset ds;
    ds.config = world.config;
    ds.split = std::string(split);
    ds.scenes.reserve(static_cast<std::size_t>(std::max(count, 0)));
    const std::uint64_t tag = split_tag(split);
    for (int i = 0; i < count; ++i) {
        const auto idx = static_cast<std::uint64_t>(i);
        ds.scenes.push_back(generate_scene(world, derive_seed({world.config.seed, tag, idx}), idx));
    }
    return ds;
}

double feature_std(const FeatureDataset& dataset) {
    const Index d = dataset.config.feature_dim;
    Vector sum = Vector::Zero(d);
    std::size_t n = 0;
    for (const auto& s : dataset.scenes) {
        sum += s.features.cast<double>().colwise().sum().transpose();
        n += static_cast<std::size_t>(s.features.rows());
    }
    if (n < 2) throw InputError("feature_std: need at least two voxels");
    const Vector mean = sum / static_cast<double>(n);
    Vector sq = Vector::Zero(d);
    for (const auto& s : dataset.scenes) {
        const Matrix centered = s.features.cast<double>().rowwise() - mean.transpose();
        sq += centered.colwise().squaredNorm().transpose();
    }
    return std::sqrt(sq.sum() / static_cast<double>(d) / static_cast<double>(n - 1));
}

const char* to_string(CorruptionKind kind) {
    switch (kind) {
        case CorruptionKind::noise: return "noise";
        case CorruptionKind::blur: return "blur";
        case CorruptionKind::sector_drop: return "sector_drop";
        case CorruptionKind::fog: return "fog";
        case CorruptionKind::bias_shift: return "bias_shift";
    }
    return "?";
}

CorruptionKind parse_corruption_kind(std::string_view name) {
    for (auto k : all_corruption_kinds())
        if (name == to_string(k)) return k;
    throw InputError("unknown corruption kind '" + std::string(name) + "'");
}

const std::vector<CorruptionKind>& all_corruption_kinds() {
    static const std::vector<CorruptionKind> kinds{CorruptionKind::noise, CorruptionKind::blur,
                                                   CorruptionKind::sector_drop, CorruptionKind::fog,
                                                   CorruptionKind::bias_shift};
    return kinds;
}

namespace {

struct PlanarGeometry {
    double dx, dy;
};

PlanarGeometry planar_offset(const WorldConfig& c, Index x, Index y) {
    return {static_cast<double>(x) + 0.5 - 0.5 * static_cast<double>(c.grid_x),
            static_cast<double>(y) + 0.5 - 0.5 * static_cast<double>(c.grid_y)};
}

double azimuth_deg(const WorldConfig& c, Index x, Index y) {
    const auto g = planar_offset(c, x, y);
    return std::atan2(g.dy, g.dx) * 180.0 / std::numbers::pi;
}

// Separable box mean along one axis with truncated windows.
void box_mean_axis(const WorldConfig& c, const Matrix& in, Matrix& out, int axis, Index radius) {
    const std::array<Index, 3> dims{c.grid_x, c.grid_y, c.grid_z};
    out.resize(in.rows(), in.cols());
    for (Index x = 0; x < c.grid_x; ++x)
        for (Index y = 0; y < c.grid_y; ++y)
            for (Index z = 0; z < c.grid_z; ++z) {
                std::array<Index, 3> p{x, y, z};
                const Index lo = std::max<Index>(0, p[axis] - radius);
                const Index hi = std::min<Index>(dims[axis] - 1, p[axis] + radius);
                auto dst = out.row(voxel_index(c, x, y, z));
                dst.setZero();
                for (Index t = lo; t <= hi; ++t) {
                    p[axis] = t;
                    dst += in.row(voxel_index(c, p[0], p[1], p[2]));
                }
                dst /= static_cast<double>(hi - lo + 1);
            }
}

}  // namespace

std::vector<std::uint8_t> front_sector_mask(const WorldConfig& config, double half_angle_deg) {
    if (!(half_angle_deg > 0.0 && half_angle_deg < 180.0))
        throw InputError("front_sector_mask: half angle must lie in (0, 180) degrees");
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(config.num_voxels()), 0);
    for (Index x = 0; x < config.grid_x; ++x)
        for (Index y = 0; y < config.grid_y; ++y) {
            const double az = azimuth_deg(config, x, y);
            if (az < -half_angle_deg || az > half_angle_deg) continue;
            for (Index z = 0; z < config.grid_z; ++z)
                mask[static_cast<std::size_t>(voxel_index(config, x, y, z))] = 1;
        }
    return mask;
}

VoxelScene apply_corruption(const World& world, const VoxelScene& scene, const CorruptionSpec& spec,
                            std::uint64_t seed) {
    if (spec.severity < 0 || spec.severity > 3)
        throw InputError("corruption severity must lie in {0,1,2,3}");
    VoxelScene out = scene;
    if (spec.severity == 0) return out;

    const WorldConfig& c = world.config;
    const Index n = c.num_voxels();
    const Index d = c.feature_dim;
    require_shape(scene.features.rows() == n && scene.features.cols() == d,
                  "apply_corruption: scene does not match world dims");
    const double m = spec.severity;
    const bool front = spec.region == CorruptionRegion::front_sector;
    std::vector<std::uint8_t> affected = front ? front_sector_mask(c, spec.half_angle_deg)
                                               : std::vector<std::uint8_t>(static_cast<std::size_t>(n), 1);

    Rng rng(seed);
    switch (spec.kind) {
        case CorruptionKind::noise: {
            if (world.feature_std <= 0.0) throw StateError("noise corruption needs world.feature_std");
            const double amp = c.strengths.noise * m * world.feature_std;
            for (Index v = 0; v < n; ++v) {
                if (!affected[static_cast<std::size_t>(v)]) continue;
                for (Index j = 0; j < d; ++j)
                    out.features(v, j) = static_cast<float>(scene.features(v, j) + amp * rng.normal());
            }
            break;
        }
        case CorruptionKind::blur: {
            const Index radius = spec.severity;
            Matrix a = scene.features.cast<double>();
            Matrix b;
            box_mean_axis(c, a, b, 0, radius);
            box_mean_axis(c, b, a, 1, radius);
            box_mean_axis(c, a, b, 2, radius);
            for (Index v = 0; v < n; ++v)
                if (affected[static_cast<std::size_t>(v)]) out.features.row(v) = b.row(v).cast<float>();
            break;
        }
        case CorruptionKind::sector_drop: {
            const double extent = front ? spec.half_angle_deg : 180.0;
            const double limit = extent * m / 3.0;
            for (Index x = 0; x < c.grid_x; ++x)
                for (Index y = 0; y < c.grid_y; ++y) {
                    if (std::abs(azimuth_deg(c, x, y)) > limit) continue;
                    for (Index z = 0; z < c.grid_z; ++z) {
                        const Index v = voxel_index(c, x, y, z);
                        if (affected[static_cast<std::size_t>(v)]) out.features.row(v).setZero();
                    }
                }
            break;
        }
        case CorruptionKind::fog: {
            const auto corner = planar_offset(c, 0, 0);
            const double r_max = std::hypot(corner.dx, corner.dy);
            const RowVector fog = world.fog.transpose();
            for (Index x = 0; x < c.grid_x; ++x)
                for (Index y = 0; y < c.grid_y; ++y) {
                    const auto g = planar_offset(c, x, y);
                    const double r = std::hypot(g.dx, g.dy);
                    const double w = r_max > 0.0 ? std::min(1.0, c.strengths.fog * m * r / r_max) : 0.0;
                    for (Index z = 0; z < c.grid_z; ++z) {
                        const Index v = voxel_index(c, x, y, z);
                        if (!affected[static_cast<std::size_t>(v)]) continue;
                        const RowVector zc = scene.features.row(v).cast<double>();
                        out.features.row(v) = ((1.0 - w) * zc + w * fog).cast<float>();
                    }
                }
            break;
        }
        case CorruptionKind::bias_shift: {
            if (world.feature_std <= 0.0) throw StateError("bias_shift corruption needs world.feature_std");
            const RowVector shift = (c.strengths.bias * m * world.feature_std) * world.bias_direction.transpose();
            for (Index v = 0; v < n; ++v)
                if (affected[static_cast<std::size_t>(v)])
                    out.features.row(v) = (scene.features.row(v).cast<double>() + shift).cast<float>();
            break;
        }
    }
    return out;
}

std::vector<std::string> default_class_names(Index num_classes) {
    static const std::vector<std::string> names17{
        "unoccupied", "barrier",   "bicycle",   "bus",        "car",      "construction_vehicle",
        "motorcycle", "pedestrian", "traffic_cone", "trailer", "truck",    "driveable_surface",
        "other_flat", "sidewalk",  "terrain",   "manmade",    "vegetation"};
    if (num_classes == 17) return names17;
    std::vector<std::string> out;
    out.emplace_back("unoccupied");
    for (Index c = 1; c < num_classes; ++c) out.push_back("class_" + std::to_string(c));
    return out;
}

}  // namespace ocuq
