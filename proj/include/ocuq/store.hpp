#pragma once

#include "ocuq/calibration.hpp"
#include "ocuq/core.hpp"
#include "ocuq/gda.hpp"
#include "ocuq/head.hpp"
#include "ocuq/synthworld.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ocuq {

// ArtifactFile layout (all integers little-endian):
//
//   char[4]  magic "OCUQ"
//   u16      format version (currently 1)
//   u16      kind: 1 head, 2 gda, 3 calib, 4 dataset-manifest
//   u32      metadata length L, then L bytes of UTF-8 JSON
//   u32      tensor count T, then T tensors in ascending name order:
//              u16 name length, name bytes
//              u8  dtype: 1 f32, 2 f64, 3 u16, 4 i64
//              u8  rank R, then R x u64 dims
//              prod(dims) elements

inline constexpr std::uint16_t kArtifactVersion = 1;

enum class ArtifactKind : std::uint16_t { head = 1, gda = 2, calib = 3, dataset_manifest = 4 };
enum class DType : std::uint8_t { f32 = 1, f64 = 2, u16 = 3, i64 = 4 };

const char* to_string(ArtifactKind kind);

/// Values are held as f64 in memory; writing checks that each value is exactly
/// representable in the tensor's dtype so that load(save(x)) == x.
struct Tensor {
    std::string name;
    DType dtype = DType::f64;
    std::vector<std::uint64_t> shape;
    std::vector<double> values;
};

struct Artifact {
    ArtifactKind kind = ArtifactKind::head;
    nlohmann::json metadata = nlohmann::json::object();
    std::vector<Tensor> tensors;

    const Tensor& tensor(const std::string& name) const;
    void add(std::string name, DType dtype, std::vector<std::uint64_t> shape, std::vector<double> values);
};

std::vector<std::uint8_t> encode_artifact(const Artifact& artifact);
Artifact decode_artifact(const std::vector<std::uint8_t>& bytes, ArtifactKind expected);

void save_artifact(const Artifact& artifact, const std::filesystem::path& path);
Artifact load_artifact(const std::filesystem::path& path, ArtifactKind expected);

// Typed conversions. Head weights are f32, spectral vectors and GDA tensors f64.
Artifact to_artifact(const ResidualMlpHead& head);
ResidualMlpHead head_from_artifact(const Artifact& artifact);
Artifact to_artifact(const GdaModel& model);
GdaModel gda_from_artifact(const Artifact& artifact);

struct CalibrationArtifact {
    std::string method;
    CalibrationParams params;
};
Artifact to_artifact(const CalibrationArtifact& calib);
CalibrationArtifact calibration_from_artifact(const Artifact& artifact);

Artifact to_artifact(const World& world);
World world_from_artifact(const Artifact& artifact);

void save_head(const ResidualMlpHead& head, const std::filesystem::path& path);
ResidualMlpHead load_head(const std::filesystem::path& path);
void save_gda(const GdaModel& model, const std::filesystem::path& path);
GdaModel load_gda(const std::filesystem::path& path);

// Dataset directory:
//   manifest.json  schema_version, config, class_names, splits, scenes[] with
//                  per-scene seed and byte offsets into the two files below
//   features.bin   f32 LE, scenes concatenated, voxel-major, then channel
//   labels.bin     u16 LE, same voxel order
//   world.ocuq     dataset-manifest artifact with the frozen world tensors

inline constexpr int kDatasetSchemaVersion = 1;

struct DatasetBundle {
    World world;
    std::map<std::string, FeatureDataset> splits;

    const FeatureDataset& split(const std::string& name) const;
};

void write_dataset(const std::filesystem::path& dir, const DatasetBundle& bundle);
DatasetBundle read_dataset(const std::filesystem::path& dir);

}  // namespace ocuq
