#pragma once

#include "ocuq/calibration.hpp"
#include "ocuq/config.hpp"
#include "ocuq/gda.hpp"
#include "ocuq/head.hpp"
#include "ocuq/ood.hpp"
#include "ocuq/synthworld.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ocuq {

enum class MethodKind { ours, max_softmax, entropy, mcd, de };
enum class EnsembleScore { predictive_entropy, mutual_information };

/// One entry of the method registry, written `name[:key=value...]`:
///   ours                      -log density of penultimate features
///   max-softmax               1 - max p of the baseline head
///   entropy                   softmax entropy of the baseline head
///   mcd[:n=5][:p=0.1][:score=pe|mi]
///   de[:n=5][:score=pe|mi]
struct MethodSpec {
    std::string label;  // the registry string, used as the report key
    MethodKind kind = MethodKind::ours;
    int n = 1;
    double dropout_p = 0.1;
    EnsembleScore score = EnsembleScore::predictive_entropy;
};

/// Throws ConfigError for unknown names or keys.
MethodSpec parse_method(const std::string& text);
std::vector<MethodSpec> parse_methods(const std::vector<std::string>& texts);

/// Trained artifacts. members[0] doubles as the single-head baseline.
struct ModelBundle {
    std::optional<ResidualMlpHead> ours;
    std::optional<GdaModel> gda;
    std::vector<ResidualMlpHead> members;
};

/// Throws ConfigError naming the method when an artifact it needs is absent.
void check_artifacts(const ModelBundle& models, const MethodSpec& method);

struct MethodOutput {
    Matrix logits;               // raw logits, or ln(mean probs) for ensembles
    Vector ood_score;            // larger = more uncertain
    Vector calibration_measure;  // per-voxel uncertainty feeding UGTS
};

/// `mc_seed` drives the dropout masks of mcd; other methods ignore it.
MethodOutput run_method(const ModelBundle& models, const MethodSpec& method, const Matrix& features,
                        std::uint64_t mc_seed);

std::int64_t method_parameter_count(const ModelBundle& models, const MethodSpec& method);

// ---------------------------------------------------------------------------
// Training helpers shared by the CLI and the sweeps.

enum class HeadVariant { ours, baseline };

/// ours keeps the configured spectral normalization; baseline turns it off.
HeadConfig variant_config(const HeadConfig& config, HeadVariant variant);
std::uint64_t member_seed(std::uint64_t training_seed, HeadVariant variant, int index);

ResidualMlpHead train_variant(const TrainingConfig& training, const HeadConfig& config,
                              const FeatureDataset& train, std::uint64_t seed, TrainLog* log = nullptr);
GdaModel fit_density(const GdaConfig& gda, const ResidualMlpHead& head, const FeatureDataset& train,
                     FeatureBank* bank_out = nullptr);

Matrix scene_matrix(const VoxelScene& scene);

// ---------------------------------------------------------------------------
// OoD sweep

struct OodCell {
    CorruptionKind corruption = CorruptionKind::noise;
    int severity = 1;
    double auroc = 0.0;
    double fpr95 = 0.0;
    std::size_t n_id = 0;
    std::size_t n_ood = 0;
    Histogram histogram;
};

struct LevelReport {
    std::vector<OodCell> cells;  // corruption-major, severity-minor
    std::optional<double> mauroc;
    std::optional<double> mfpr95;
};

struct MethodReport {
    MethodSpec method;
    LevelReport scene;
    std::optional<LevelReport> region;
    std::int64_t parameters = 0;
    double seconds = 0.0;  // inference wall clock; excluded from the deterministic report
};

struct BenchmarkReport {
    std::vector<MethodReport> methods;
};

/// ID = clean test scenes; OoD = the same scenes corrupted, one cell per
/// (corruption, severity). Region level corrupts and scores only the front sector.
BenchmarkReport run_sweep(const ModelBundle& models, const std::vector<MethodSpec>& methods, const World& world,
                          const FeatureDataset& test, const BenchmarkConfig& config);

struct NullResult {
    std::string method;
    double auroc = 0.0;
    double fpr95 = 0.0;
    std::size_t n_a = 0;
    std::size_t n_b = 0;
};

/// Two disjoint sets of fresh clean scenes scored against each other.
std::vector<NullResult> run_null(const ModelBundle& models, const std::vector<MethodSpec>& methods,
                                 const World& world, const BenchmarkConfig& config);

// ---------------------------------------------------------------------------
// Calibration

CalibrationSet build_calibration_set(const ModelBundle& models, const MethodSpec& method,
                                     const std::vector<VoxelScene>& scenes, std::uint64_t mc_seed);

struct CalibrationCell {
    CorruptionKind corruption = CorruptionKind::noise;
    int severity = 1;
    CalibrationResult ts;
    std::optional<CalibrationResult> ugts;
};

struct CalibrationReport {
    std::string method;
    bool ugts_enabled = false;
    CalibrationParams params;
    CalibrationResult clean_raw;  // t = 1
    CalibrationResult clean_ts;
    std::optional<CalibrationResult> clean_ugts;
    std::vector<CalibrationCell> cells;
    std::optional<double> mece_ts, mnll_ts, mece_ugts, mnll_ugts;
    double accuracy_clean = 0.0;
    bool argmax_preserved = true;
};

/// t_train from clean validation logits, u_bar_train from the train split,
/// lambda tuned on clean validation, then evaluated on every corrupted test cell.
CalibrationReport calibrate_method(const ModelBundle& models, const MethodSpec& method, const World& world,
                                   const FeatureDataset& train, const FeatureDataset& val,
                                   const FeatureDataset& test, const CalibrationConfig& calib,
                                   const BenchmarkConfig& bench, bool ugts);

// ---------------------------------------------------------------------------
// Ablation and feature-dimension sweep (scene level, "ours" only)

struct AblationRow {
    int layers = 0;
    bool skip = false;
    std::optional<double> mauroc;
    std::optional<double> mfpr95;
    std::int64_t parameters = 0;
};

struct AblationReport {
    std::vector<AblationRow> rows;
    std::optional<bool> deep_skip_wins;  // 5 layers + skip beats 5 layers without
};

AblationReport run_ablation(const RunConfig& config, const World& world, const FeatureDataset& train,
                            const FeatureDataset& test);

struct DimSweepRow {
    int dim = 0;
    std::optional<double> mauroc;
    std::optional<double> mfpr95;
    std::int64_t gmm_parameters = 0;
};

/// Trains one head per penultimate width in `dims`; throws InputError when empty.
std::vector<DimSweepRow> feature_dim_sweep(const std::vector<int>& dims, const RunConfig& config,
                                           const World& world, const FeatureDataset& train,
                                           const FeatureDataset& test);

}  // namespace ocuq
