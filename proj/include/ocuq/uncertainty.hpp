#pragma once

#include "ocuq/core.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace ocuq {

struct ResidualMlpHead;
struct GdaModel;

/// Row entropy -sum p ln p in nats, with 0 ln 0 = 0.
Vector softmax_entropy(const Matrix& probs);

/// 1 - max_k p_k per row.
Vector max_softmax_score(const Matrix& probs);

enum class EnsembleKind { deep_ensemble, mc_dropout };

struct EnsembleSpec {
    EnsembleKind kind = EnsembleKind::deep_ensemble;
    int n = 5;
    double dropout_p = 0.1;          // mc-dropout only
    std::uint64_t base_seed = 0;     // mc-dropout: pass i uses derive_seed({base_seed, i})
};

struct EnsemblePrediction {
    Matrix mean_probs;
    std::vector<Matrix> member_probs;
};

/// Averages member softmax outputs. Deep ensembles take `spec.n` heads from
/// `members`; MC dropout runs `spec.n` dropout passes of `members[0]`.
EnsemblePrediction ensemble_predict(std::span<const ResidualMlpHead* const> members,
                                    const EnsembleSpec& spec, const Matrix& features);

/// Entropy of the ensemble mean.
Vector predictive_entropy(const Matrix& mean_probs);

/// PE(mean) - mean member entropy, clamped at 0 when within -1e-12.
Vector mutual_information(std::span<const Matrix> member_probs);

struct UncertaintyRecord {
    std::uint64_t voxel = 0;
    std::uint16_t predicted = 0;
    double confidence = 0.0;
    double aleatoric = 0.0;
    double epistemic = 0.0;
    std::optional<double> predictive_entropy;
    std::optional<double> mutual_information;
};

/// Per-voxel records from the head and its density model.
std::vector<UncertaintyRecord> make_records(const ResidualMlpHead& head, const GdaModel& gda,
                                            const Matrix& features);

}  // namespace ocuq
