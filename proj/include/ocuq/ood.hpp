#pragma once

#include "ocuq/core.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace ocuq {

/// Scores where larger means more uncertain; OoD is the positive class.
struct ScoredPopulation {
    std::vector<double> id_scores;
    std::vector<double> ood_scores;
};

/// Mann-Whitney estimate P(ood > id) + 0.5 P(ood == id), via midranks.
double auroc(const ScoredPopulation& pop);

/// Threshold tau = largest observed OoD score with #{ood >= tau} >= 0.95 n_ood;
/// returns #{id >= tau} / n_id. No interpolation.
double fpr_at_95_tpr(const ScoredPopulation& pop);

double aggregate_scene(std::span<const double> voxel_scores);

/// Mean over voxels where mask is nonzero.
double aggregate_region(std::span<const double> voxel_scores, std::span<const std::uint8_t> mask);

struct Histogram {
    std::vector<double> edges;  // bins + 1
    std::vector<std::int64_t> count_id;
    std::vector<std::int64_t> count_ood;
};

/// Equal-width histogram over the pooled [min, max] of both populations.
Histogram pooled_histogram(const ScoredPopulation& pop, int bins = 50);

}  // namespace ocuq
