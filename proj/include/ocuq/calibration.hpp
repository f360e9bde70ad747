#pragma once

#include "ocuq/core.hpp"

#include <span>
#include <vector>

namespace ocuq {

/// Mean -ln p[label] with p floored at 1e-12.
double nll(const Matrix& probs, std::span<const ClassId> labels);

struct CalibrationBin {
    double lower = 0.0;
    double upper = 0.0;
    double confidence = 0.0;  // mean max-prob in the bin
    double accuracy = 0.0;
    std::size_t count = 0;
};

struct CalibrationResult {
    double ece = 0.0;
    double nll = 0.0;
    double temperature = 1.0;  // informational; 1 unless set by the caller
    std::vector<CalibrationBin> bins;
};

/// Equal-width bins over (0, 1]; a sample falls in bin b when its confidence
/// lies in (b/B, (b+1)/B].
CalibrationResult ece(const Matrix& probs, std::span<const ClassId> labels, int bins = 15);

/// softmax(logits / t).
Matrix scale_logits(const Matrix& logits, double t);
/// Row r is divided by temperatures[r].
Matrix scale_logits(const Matrix& logits, const Vector& temperatures);

/// NLL of softmax(logits / t) without materializing the probabilities.
double nll_at_temperature(const Matrix& logits, std::span<const ClassId> labels, double t);

/// Minimizes NLL over t: 64 log-spaced grid points on [t_min, t_max], then
/// golden-section refinement around the best point to |dt| < 1e-4.
double fit_temperature(const Matrix& logits, std::span<const ClassId> labels, double t_min = 0.05,
                       double t_max = 20.0);

enum class UgtsMode { additive, multiplicative };

struct CalibrationParams {
    double t_train = 1.0;
    double lambda = 0.0;
    double u_bar_train = 0.0;
    UgtsMode mode = UgtsMode::additive;
    double t_min = 0.05;
    double t_max = 20.0;
};

void validate(const CalibrationParams& params);

/// additive:      clamp(t_train + lambda (u_sample - u_train), t_min, t_max)
/// multiplicative: clamp(t_train * lambda (u_sample - u_train), t_min, t_max)
double ugts_temperature(const CalibrationParams& params, double u_bar_sample);

/// Voxel logits grouped by sample (scene), with each sample's mean uncertainty.
struct CalibrationSet {
    Matrix logits;
    std::vector<ClassId> labels;
    std::vector<Index> offsets;  // sample s covers rows [offsets[s], offsets[s+1])
    Vector u_bar;                // one per sample

    Index num_samples() const { return u_bar.size(); }
};

/// Per-row temperatures from the per-sample UGTS rule.
Vector ugts_row_temperatures(const CalibrationSet& set, const CalibrationParams& params);

CalibrationResult evaluate_fixed(const CalibrationSet& set, double t, int bins = 15);
CalibrationResult evaluate_ugts(const CalibrationSet& set, const CalibrationParams& params, int bins = 15);

/// lambda minimizing ECE on `clean` over `grid`; ties go to the smaller |lambda|.
double tune_lambda(const CalibrationSet& clean, const CalibrationParams& base, std::span<const double> grid,
                   int bins = 15);

std::vector<double> default_lambda_grid();

}  // namespace ocuq
