#pragma once

#include "ocuq/core.hpp"
#include "ocuq/rng.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace ocuq {

struct ResidualMlpHead;
struct FeatureDataset;

/// Per-class reservoir of penultimate feature vectors (Algorithm R).
class FeatureBank {
public:
    FeatureBank(Index num_classes, Index dim, std::size_t cap_per_class, std::uint64_t seed);

    /// Offers rows of `features` with their class labels, in row order.
    void add(const Matrix& features, std::span<const std::uint16_t> labels);

    Index num_classes() const { return static_cast<Index>(rows_.size()); }
    Index dim() const { return dim_; }
    std::size_t cap() const { return cap_; }
    std::uint64_t seed() const { return seed_; }

    /// Number of vectors currently held for class c (<= cap).
    std::size_t size(Index c) const;
    /// Number of vectors of class c offered so far.
    std::size_t seen(Index c) const { return seen_[static_cast<std::size_t>(c)]; }
    bool absent(Index c) const { return seen(c) == 0; }
    Matrix class_features(Index c) const;

private:
    Index dim_;
    std::size_t cap_;
    std::uint64_t seed_;
    Rng rng_;
    std::vector<std::vector<double>> rows_;
    std::vector<std::size_t> seen_;
};

/// One pass over `dataset`, reservoir-sampling penultimate features of `head`
/// per ground-truth class.
FeatureBank collect_features(const ResidualMlpHead& head, const FeatureDataset& dataset,
                             std::size_t cap_per_class, std::uint64_t seed);

struct ClassGaussian {
    Vector mean;
    Matrix chol;      // lower-triangular L with L L^T = Sigma + eps' I
    double log_det = 0.0;
    std::int64_t count = 0;
    bool degenerate = false;  // fitted from a single vector
};

struct GdaModel {
    std::vector<ClassGaussian> classes;
    Vector log_priors;
    Index dim = 0;
    double eps = 0.0;           // ladder value applied
    double eps_absolute = 0.0;  // eps * mean(diag of the mean class covariance)

    Index num_classes() const { return static_cast<Index>(classes.size()); }
};

/// {1e-9, 1e-8, ..., 1e-3}
std::vector<double> default_eps_ladder();

/// Sample mean and (n-1)-covariance per class, regularized with the smallest
/// ladder value for which every class factorizes. Priors follow sample counts.
GdaModel fit_gda(const FeatureBank& bank, std::span<const double> eps_ladder);
GdaModel fit_gda(std::span<const Matrix> class_features, std::span<const double> eps_ladder);

/// Rebuilds log_det from chol (used after deserialization).
void refresh_derived(ClassGaussian& g);

/// log sum_c exp(ln pi_c + ln N(z; mu_c, Sigma_c)).
double log_density(const GdaModel& model, const Vector& z);
Vector log_density(const GdaModel& model, const Matrix& features);

/// Per-row uncertainty u = -log_density; larger means less familiar.
Vector epistemic_score(const GdaModel& model, const Matrix& features);

/// Extra parameters a full-covariance Gaussian per class adds: K (d + d^2).
std::int64_t gmm_param_count(std::int64_t dim, std::int64_t num_classes);

}  // namespace ocuq
