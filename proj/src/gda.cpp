#include "ocuq/gda.hpp"

#include "ocuq/head.hpp"
#include "ocuq/nn.hpp"
#include "ocuq/synthworld.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace ocuq {

FeatureBank::FeatureBank(Index num_classes, Index dim, std::size_t cap_per_class, std::uint64_t seed)
    : dim_(dim), cap_(cap_per_class), seed_(seed), rng_(seed),
      rows_(static_cast<std::size_t>(num_classes)), seen_(static_cast<std::size_t>(num_classes), 0) {
    if (num_classes < 1 || dim < 1) throw InputError("FeatureBank: need >= 1 class and dim >= 1");
    if (cap_per_class < 1) throw InputError("FeatureBank: cap must be >= 1");
}

void FeatureBank::add(const Matrix& features, std::span<const std::uint16_t> labels) {
    require_shape(features.cols() == dim_, "FeatureBank::add: feature width mismatch");
    require_shape(static_cast<Index>(labels.size()) == features.rows(), "FeatureBank::add: label count mismatch");
    const auto d = static_cast<std::size_t>(dim_);
    for (Index r = 0; r < features.rows(); ++r) {
        const std::size_t c = labels[static_cast<std::size_t>(r)];
        if (c >= rows_.size()) throw InputError("FeatureBank::add: label " + std::to_string(c) + " out of range");
        auto& store = rows_[c];
        const std::size_t i = seen_[c]++;
        std::size_t slot;
        if (i < cap_) {
            slot = i;
            store.resize((i + 1) * d);
        } else {
            slot = static_cast<std::size_t>(rng_.uniform_int(i + 1));
            if (slot >= cap_) continue;
        }
        for (std::size_t j = 0; j < d; ++j) store[slot * d + j] = features(r, static_cast<Index>(j));
    }
}

std::size_t FeatureBank::size(Index c) const {
    return rows_[static_cast<std::size_t>(c)].size() / static_cast<std::size_t>(dim_);
}

Matrix FeatureBank::class_features(Index c) const {
    const auto& store = rows_[static_cast<std::size_t>(c)];
    const auto n = static_cast<Index>(size(c));
    return Eigen::Map<const Matrix>(store.data(), n, dim_);
}

FeatureBank collect_features(const ResidualMlpHead& head, const FeatureDataset& dataset,
                             std::size_t cap_per_class, std::uint64_t seed) {
    FeatureBank bank(head.config.num_classes, head.config.penultimate_dim(), cap_per_class, seed);
    for (const auto& scene : dataset.scenes) {
        const auto out = head_forward(head, scene.features.cast<double>());
        bank.add(out.penultimate, scene.labels);
    }
    return bank;
}

std::vector<double> default_eps_ladder() {
    return {1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3};
}

void refresh_derived(ClassGaussian& g) {
    g.log_det = 2.0 * g.chol.diagonal().array().log().sum();
}

GdaModel fit_gda(std::span<const Matrix> class_features, std::span<const double> eps_ladder) {
    if (class_features.empty()) throw FitError("fit_gda: no classes");
    if (eps_ladder.empty()) throw FitError("fit_gda: empty eps ladder");
    const Index k = static_cast<Index>(class_features.size());
    const Index d = class_features[0].cols();

    std::vector<Vector> means(static_cast<std::size_t>(k));
    std::vector<Matrix> covs(static_cast<std::size_t>(k));
    Matrix cov_sum = Matrix::Zero(d, d);
    int full_rank_candidates = 0;
    for (Index c = 0; c < k; ++c) {
        const Matrix& x = class_features[static_cast<std::size_t>(c)];
        if (x.rows() == 0) throw FitError("fit_gda: class " + std::to_string(c) + " has no feature vectors");
        require_shape(x.cols() == d, "fit_gda: class feature widths differ");
        const Vector mean = x.colwise().sum().transpose() / static_cast<double>(x.rows());
        means[static_cast<std::size_t>(c)] = mean;
        if (x.rows() > 1) {
            const Matrix centered = x.rowwise() - mean.transpose();
            Matrix cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
            cov = 0.5 * (cov + cov.transpose());
            cov_sum += cov;
            ++full_rank_candidates;
            covs[static_cast<std::size_t>(c)] = std::move(cov);
        } else {
            covs[static_cast<std::size_t>(c)] = Matrix::Zero(d, d);
        }
    }
    double scale = full_rank_candidates > 0 ? (cov_sum / full_rank_candidates).diagonal().mean() : 1.0;
    if (!(scale > 0.0)) scale = 1.0;

    for (double eps : eps_ladder) {
        const double jitter = eps * scale;
        GdaModel model;
        model.dim = d;
        model.eps = eps;
        model.eps_absolute = jitter;
        bool ok = true;
        for (Index c = 0; c < k && ok; ++c) {
            Matrix sigma = covs[static_cast<std::size_t>(c)];
            sigma.diagonal().array() += jitter;
            Eigen::LLT<Matrix> llt(sigma);
            if (llt.info() != Eigen::Success) {
                ok = false;
                break;
            }
            ClassGaussian g;
            g.mean = means[static_cast<std::size_t>(c)];
            g.chol = llt.matrixL();
            g.count = class_features[static_cast<std::size_t>(c)].rows();
            g.degenerate = g.count == 1;
            refresh_derived(g);
            if (!std::isfinite(g.log_det) || !g.chol.allFinite()) ok = false;
            model.classes.push_back(std::move(g));
        }
        if (!ok) continue;
        double total = 0.0;
        for (const auto& g : model.classes) total += static_cast<double>(g.count);
        model.log_priors.resize(k);
        for (Index c = 0; c < k; ++c)
            model.log_priors[c] = std::log(static_cast<double>(model.classes[static_cast<std::size_t>(c)].count) / total);
        return model;
    }
    throw FitError("fit_gda: no eps in the ladder makes every class covariance positive definite");
}

GdaModel fit_gda(const FeatureBank& bank, std::span<const double> eps_ladder) {
    std::vector<Matrix> per_class;
    for (Index c = 0; c < bank.num_classes(); ++c) {
        if (bank.size(c) == 0) throw FitError("fit_gda: class " + std::to_string(c) + " has no feature vectors");
        per_class.push_back(bank.class_features(c));
    }
    return fit_gda(per_class, eps_ladder);
}

Vector log_density(const GdaModel& model, const Matrix& features) {
    require_shape(features.cols() == model.dim,
                  "log_density: feature dim " + std::to_string(features.cols()) + " != model dim " +
                      std::to_string(model.dim));
    const Index n = features.rows();
    const Index k = model.num_classes();
    const double log_2pi = std::log(2.0 * std::numbers::pi);
    Matrix terms(n, k);
    Matrix centered(n, model.dim);
    for (Index c = 0; c < k; ++c) {
        const auto& g = model.classes[static_cast<std::size_t>(c)];
        centered = features.rowwise() - g.mean.transpose();
        // Solve W L^T = X - mu rather than multiply by L^{-1}; the explicit inverse
        // loses digits on ill-conditioned classes.
        g.chol.transpose().triangularView<Eigen::Upper>().solveInPlace<Eigen::OnTheRight>(centered);
        const double base = model.log_priors[c] - 0.5 * (static_cast<double>(model.dim) * log_2pi + g.log_det);
        terms.col(c) = (base - 0.5 * centered.rowwise().squaredNorm().array()).matrix();
    }
    Vector out(n);
    for (Index r = 0; r < n; ++r) out[r] = log_sum_exp(terms.row(r));
    return out;
}

double log_density(const GdaModel& model, const Vector& z) {
    require_shape(z.size() == model.dim, "log_density: query dim mismatch");
    return log_density(model, Matrix(z.transpose()))[0];
}

Vector epistemic_score(const GdaModel& model, const Matrix& features) {
    return -log_density(model, features);
}

std::int64_t gmm_param_count(std::int64_t dim, std::int64_t num_classes) {
    if (dim < 1 || num_classes < 1) throw InputError("gmm_param_count: dim and K must be >= 1");
    return num_classes * (dim + dim * dim);
}

}  // namespace ocuq
