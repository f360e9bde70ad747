#pragma once

// Brute-force reference implementations. Each one avoids the code path it
// checks: explicit loops instead of Eigen products, dense inverses instead of
// Cholesky factors, pair counting instead of ranks.

#include "ocuq/core.hpp"
#include "ocuq/head.hpp"
#include "ocuq/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <vector>

namespace oracle {

using ocuq::Index;
using ocuq::Matrix;
using ocuq::Vector;

inline Matrix random_matrix(Index rows, Index cols, std::uint64_t seed, double scale = 1.0) {
    ocuq::Rng rng(seed);
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
    return m;
}

/// C = A B with a triple loop.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix c = Matrix::Zero(a.rows(), b.cols());
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    return c;
}

/// y = x W^T + b, row by row.
inline Matrix affine(const Matrix& x, const Matrix& w, const Vector& b) {
    Matrix y(x.rows(), w.rows());
    for (Index r = 0; r < x.rows(); ++r)
        for (Index o = 0; o < w.rows(); ++o) {
            double s = b(o);
            for (Index i = 0; i < w.cols(); ++i) s += x(r, i) * w(o, i);
            y(r, o) = s;
        }
    return y;
}

/// Singular values by one-sided Jacobi rotations, descending.
inline std::vector<double> singular_values(Matrix a) {
    const Index n = a.cols();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (Index p = 0; p < n; ++p)
            for (Index q = p + 1; q < n; ++q) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (Index i = 0; i < a.rows(); ++i) {
                    alpha += a(i, p) * a(i, p);
                    beta += a(i, q) * a(i, q);
                    gamma += a(i, p) * a(i, q);
                }
                if (gamma == 0.0) continue;
                off = std::max(off, std::abs(gamma) / std::sqrt(alpha * beta));
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (Index i = 0; i < a.rows(); ++i) {
                    const double ap = a(i, p), aq = a(i, q);
                    a(i, p) = c * ap - s * aq;
                    a(i, q) = s * ap + c * aq;
                }
            }
        if (off < 1e-15) break;
    }
    std::vector<double> sv;
    for (Index j = 0; j < n; ++j) {
        double s = 0.0;
        for (Index i = 0; i < a.rows(); ++i) s += a(i, j) * a(i, j);
        sv.push_back(std::sqrt(s));
    }
    std::sort(sv.rbegin(), sv.rend());
    return sv;
}

inline double leaky(double x) { return x > 0.0 ? x : 0.01 * x; }

/// Layer-by-layer forward with scalar loops; spectral scale recomputed from u, v.
inline std::pair<Matrix, Matrix> head_forward(const ocuq::ResidualMlpHead& head, const Matrix& x0) {
    auto eff = [](const ocuq::LinearLayer& l) {
        if (!l.sn_enabled) return l.weight;
        double sigma = 0.0;
        for (Index i = 0; i < l.weight.rows(); ++i)
            for (Index j = 0; j < l.weight.cols(); ++j) sigma += l.sn.u(i) * l.weight(i, j) * l.sn.v(j);
        const double scale = sigma > l.sn_coefficient ? l.sn_coefficient / sigma : 1.0;
        return Matrix(l.weight * scale);
    };
    Matrix x = x0;
    for (std::size_t b = 0; b < head.blocks.size(); ++b) {
        Matrix a = affine(x, eff(head.blocks[b]), head.blocks[b].bias);
        for (Index i = 0; i < a.size(); ++i) a.data()[i] = leaky(a.data()[i]);
        const bool skip = head.config.skip && x.cols() == a.cols();
        x = skip ? Matrix(x + a) : a;
    }
    return {affine(x, eff(head.classifier), head.classifier.bias), x};
}

/// ln N(z; mu, Sigma) from an explicit inverse and determinant.
inline double gaussian_logpdf(const Vector& z, const Vector& mu, const Matrix& cov) {
    const Index d = z.size();
    const Matrix inv = cov.inverse();
    const Vector diff = z - mu;
    double q = 0.0;
    for (Index i = 0; i < d; ++i)
        for (Index j = 0; j < d; ++j) q += diff(i) * inv(i, j) * diff(j);
    return -0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + std::log(cov.determinant()) + q);
}

inline double mixture_logpdf(const Vector& z, const std::vector<Vector>& mus, const std::vector<Matrix>& covs,
                             const std::vector<double>& priors) {
    std::vector<double> terms;
    for (std::size_t k = 0; k < mus.size(); ++k)
        terms.push_back(std::log(priors[k]) + gaussian_logpdf(z, mus[k], covs[k]));
    const double m = *std::max_element(terms.begin(), terms.end());
    double s = 0.0;
    for (double t : terms) s += std::exp(t - m);
    return m + std::log(s);
}

/// P(ood > id) + 0.5 P(ood == id) over every pair.
inline double auroc(const std::vector<double>& id, const std::vector<double>& ood) {
    double wins = 0.0;
    for (double o : ood)
        for (double i : id) wins += o > i ? 1.0 : (o == i ? 0.5 : 0.0);
    return wins / (static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

/// Tries every observed OoD score as a threshold and keeps the largest one
/// that still flags at least 95% of OoD samples.
inline double fpr95(const std::vector<double>& id, const std::vector<double>& ood) {
    std::set<double> candidates(ood.begin(), ood.end());
    double best = -INFINITY;
    for (double tau : candidates) {
        std::size_t hit = 0;
        for (double o : ood) hit += o >= tau;
        if (20 * hit >= 19 * ood.size()) best = std::max(best, tau);
    }
    std::size_t fp = 0;
    for (double i : id) fp += i >= best;
    return static_cast<double>(fp) / static_cast<double>(id.size());
}

/// Bins (b/B, (b+1)/B]; scans bins for each sample.
inline double ece(const std::vector<double>& confidence, const std::vector<bool>& correct, int bins) {
    std::vector<double> conf_sum(static_cast<std::size_t>(bins), 0.0), acc_sum(conf_sum);
    std::vector<std::size_t> count(static_cast<std::size_t>(bins), 0);
    for (std::size_t s = 0; s < confidence.size(); ++s)
        for (int b = 0; b < bins; ++b) {
            const double lo = static_cast<double>(b) / bins, hi = static_cast<double>(b + 1) / bins;
            if (confidence[s] > lo && confidence[s] <= hi) {
                conf_sum[static_cast<std::size_t>(b)] += confidence[s];
                acc_sum[static_cast<std::size_t>(b)] += correct[s] ? 1.0 : 0.0;
                ++count[static_cast<std::size_t>(b)];
                break;
            }
        }
    double e = 0.0;
    for (std::size_t b = 0; b < count.size(); ++b)
        if (count[b] > 0) e += std::abs(acc_sum[b] - conf_sum[b]) / static_cast<double>(confidence.size());
    return e;
}

/// Relative error with a floor so tiny gradients are compared absolutely.
inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

}  // namespace oracle
