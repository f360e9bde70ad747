#include "ocuq/calibration.hpp"

#include "ocuq/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ocuq {

namespace {

constexpr double kProbFloor = 1e-12;

void check_labels(std::span<const ClassId> labels, Index rows, Index k, const char* where) {
    require_shape(static_cast<Index>(labels.size()) == rows, std::string(where) + ": label count mismatch");
    for (auto y : labels)
        if (static_cast<Index>(y) >= k)
            throw InputError(std::string(where) + ": label " + std::to_string(y) + " out of range");
}

// Bin whose interval (b/B, (b+1)/B] contains conf, with edges computed as k/B.
int bin_of(double conf, int bins) {
    int b = static_cast<int>(std::ceil(conf * bins)) - 1;
    b = std::clamp(b, 0, bins - 1);
    while (b > 0 && conf <= static_cast<double>(b) / bins) --b;
    while (b < bins - 1 && conf > static_cast<double>(b + 1) / bins) ++b;
    return b;
}

// p[label] of softmax(row / t), computed exactly as softmax() does.
double label_prob(const Eigen::Ref<const RowVector>& row, Index label, double t, RowVector& scratch) {
    scratch = row / t;
    scratch.array() -= scratch.maxCoeff();
    scratch = scratch.array().exp().matrix();
    return scratch[label] / scratch.sum();
}

}  // namespace

double nll(const Matrix& probs, std::span<const ClassId> labels) {
    check_labels(labels, probs.rows(), probs.cols(), "nll");
    if (labels.empty()) throw InputError("nll: empty batch");
    double total = 0.0;
    for (Index r = 0; r < probs.rows(); ++r)
        total -= std::log(std::max(probs(r, labels[static_cast<std::size_t>(r)]), kProbFloor));
    return total / static_cast<double>(probs.rows());
}

CalibrationResult ece(const Matrix& probs, std::span<const ClassId> labels, int bins) {
    if (bins < 1) throw InputError("ece: bins must be >= 1");
    check_labels(labels, probs.rows(), probs.cols(), "ece");
    CalibrationResult res;
    res.bins.resize(static_cast<std::size_t>(bins));
    std::vector<double> conf_sum(static_cast<std::size_t>(bins), 0.0);
    std::vector<double> hit_sum(static_cast<std::size_t>(bins), 0.0);
    for (Index r = 0; r < probs.rows(); ++r) {
        Index pred = 0;
        const double conf = probs.row(r).maxCoeff(&pred);
        const auto b = static_cast<std::size_t>(bin_of(conf, bins));
        conf_sum[b] += conf;
        hit_sum[b] += pred == labels[static_cast<std::size_t>(r)] ? 1.0 : 0.0;
        ++res.bins[b].count;
    }
    const double n = static_cast<double>(probs.rows());
    for (int b = 0; b < bins; ++b) {
        auto& bin = res.bins[static_cast<std::size_t>(b)];
        bin.lower = static_cast<double>(b) / bins;
        bin.upper = static_cast<double>(b + 1) / bins;
        if (bin.count == 0) continue;
        const double cnt = static_cast<double>(bin.count);
        bin.confidence = conf_sum[static_cast<std::size_t>(b)] / cnt;
        bin.accuracy = hit_sum[static_cast<std::size_t>(b)] / cnt;
        res.ece += cnt / n * std::abs(bin.accuracy - bin.confidence);
    }
    if (probs.rows() > 0) res.nll = nll(probs, labels);
    return res;
}

Matrix scale_logits(const Matrix& logits, double t) {
    if (!(t > 0.0)) throw InputError("scale_logits: temperature must be positive");
    return softmax(logits / t);
}

Matrix scale_logits(const Matrix& logits, const Vector& temperatures) {
    require_shape(temperatures.size() == logits.rows(), "scale_logits: one temperature per row expected");
    if ((temperatures.array() <= 0.0).any()) throw InputError("scale_logits: temperature must be positive");
    Matrix scaled = logits;
    for (Index r = 0; r < logits.rows(); ++r) scaled.row(r) /= temperatures[r];
    return softmax(scaled);
}

double nll_at_temperature(const Matrix& logits, std::span<const ClassId> labels, double t) {
    if (!(t > 0.0)) throw InputError("nll_at_temperature: temperature must be positive");
    check_labels(labels, logits.rows(), logits.cols(), "nll_at_temperature");
    RowVector scratch(logits.cols());
    double total = 0.0;
    for (Index r = 0; r < logits.rows(); ++r) {
        const double p = label_prob(logits.row(r), labels[static_cast<std::size_t>(r)], t, scratch);
        total -= std::log(std::max(p, kProbFloor));
    }
    return total / static_cast<double>(logits.rows());
}

double fit_temperature(const Matrix& logits, std::span<const ClassId> labels, double t_min, double t_max) {
    if (!(t_min > 0.0 && t_max > t_min)) throw InputError("fit_temperature: need 0 < t_min < t_max");
    check_labels(labels, logits.rows(), logits.cols(), "fit_temperature");
    if (labels.empty()) throw FitError("fit_temperature: no samples");
    if (std::all_of(labels.begin(), labels.end(), [&](ClassId y) { return y == labels[0]; }))
        throw FitError("fit_temperature: only one class present in the labels");

    constexpr int kGrid = 64;
    std::vector<double> grid(kGrid);
    const double log_lo = std::log(t_min);
    const double log_hi = std::log(t_max);
    for (int i = 0; i < kGrid; ++i) grid[static_cast<std::size_t>(i)] = std::exp(log_lo + (log_hi - log_lo) * i / (kGrid - 1));
    grid.front() = t_min;
    grid.back() = t_max;

    int best = 0;
    double best_nll = nll_at_temperature(logits, labels, grid[0]);
    for (int i = 1; i < kGrid; ++i) {
        const double v = nll_at_temperature(logits, labels, grid[static_cast<std::size_t>(i)]);
        if (v < best_nll) {
            best_nll = v;
            best = i;
        }
    }

    double a = grid[static_cast<std::size_t>(std::max(best - 1, 0))];
    double b = grid[static_cast<std::size_t>(std::min(best + 1, kGrid - 1))];
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double fc = nll_at_temperature(logits, labels, c);
    double fd = nll_at_temperature(logits, labels, d);
    while (b - a >= 1e-4) {
        if (fc <= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = nll_at_temperature(logits, labels, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = nll_at_temperature(logits, labels, d);
        }
    }
    const double t_refined = 0.5 * (a + b);
    const double f_refined = nll_at_temperature(logits, labels, t_refined);
    return f_refined <= best_nll ? t_refined : grid[static_cast<std::size_t>(best)];
}

void validate(const CalibrationParams& p) {
    if (!(p.t_min > 0.0 && p.t_min <= p.t_train && p.t_train <= p.t_max))
        throw InputError("calibration params: need 0 < t_min <= t_train <= t_max");
}

double ugts_temperature(const CalibrationParams& p, double u_bar_sample) {
    const double delta = u_bar_sample - p.u_bar_train;
    const double t = p.mode == UgtsMode::additive ? p.t_train + p.lambda * delta : p.t_train * p.lambda * delta;
    return std::clamp(t, p.t_min, p.t_max);
}

Vector ugts_row_temperatures(const CalibrationSet& set, const CalibrationParams& params) {
    require_shape(static_cast<Index>(set.offsets.size()) == set.num_samples() + 1,
                  "CalibrationSet: offsets must have one entry per sample plus one");
    Vector t(set.logits.rows());
    for (Index s = 0; s < set.num_samples(); ++s) {
        const double ts = ugts_temperature(params, set.u_bar[s]);
        const Index lo = set.offsets[static_cast<std::size_t>(s)];
        const Index hi = set.offsets[static_cast<std::size_t>(s) + 1];
        t.segment(lo, hi - lo).setConstant(ts);
    }
    return t;
}

CalibrationResult evaluate_fixed(const CalibrationSet& set, double t, int bins) {
    auto res = ece(scale_logits(set.logits, t), set.labels, bins);
    res.temperature = t;
    return res;
}

CalibrationResult evaluate_ugts(const CalibrationSet& set, const CalibrationParams& params, int bins) {
    const Vector t = ugts_row_temperatures(set, params);
    auto res = ece(scale_logits(set.logits, t), set.labels, bins);
    res.temperature = t.size() > 0 ? t.mean() : params.t_train;
    return res;
}

double tune_lambda(const CalibrationSet& clean, const CalibrationParams& base, std::span<const double> grid,
                   int bins) {
    if (grid.empty()) throw InputError("tune_lambda: empty lambda grid");
    double best_lambda = 0.0;
    double best_ece = 0.0;
    bool first = true;
    for (double lambda : grid) {
        CalibrationParams p = base;
        p.lambda = lambda;
        const double e = evaluate_ugts(clean, p, bins).ece;
        const bool better = first || e < best_ece ||
                            (e == best_ece && (std::abs(lambda) < std::abs(best_lambda) ||
                                               (std::abs(lambda) == std::abs(best_lambda) && lambda < best_lambda)));
        if (better) {
            best_ece = e;
            best_lambda = lambda;
            first = false;
        }
    }
    return best_lambda;
}

std::vector<double> default_lambda_grid() {
    std::vector<double> grid{0.0};
    for (double mag : {1e-3, 2e-3, 5e-3, 1e-2, 2e-2, 5e-2, 1e-1, 2e-1, 5e-1, 1.0}) {
        grid.push_back(mag);
        grid.push_back(-mag);
    }
    return grid;
}

}  // namespace ocuq
