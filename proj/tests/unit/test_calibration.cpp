#include "ocuq/calibration.hpp"
#include "ocuq/nn.hpp"

#include "../support/oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

using namespace ocuq;

namespace {

/// Labels drawn from softmax(logits), so t = 1 is the NLL-optimal temperature.
std::vector<ClassId> sample_labels(const Matrix& logits, std::uint64_t seed) {
    Rng rng(seed);
    const Matrix p = softmax(logits);
    std::vector<ClassId> y(static_cast<std::size_t>(p.rows()));
    for (Index r = 0; r < p.rows(); ++r) {
        double u = rng.uniform(), acc = 0.0;
        Index k = 0;
        for (; k < p.cols() - 1; ++k) {
            acc += p(r, k);
            if (u < acc) break;
        }
        y[static_cast<std::size_t>(r)] = static_cast<ClassId>(k);
    }
    return y;
}

CalibrationSet make_set(const Matrix& logits, std::vector<ClassId> labels, std::vector<Index> sizes, Vector u_bar) {
    CalibrationSet s;
    s.logits = logits;
    s.labels = std::move(labels);
    s.offsets.push_back(0);
    for (Index n : sizes) s.offsets.push_back(s.offsets.back() + n);
    s.u_bar = std::move(u_bar);
    return s;
}

}  // namespace

TEST_CASE("nll") {
    std::vector<ClassId> y{0, 1};
    CHECK(nll(Matrix::Identity(2, 2), y) == 0.0);
    Matrix p(2, 2);
    p << std::exp(-1.0), 1 - std::exp(-1.0), 1 - std::exp(-1.0), std::exp(-1.0);
    CHECK(nll(p, y) == doctest::Approx(1.0).epsilon(1e-15));

    Matrix mixed(4, 3);
    mixed << 0.7, 0.2, 0.1, 0.1, 0.6, 0.3, 0.25, 0.25, 0.5, 0.05, 0.9, 0.05;
    std::vector<ClassId> ym{0, 2, 2, 0};
    // Frozen from numpy: -mean(log(p[i, y_i])).
    CHECK(std::abs(nll(mixed, ym) - 1.3123818005946513) < 1e-12);
}

TEST_CASE("ece hand cases") {
    std::vector<ClassId> y{0, 1, 2};
    CHECK(ece(Matrix::Identity(3, 3), y).ece == 0.0);

    Matrix p(2, 2);
    p << 0.8, 0.2, 0.8, 0.2;
    std::vector<ClassId> y2{0, 1};
    const auto r = ece(p, y2, 15);
    CHECK(r.ece == doctest::Approx(0.3).epsilon(1e-14));
    int occupied = 0;
    for (const auto& b : r.bins) occupied += b.count > 0;
    CHECK(occupied == 1);
}

TEST_CASE("ece against binning oracle") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Matrix logits = oracle::random_matrix(300, 6, seed, 2.5);
        const Matrix p = softmax(logits);
        const auto y = sample_labels(logits * 0.5, seed + 100);
        std::vector<double> conf;
        std::vector<bool> correct;
        for (Index r = 0; r < p.rows(); ++r) {
            Index k = 0;
            conf.push_back(p.row(r).maxCoeff(&k));
            correct.push_back(k == y[static_cast<std::size_t>(r)]);
        }
        CHECK(std::abs(ece(p, y).ece - oracle::ece(conf, correct, 15)) < 1e-12);
        // Sample order does not matter.
        Matrix rev = p.colwise().reverse();
        std::vector<ClassId> yr(y.rbegin(), y.rend());
        CHECK(std::abs(ece(rev, yr).ece - ece(p, y).ece) < 1e-12);
    }
}

TEST_CASE("fit temperature recovers the generating scale") {
    const Matrix logits = oracle::random_matrix(20000, 5, 3, 1.5);
    const auto y = sample_labels(logits, 4);
    const double t1 = fit_temperature(logits, y);
    CHECK(std::abs(t1 - 1.0) < 0.05);
    const double t10 = fit_temperature(logits * 10.0, y);
    CHECK(std::abs(t10 - 10.0) < 1.0);
    CHECK(nll_at_temperature(logits * 10.0, y, t10) <= nll_at_temperature(logits * 10.0, y, 1.0));

    // Never worse than any grid point.
    const double lo = std::log(0.05), hi = std::log(20.0);
    for (int i = 0; i < 64; ++i) {
        const double t = std::exp(lo + (hi - lo) * i / 63);
        CHECK(nll_at_temperature(logits * 10.0, y, t10) <= nll_at_temperature(logits * 10.0, y, t) + 1e-15);
    }
}

TEST_CASE("fit temperature rejects a single class") {
    std::vector<ClassId> y(10, 2);
    CHECK_THROWS_AS(fit_temperature(oracle::random_matrix(10, 4, 1), y), FitError);
}

TEST_CASE("nll at temperature matches materialized probabilities") {
    const Matrix logits = oracle::random_matrix(50, 4, 8, 3.0);
    const auto y = sample_labels(logits, 9);
    for (double t : {0.3, 1.0, 4.0})
        CHECK(std::abs(nll_at_temperature(logits, y, t) - nll(scale_logits(logits, t), y)) < 1e-12);
}

TEST_CASE("ugts temperature") {
    CalibrationParams p;
    p.t_train = 1.2;
    p.lambda = 0.25;
    p.u_bar_train = 3.0;
    CHECK(ugts_temperature(p, 3.0) == 1.2);
    CHECK(ugts_temperature(p, 5.0) == doctest::Approx(1.7).epsilon(1e-15));
    p.mode = UgtsMode::multiplicative;
    CHECK(ugts_temperature(p, 5.0) == doctest::Approx(0.6).epsilon(1e-15));
    // The multiplicative rule collapses to the lower clamp at zero offset.
    CHECK(ugts_temperature(p, 3.0) == p.t_min);
    p.mode = UgtsMode::additive;
    p.lambda = 0.0;
    CHECK(ugts_temperature(p, 100.0) == 1.2);
    p.lambda = 100.0;
    CHECK(ugts_temperature(p, 100.0) == p.t_max);
}

TEST_CASE("tune lambda") {
    const Matrix logits = oracle::random_matrix(400, 5, 11, 3.0);
    const auto y = sample_labels(logits * 0.4, 12);
    Vector u(4);
    u << 1.0, 2.0, 3.5, 0.5;
    const auto set = make_set(logits, y, {100, 100, 100, 100}, u);
    CalibrationParams base;
    base.t_train = fit_temperature(logits, y);
    base.u_bar_train = 1.5;

    SUBCASE("grid {0} is plain TS") {
        std::vector<double> g{0.0};
        CHECK(tune_lambda(set, base, g) == 0.0);
        CalibrationParams p = base;
        p.lambda = 0.0;
        const auto a = evaluate_ugts(set, p), b = evaluate_fixed(set, base.t_train);
        CHECK(a.ece == b.ece);
        CHECK(a.nll == b.nll);
    }
    SUBCASE("constant uncertainty ties to zero") {
        auto flat = set;
        flat.u_bar.setConstant(base.u_bar_train);
        const auto grid = default_lambda_grid();
        CHECK(tune_lambda(flat, base, grid) == 0.0);
    }
    SUBCASE("tuned lambda never loses to zero") {
        const auto grid = default_lambda_grid();
        CalibrationParams p = base;
        p.lambda = tune_lambda(set, base, grid);
        CalibrationParams z = base;
        z.lambda = 0.0;
        CHECK(evaluate_ugts(set, p).ece <= evaluate_ugts(set, z).ece);
    }
    SUBCASE("empty grid") {
        std::vector<double> g;
        CHECK_THROWS_AS(tune_lambda(set, base, g), InputError);
    }
}

TEST_CASE("scale logits") {
    const Matrix z = oracle::random_matrix(10, 6, 2, 2.0);
    CHECK(scale_logits(z, 1.0) == softmax(z));
    const Matrix hot = scale_logits(z, 1e6);
    CHECK((hot.array() - 1.0 / 6).abs().maxCoeff() < 1e-5);
    for (double t : {0.05, 0.5, 3.0, 20.0}) CHECK(argmax_rows(scale_logits(z, t)) == argmax_rows(z));
    CHECK_THROWS_AS(scale_logits(z, 0.0), InputError);
    CHECK_THROWS_AS(scale_logits(z, -1.0), InputError);
}
