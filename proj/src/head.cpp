#include "ocuq/head.hpp"

#include "ocuq/synthworld.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace ocuq {

void validate(const HeadConfig& c) {
    if (c.num_layers < 2) throw ConfigError("head.num_layers must be >= 2");
    if (c.input_dim < 1 || c.width < 1) throw ConfigError("head dims must be >= 1");
    if (c.num_classes < 2) throw ConfigError("head.num_classes must be >= 2");
    if (c.sn_coefficient <= 0.0) throw ConfigError("head.sn_coefficient must be positive");
}

ResidualMlpHead make_head(const HeadConfig& config, std::uint64_t seed) {
    validate(config);
    Rng rng(seed);
    ResidualMlpHead head;
    head.config = config;
    for (int i = 0; i < config.num_layers; ++i) {
        const Index in = i == 0 ? config.input_dim : config.width;
        head.blocks.push_back(make_linear(in, config.width, rng, config.sn_enabled, config.sn_coefficient));
    }
    head.classifier = make_linear(config.width, config.num_classes, rng, false, 1.0);
    return head;
}

std::int64_t parameter_count(const ResidualMlpHead& head) {
    std::int64_t n = 0;
    for (std::size_t i = 0; i < head.num_linear(); ++i) {
        const auto& l = head.linear(i);
        n += static_cast<std::int64_t>(l.weight.size() + l.bias.size());
    }
    return n;
}

namespace {

struct ForwardTrace {
    Tracked logits;
    Tracked penultimate;
};

ForwardTrace forward_impl(const ResidualMlpHead& head, const Matrix& features, GradTape* tape,
                          double dropout_p, Rng* rng) {
    require_shape(features.cols() == head.config.input_dim,
                  "head_forward: features have " + std::to_string(features.cols()) +
                      " columns, head expects " + std::to_string(head.config.input_dim));
    Tracked x = track_input(features, tape);
    for (std::size_t i = 0; i < head.blocks.size(); ++i) {
        Tracked a = linear_forward(head.blocks[i], static_cast<int>(i), x, tape);
        a = activation_forward(head.config.activation, a, tape);
        if (dropout_p > 0.0) a = dropout_forward(a, dropout_p, *rng, tape);
        x = head.block_has_skip(i) ? add_forward(x, a, tape) : std::move(a);
    }
    ForwardTrace t;
    t.logits = linear_forward(head.classifier, static_cast<int>(head.blocks.size()), x, tape);
    t.penultimate = std::move(x);
    return t;
}

}  // namespace

HeadOutput head_forward(const ResidualMlpHead& head, const Matrix& features) {
    auto t = forward_impl(head, features, nullptr, 0.0, nullptr);
    return {std::move(t.logits.value), std::move(t.penultimate.value)};
}

HeadOutput dropout_forward(const ResidualMlpHead& head, const Matrix& features, double p,
                           std::uint64_t seed) {
    if (!(p >= 0.0 && p < 1.0)) throw InputError("dropout_forward: p must lie in [0, 1)");
    Rng rng(seed);
    auto t = forward_impl(head, features, nullptr, p, &rng);
    return {std::move(t.logits.value), std::move(t.penultimate.value)};
}

TapedForward head_forward_taped(const ResidualMlpHead& head, const Matrix& features, GradTape& tape,
                                double dropout_p, Rng* rng) {
    if (dropout_p > 0.0 && rng == nullptr) throw InputError("head_forward_taped: dropout needs an rng");
    auto t = forward_impl(head, features, &tape, dropout_p, rng);
    TapedForward out;
    out.logits_node = t.logits.node;
    out.output = {std::move(t.logits.value), std::move(t.penultimate.value)};
    return out;
}

HeadGradients head_loss_and_gradients(const ResidualMlpHead& head, const Matrix& features,
                                      std::span<const ClassId> labels) {
    GradTape tape;
    auto fwd = head_forward_taped(head, features, tape);
    auto loss = cross_entropy_loss(fwd.output.logits, labels);
    auto bw = backward(tape, fwd.logits_node, loss.grad, head.num_linear());
    return {loss.loss, std::move(bw.layers)};
}

void freeze_head(ResidualMlpHead& head) {
    for (std::size_t i = 0; i < head.num_linear(); ++i) {
        auto& l = head.linear(i);
        l.weight = l.weight.unaryExpr([](double w) { return round_to_float(w); });
        l.bias = l.bias.unaryExpr([](double b) { return round_to_float(b); });
        if (l.sn_enabled) power_iteration_converged(l.weight, l.sn);
    }
}

TrainLog train_head(ResidualMlpHead& head, const Matrix& features, std::span<const ClassId> labels,
                    OptimizerState& opt, const TrainOptions& options) {
    const Index n = features.rows();
    if (n == 0) throw InputError("train_head: empty dataset");
    require_shape(static_cast<Index>(labels.size()) == n, "train_head: label count != feature rows");
    for (auto y : labels)
        if (static_cast<Index>(y) >= head.config.num_classes)
            throw InputError("train_head: label " + std::to_string(y) + " >= num_classes");
    if (options.batch_size < 1) throw InputError("train_head: batch_size must be >= 1");

    TrainLog log;
    if (options.epochs <= 0) return log;

    Rng rng(options.seed);
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    const Index d = features.cols();
    Matrix batch;
    std::vector<ClassId> batch_labels;
    GradTape tape;

    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(i))]);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (Index start = 0; start < n; start += options.batch_size) {
            const Index m = std::min(options.batch_size, n - start);
            batch.resize(m, d);
            batch_labels.resize(static_cast<std::size_t>(m));
            for (Index r = 0; r < m; ++r) {
                const Index src = order[static_cast<std::size_t>(start + r)];
                batch.row(r) = features.row(src);
                batch_labels[static_cast<std::size_t>(r)] = labels[static_cast<std::size_t>(src)];
            }
            for (auto& block : head.blocks)
                if (block.sn_enabled) power_iteration(block.weight, block.sn, 1);

            auto fwd = head_forward_taped(head, batch, tape);
            auto loss = cross_entropy_loss(fwd.output.logits, batch_labels);
            const auto pred = argmax_rows(fwd.output.logits);
            for (std::size_t r = 0; r < pred.size(); ++r) correct += pred[r] == batch_labels[r];
            loss_sum += loss.loss * static_cast<double>(m);
            auto bw = backward(tape, fwd.logits_node, loss.grad, head.num_linear());

            std::vector<ParamRef> refs;
            refs.reserve(2 * head.num_linear());
            for (std::size_t l = 0; l < head.num_linear(); ++l) {
                refs.push_back(param_ref(head.linear(l).weight, bw.layers[l].weight));
                refs.push_back(param_ref(head.linear(l).bias, bw.layers[l].bias));
            }
            optimizer_step(opt, refs);
        }
        log.epochs.push_back({epoch + 1, loss_sum / static_cast<double>(n),
                              static_cast<double>(correct) / static_cast<double>(n)});
    }
    freeze_head(head);
    return log;
}

namespace {

std::pair<Matrix, std::vector<ClassId>> flatten(const FeatureDataset& dataset) {
    const auto n = static_cast<Index>(dataset.num_voxels());
    if (n == 0) throw InputError("dataset has no voxels");
    Matrix x(n, dataset.config.feature_dim);
    std::vector<ClassId> y;
    y.reserve(static_cast<std::size_t>(n));
    Index row = 0;
    for (const auto& s : dataset.scenes) {
        x.middleRows(row, s.features.rows()) = s.features.cast<double>();
        row += s.features.rows();
        y.insert(y.end(), s.labels.begin(), s.labels.end());
    }
    return {std::move(x), std::move(y)};
}

}  // namespace

TrainLog train_head(ResidualMlpHead& head, const FeatureDataset& dataset, OptimizerState& opt,
                    const TrainOptions& options) {
    if (dataset.scenes.empty()) throw InputError("train_head: empty dataset");
    auto [x, y] = flatten(dataset);
    return train_head(head, x, y, opt, options);
}

double accuracy(const ResidualMlpHead& head, const Matrix& features, std::span<const ClassId> labels) {
    require_shape(static_cast<Index>(labels.size()) == features.rows(), "accuracy: label count mismatch");
    if (labels.empty()) return 0.0;
    const auto pred = argmax_rows(head_forward(head, features).logits);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

LipschitzEstimate estimate_lipschitz(const ResidualMlpHead& head,
                                     std::span<const std::pair<Vector, Vector>> pairs) {
    if (pairs.empty()) throw InputError("estimate_lipschitz: need at least one pair");
    const Index d = head.config.input_dim;
    Matrix a(static_cast<Index>(pairs.size()), d);
    Matrix b(static_cast<Index>(pairs.size()), d);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        require_shape(pairs[i].first.size() == d && pairs[i].second.size() == d,
                      "estimate_lipschitz: probe dimension mismatch");
        a.row(static_cast<Index>(i)) = pairs[i].first.transpose();
        b.row(static_cast<Index>(i)) = pairs[i].second.transpose();
    }
    const Matrix fa = head_forward(head, a).penultimate;
    const Matrix fb = head_forward(head, b).penultimate;
    LipschitzEstimate est;
    bool first = true;
    for (Index i = 0; i < a.rows(); ++i) {
        const double din = (a.row(i) - b.row(i)).norm();
        if (din == 0.0) {
            ++est.skipped;
            continue;
        }
        const double r = (fa.row(i) - fb.row(i)).norm() / din;
        est.lower = first ? r : std::min(est.lower, r);
        est.upper = first ? r : std::max(est.upper, r);
        first = false;
        ++est.samples;
    }
    return est;
}

double lipschitz_upper_bound(const ResidualMlpHead& head) {
    double bound = 1.0;
    for (std::size_t i = 0; i < head.blocks.size(); ++i) {
        const auto& l = head.blocks[i];
        double w;
        if (l.sn_enabled) {
            SpectralState s = l.sn;
            w = std::min(l.sn_coefficient, power_iteration_converged(l.weight, s));
        } else {
            SpectralState s = l.sn;
            w = power_iteration_converged(l.weight, s);
        }
        bound *= head.block_has_skip(i) ? 1.0 + w : w;
    }
    return bound;
}

}  // namespace ocuq
