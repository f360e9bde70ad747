#include "ocuq/nn.hpp"

#include <algorithm>
#include <string>

namespace ocuq {

LossResult cross_entropy_loss(const Matrix& logits, std::span<const ClassId> labels) {
    const Index n = logits.rows();
    const Index k = logits.cols();
    require_shape(static_cast<Index>(labels.size()) == n, "cross_entropy_loss: label count != rows");
    if (n == 0) throw InputError("cross_entropy_loss: empty batch");
    for (auto y : labels) {
        if (static_cast<Index>(y) >= k)
            throw InputError("cross_entropy_loss: label " + std::to_string(y) + " out of range");
    }
    const Matrix logp = log_softmax(logits);
    LossResult out;
    out.grad = logp.array().exp().matrix();
    double total = 0.0;
    for (Index r = 0; r < n; ++r) {
        const Index y = labels[static_cast<std::size_t>(r)];
        total -= logp(r, y);
        out.grad(r, y) -= 1.0;
    }
    out.loss = total / static_cast<double>(n);
    out.grad /= static_cast<double>(n);
    return out;
}

// ---------------------------------------------------------------------------

SpectralState init_spectral_state(Index out, Index in, Rng& rng) {
    SpectralState s;
    s.u.resize(out);
    s.v.resize(in);
    for (Index i = 0; i < out; ++i) s.u[i] = rng.normal();
    for (Index i = 0; i < in; ++i) s.v[i] = rng.normal();
    s.u.normalize();
    s.v.normalize();
    return s;
}

double power_iteration(const Matrix& weight, SpectralState& state, int iters) {
    require_shape(state.u.size() == weight.rows() && state.v.size() == weight.cols(),
                  "power_iteration: state does not match weight shape");
    if (weight.isZero(0.0)) return 0.0;
    for (int i = 0; i < iters; ++i) {
        Vector v = weight.transpose() * state.u;
        const double nv = v.norm();
        if (nv == 0.0) break;  // u orthogonal to range(W); keep previous state
        v /= nv;
        Vector u = weight * v;
        const double nu = u.norm();
        if (nu == 0.0) break;
        state.v = v;
        state.u = u / nu;
    }
    state.sigma_hat = state.u.dot(weight * state.v);
    return state.sigma_hat;
}

double power_iteration_converged(const Matrix& weight, SpectralState& state, int max_iters,
                                 double rel_tol) {
    double prev = power_iteration(weight, state, 1);
    for (int i = 1; i < max_iters; ++i) {
        const double cur = power_iteration(weight, state, 1);
        if (std::abs(cur - prev) <= rel_tol * std::max(1.0, std::abs(cur))) return cur;
        prev = cur;
    }
    return prev;
}

LinearLayer make_linear(Index in, Index out, Rng& rng, bool sn_enabled, double sn_coefficient) {
    if (sn_coefficient <= 0.0) throw InputError("make_linear: sn_coefficient must be positive");
    LinearLayer layer;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    layer.weight.resize(out, in);
    for (Index i = 0; i < layer.weight.size(); ++i)
        layer.weight.data()[i] = round_to_float(rng.uniform(-bound, bound));
    layer.bias.resize(out);
    for (Index i = 0; i < out; ++i) layer.bias[i] = round_to_float(rng.uniform(-bound, bound));
    layer.sn = init_spectral_state(out, in, rng);
    layer.sn_enabled = sn_enabled;
    layer.sn_coefficient = sn_coefficient;
    return layer;
}

Matrix apply_spectral_norm(LinearLayer& layer, SnMode mode) {
    if (mode == SnMode::training)
        power_iteration(layer.weight, layer.sn, 1);
    else
        power_iteration_converged(layer.weight, layer.sn);
    const double sigma = layer.sn.sigma_hat;
    const double scale = sigma > 0.0 ? std::min(1.0, layer.sn_coefficient / sigma) : 1.0;
    return layer.weight * scale;
}

double spectral_scale(const LinearLayer& layer) {
    if (!layer.sn_enabled) return 1.0;
    const double sigma = layer.sn.u.dot(layer.weight * layer.sn.v);
    return sigma > layer.sn_coefficient ? layer.sn_coefficient / sigma : 1.0;
}

Matrix effective_weight(const LinearLayer& layer) {
    if (!layer.sn_enabled) return layer.weight;
    return layer.weight * spectral_scale(layer);
}

Matrix linear_forward(const LinearLayer& layer, const Matrix& x) {
    require_shape(x.cols() == layer.in_dim(),
                  "linear_forward: input has " + std::to_string(x.cols()) + " columns, layer expects " +
                      std::to_string(layer.in_dim()));
    Matrix y = x * effective_weight(layer).transpose();
    y.rowwise() += layer.bias.transpose();
    require_finite(y, "linear_forward");
    return y;
}

Matrix activate(Activation act, const Matrix& x) {
    if (act == Activation::identity) return x;
    return x.unaryExpr([](double t) { return t > 0.0 ? t : kLeakySlope * t; });
}

// ---------------------------------------------------------------------------

int GradTape::new_node(Index rows, Index cols) {
    shapes_.emplace_back(rows, cols);
    return static_cast<int>(shapes_.size()) - 1;
}

void GradTape::clear() {
    ops_.clear();
    shapes_.clear();
}

Tracked track_input(const Matrix& x, GradTape* tape) {
    Tracked t{x, -1};
    if (tape) t.node = tape->new_node(x.rows(), x.cols());
    return t;
}

Tracked linear_forward(const LinearLayer& layer, int layer_index, const Tracked& x, GradTape* tape) {
    require_shape(x.value.cols() == layer.in_dim(), "linear_forward: input width mismatch");
    TapeOp op;
    op.kind = TapeOp::Kind::linear;
    if (layer.sn_enabled) {
        op.sigma = layer.sn.u.dot(layer.weight * layer.sn.v);
        op.sn_clipped = op.sigma > layer.sn_coefficient;
        op.sn_scale = op.sn_clipped ? layer.sn_coefficient / op.sigma : 1.0;
    }
    Matrix w_eff = op.sn_scale == 1.0 ? layer.weight : Matrix(layer.weight * op.sn_scale);
    Tracked y;
    y.value.noalias() = x.value * w_eff.transpose();
    y.value.rowwise() += layer.bias.transpose();
    require_finite(y.value, "linear_forward");
    if (tape) {
        y.node = tape->new_node(y.value.rows(), y.value.cols());
        op.input = x.node;
        op.output = y.node;
        op.layer = layer_index;
        op.layer_ref = &layer;
        op.cache = x.value;
        op.weight_eff = std::move(w_eff);
        tape->record(std::move(op));
    }
    return y;
}

Tracked activation_forward(Activation act, const Tracked& x, GradTape* tape) {
    Tracked y{activate(act, x.value), -1};
    if (tape) {
        y.node = tape->new_node(y.value.rows(), y.value.cols());
        TapeOp op;
        op.kind = TapeOp::Kind::activation;
        op.input = x.node;
        op.output = y.node;
        op.act = act;
        op.cache = x.value;
        tape->record(std::move(op));
    }
    return y;
}

Tracked add_forward(const Tracked& a, const Tracked& b, GradTape* tape) {
    require_shape(a.value.rows() == b.value.rows() && a.value.cols() == b.value.cols(),
                  "add_forward: operand shapes differ");
    Tracked y{a.value + b.value, -1};
    if (tape) {
        y.node = tape->new_node(y.value.rows(), y.value.cols());
        TapeOp op;
        op.kind = TapeOp::Kind::add;
        op.input = a.node;
        op.input2 = b.node;
        op.output = y.node;
        tape->record(std::move(op));
    }
    return y;
}

Tracked dropout_forward(const Tracked& x, double p, Rng& rng, GradTape* tape) {
    if (!(p >= 0.0 && p < 1.0)) throw InputError("dropout: p must lie in [0, 1)");
    if (p == 0.0) {
        Tracked y{x.value, x.node};
        return y;
    }
    const double keep_scale = 1.0 / (1.0 - p);
    Matrix mask(x.value.rows(), x.value.cols());
    for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.bernoulli(p) ? 0.0 : keep_scale;
    Tracked y{x.value.cwiseProduct(mask), -1};
    if (tape) {
        y.node = tape->new_node(y.value.rows(), y.value.cols());
        TapeOp op;
        op.kind = TapeOp::Kind::dropout;
        op.input = x.node;
        op.output = y.node;
        op.cache = std::move(mask);
        tape->record(std::move(op));
    }
    return y;
}

namespace {

void accumulate(std::vector<Matrix>& grads, int node, const Matrix& g) {
    if (node < 0) return;
    auto& slot = grads[static_cast<std::size_t>(node)];
    if (slot.size() == 0)
        slot = g;
    else
        slot += g;
}

}  // namespace

BackwardResult backward(GradTape& tape, int output_node, const Matrix& output_grad,
                        std::size_t num_layers) {
    if (tape.empty()) throw StateError("backward called without a recorded forward pass");
    if (output_node < 0 || static_cast<std::size_t>(output_node) >= tape.num_nodes())
        throw StateError("backward: output node is not on the tape");
    const auto [rows, cols] = tape.shape(output_node);
    require_shape(output_grad.rows() == rows && output_grad.cols() == cols,
                  "backward: upstream gradient shape mismatch");

    BackwardResult result;
    result.layers.resize(num_layers);
    for (const auto& op : tape.ops()) {
        if (op.kind != TapeOp::Kind::linear) continue;
        if (op.layer < 0 || static_cast<std::size_t>(op.layer) >= num_layers)
            throw StateError("backward: layer index out of range");
        auto& lg = result.layers[static_cast<std::size_t>(op.layer)];
        if (lg.weight.size() == 0) {
            lg.weight = Matrix::Zero(op.layer_ref->out_dim(), op.layer_ref->in_dim());
            lg.bias = Vector::Zero(op.layer_ref->out_dim());
        }
    }

    std::vector<Matrix> grads(tape.num_nodes());
    grads[static_cast<std::size_t>(output_node)] = output_grad;
    const auto& ops = tape.ops();
    for (std::size_t k = ops.size(); k-- > 0;) {
        const TapeOp& op = ops[k];
        result.visit_order.push_back(k);
        const Matrix& gy = grads[static_cast<std::size_t>(op.output)];
        if (gy.size() == 0) continue;  // output does not reach the loss
        switch (op.kind) {
            case TapeOp::Kind::linear: {
                auto& lg = result.layers[static_cast<std::size_t>(op.layer)];
                const Matrix g_eff = gy.transpose() * op.cache;  // dL/dW_eff
                if (op.sn_clipped) {
                    // W_eff = c W / sigma, sigma = u^T W v with u, v fixed.
                    const auto& raw = op.layer_ref->weight;
                    const double inner = g_eff.cwiseProduct(raw).sum();
                    const Matrix uv = op.layer_ref->sn.u * op.layer_ref->sn.v.transpose();
                    lg.weight += op.sn_scale * g_eff - (op.sn_scale * inner / op.sigma) * uv;
                } else {
                    lg.weight += g_eff;
                }
                lg.bias += gy.colwise().sum().transpose();
                if (op.input >= 0) accumulate(grads, op.input, gy * op.weight_eff);
                break;
            }
            case TapeOp::Kind::activation: {
                if (op.act == Activation::identity) {
                    accumulate(grads, op.input, gy);
                } else {
                    const Matrix d = op.cache.unaryExpr(
                        [](double t) { return t > 0.0 ? 1.0 : kLeakySlope; });
                    accumulate(grads, op.input, gy.cwiseProduct(d));
                }
                break;
            }
            case TapeOp::Kind::add:
                accumulate(grads, op.input, gy);
                accumulate(grads, op.input2, gy);
                break;
            case TapeOp::Kind::dropout:
                accumulate(grads, op.input, gy.cwiseProduct(op.cache));
                break;
        }
    }
    tape.clear();
    return result;
}

// ---------------------------------------------------------------------------

void optimizer_step(OptimizerState& state, std::span<ParamRef> params) {
    const auto& cfg = state.config;
    if (state.first.empty()) {
        for (const auto& p : params) {
            state.first.push_back(Vector::Zero(p.value.size()));
            if (cfg.kind == OptimizerKind::adam) state.second.push_back(Vector::Zero(p.value.size()));
        }
    }
    if (state.first.size() != params.size())
        throw ShapeError("optimizer_step: parameter count changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].value.size() != params[i].grad.size() ||
            state.first[i].size() != params[i].value.size())
            throw ShapeError("optimizer_step: shape mismatch for parameter " + std::to_string(i));
    }
    ++state.step;
    if (cfg.kind == OptimizerKind::sgd_momentum) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& buf = state.first[i];
            buf = cfg.momentum * buf + params[i].grad;
            params[i].value -= cfg.learning_rate * buf;
        }
        return;
    }
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& m = state.first[i];
        auto& v = state.second[i];
        const auto& g = params[i].grad;
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
        params[i].value.array() -=
            cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
    }
}

}  // namespace ocuq
