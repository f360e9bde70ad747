#pragma once

#include "ocuq/core.hpp"
#include "ocuq/rng.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace ocuq {

// ---------------------------------------------------------------------------
// Softmax family. Templated so they accept any Eigen expression.

/// Row-wise softmax with max-subtraction.
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
    using Scalar = typename Derived::Scalar;
    MatrixX<Scalar> out = logits;
    for (Index r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        row.array() -= row.maxCoeff();
        row = row.array().exp().matrix();
        row /= row.sum();
    }
    return out;
}

/// Row-wise log-softmax, ln p = z - max - ln sum exp(z - max).
template <typename Derived>
MatrixX<typename Derived::Scalar> log_softmax(const Eigen::MatrixBase<Derived>& logits) {
    using Scalar = typename Derived::Scalar;
    MatrixX<Scalar> out = logits;
    for (Index r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        row.array() -= row.maxCoeff();
        row.array() -= std::log(row.array().exp().sum());
    }
    return out;
}

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& v) {
    const auto m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.derived().array() - m).exp().sum());
}

/// Row-wise argmax; first index wins on ties.
template <typename Derived>
std::vector<ClassId> argmax_rows(const Eigen::MatrixBase<Derived>& m) {
    std::vector<ClassId> out(static_cast<std::size_t>(m.rows()));
    for (Index r = 0; r < m.rows(); ++r) {
        Index best = 0;
        m.row(r).maxCoeff(&best);
        out[static_cast<std::size_t>(r)] = static_cast<ClassId>(best);
    }
    return out;
}

struct LossResult {
    double loss = 0.0;
    Matrix grad;  // d loss / d logits
};

/// Mean cross-entropy; grad = (softmax - onehot) / n.
LossResult cross_entropy_loss(const Matrix& logits, std::span<const ClassId> labels);

// ---------------------------------------------------------------------------
// Linear layers and spectral normalization.

/// Persistent power-iteration vectors for one weight matrix.
struct SpectralState {
    Vector u;  // left singular estimate, length out
    Vector v;  // right singular estimate, length in
    double sigma_hat = 0.0;
};

SpectralState init_spectral_state(Index out, Index in, Rng& rng);

/// Runs `iters` alternating updates v <- W^T u / |.|, u <- W v / |.| and
/// returns sigma_hat = u^T W v. An all-zero W returns 0 and leaves state as is.
double power_iteration(const Matrix& weight, SpectralState& state, int iters);

/// Iterates until sigma_hat changes by less than `rel_tol` (relative) or
/// `max_iters` is reached.
double power_iteration_converged(const Matrix& weight, SpectralState& state,
                                 int max_iters = 5000, double rel_tol = 1e-14);

struct LinearLayer {
    Matrix weight;  // out x in
    Vector bias;    // out
    SpectralState sn;
    bool sn_enabled = false;
    double sn_coefficient = 1.0;

    Index in_dim() const { return weight.cols(); }
    Index out_dim() const { return weight.rows(); }
};

/// Uniform(-1/sqrt(in), 1/sqrt(in)) init for weights and bias, rounded to
/// f32 so a freshly built layer survives the f32 artifact format unchanged.
LinearLayer make_linear(Index in, Index out, Rng& rng, bool sn_enabled = false,
                        double sn_coefficient = 1.0);

enum class SnMode { training, evaluation };

/// Refreshes the spectral estimate (one step in training, to convergence in
/// evaluation) and returns W * min(1, c / sigma_hat). The raw weight is kept.
Matrix apply_spectral_norm(LinearLayer& layer, SnMode mode);

/// min(1, c / sigma) with sigma = u^T W v from the current state; 1 when SN is off.
double spectral_scale(const LinearLayer& layer);

/// The weight actually used in the forward pass.
Matrix effective_weight(const LinearLayer& layer);

/// y = x W_eff^T + b.
Matrix linear_forward(const LinearLayer& layer, const Matrix& x);

enum class Activation { leaky_relu, identity };

inline constexpr double kLeakySlope = 0.01;

Matrix activate(Activation act, const Matrix& x);

// ---------------------------------------------------------------------------
// Tape-based reverse mode over MLP graphs.

struct TapeOp {
    enum class Kind { linear, activation, add, dropout };
    Kind kind = Kind::linear;
    int input = -1;
    int input2 = -1;
    int output = -1;
    int layer = -1;
    const LinearLayer* layer_ref = nullptr;
    Activation act = Activation::identity;
    Matrix cache;       // linear: input x, activation: pre-activation, dropout: scaled mask
    Matrix weight_eff;  // linear only
    double sn_scale = 1.0;
    double sigma = 0.0;
    bool sn_clipped = false;
};

class GradTape {
public:
    int new_node(Index rows, Index cols);
    void record(TapeOp op) { ops_.push_back(std::move(op)); }
    bool empty() const { return ops_.empty(); }
    void clear();

    const std::vector<TapeOp>& ops() const { return ops_; }
    std::size_t num_nodes() const { return shapes_.size(); }
    std::pair<Index, Index> shape(int node) const { return shapes_[static_cast<std::size_t>(node)]; }

private:
    std::vector<TapeOp> ops_;
    std::vector<std::pair<Index, Index>> shapes_;
};

/// A value flowing through the graph plus its tape node id (-1 if untracked).
struct Tracked {
    Matrix value;
    int node = -1;
};

Tracked track_input(const Matrix& x, GradTape* tape);
Tracked linear_forward(const LinearLayer& layer, int layer_index, const Tracked& x, GradTape* tape);
Tracked activation_forward(Activation act, const Tracked& x, GradTape* tape);
Tracked add_forward(const Tracked& a, const Tracked& b, GradTape* tape);

/// Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
Tracked dropout_forward(const Tracked& x, double p, Rng& rng, GradTape* tape);

struct LayerGrads {
    Matrix weight;
    Vector bias;
};

struct BackwardResult {
    std::vector<LayerGrads> layers;      // indexed by layer index
    std::vector<std::size_t> visit_order;  // tape op indices in visitation order
};

/// Propagates `output_grad` from `output_node` back through the tape and
/// clears it. Gradients w.r.t. raw weights include the spectral-norm chain
/// rule with u, v held fixed.
BackwardResult backward(GradTape& tape, int output_node, const Matrix& output_grad,
                        std::size_t num_layers);

// ---------------------------------------------------------------------------
// Optimizers.

enum class OptimizerKind { sgd_momentum, adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 1e-3;
    double momentum = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct OptimizerState {
    OptimizerConfig config;
    std::int64_t step = 0;
    std::vector<Vector> first;   // momentum buffer or Adam m
    std::vector<Vector> second;  // Adam v
};

struct ParamRef {
    Eigen::Map<Vector> value;
    Eigen::Map<const Vector> grad;
};

inline ParamRef param_ref(Matrix& value, const Matrix& grad) {
    require_shape(value.rows() == grad.rows() && value.cols() == grad.cols(),
                  "parameter/gradient shape mismatch");
    return {Eigen::Map<Vector>(value.data(), value.size()),
            Eigen::Map<const Vector>(grad.data(), grad.size())};
}
inline ParamRef param_ref(Vector& value, const Vector& grad) {
    require_shape(value.size() == grad.size(), "parameter/gradient shape mismatch");
    return {Eigen::Map<Vector>(value.data(), value.size()),
            Eigen::Map<const Vector>(grad.data(), grad.size())};
}

void optimizer_step(OptimizerState& state, std::span<ParamRef> params);

}  // namespace ocuq
