#pragma once

#include "ocuq/core.hpp"
#include "ocuq/nn.hpp"

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace ocuq {

struct FeatureDataset;

struct HeadConfig {
    Index input_dim = 32;
    Index width = 32;  // also the penultimate feature dimension
    int num_layers = 5;
    bool skip = true;
    bool sn_enabled = true;
    double sn_coefficient = 1.0;
    Index num_classes = 17;
    Activation activation = Activation::leaky_relu;

    Index penultimate_dim() const { return width; }
};

void validate(const HeadConfig& config);

/// Residual MLP head: `num_layers` hidden blocks followed by a linear classifier.
///
/// Block i computes a = act(x W_i^T + b_i) and outputs x + a when skip is on and
/// the block preserves width, otherwise a. The first block projects
/// input_dim -> width and therefore only carries a skip when they match.
struct ResidualMlpHead {
    HeadConfig config;
    std::vector<LinearLayer> blocks;
    LinearLayer classifier;

    bool block_has_skip(std::size_t i) const {
        return config.skip && blocks[i].in_dim() == blocks[i].out_dim();
    }
    /// blocks.size() + 1; the classifier uses the last index.
    std::size_t num_linear() const { return blocks.size() + 1; }
    LinearLayer& linear(std::size_t i) { return i < blocks.size() ? blocks[i] : classifier; }
    const LinearLayer& linear(std::size_t i) const { return i < blocks.size() ? blocks[i] : classifier; }
};

ResidualMlpHead make_head(const HeadConfig& config, std::uint64_t seed);

std::int64_t parameter_count(const ResidualMlpHead& head);

struct HeadOutput {
    Matrix logits;
    Matrix penultimate;
};

HeadOutput head_forward(const ResidualMlpHead& head, const Matrix& features);

/// MC-dropout pass: every hidden activation is dropped with probability p.
HeadOutput dropout_forward(const ResidualMlpHead& head, const Matrix& features, double p,
                           std::uint64_t seed);

/// Forward pass recorded on `tape`; returns the logits' node id alongside the output.
struct TapedForward {
    HeadOutput output;
    int logits_node = -1;
};
TapedForward head_forward_taped(const ResidualMlpHead& head, const Matrix& features, GradTape& tape,
                                double dropout_p = 0.0, Rng* rng = nullptr);

struct HeadGradients {
    double loss = 0.0;
    std::vector<LayerGrads> layers;  // aligned with ResidualMlpHead::linear(i)
};

/// Cross-entropy loss and its gradient w.r.t. every raw parameter.
HeadGradients head_loss_and_gradients(const ResidualMlpHead& head, const Matrix& features,
                                      std::span<const ClassId> labels);

struct TrainOptions {
    int epochs = 8;
    Index batch_size = 256;
    std::uint64_t seed = 42;
};

struct EpochStats {
    int epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;
};

struct TrainLog {
    std::vector<EpochStats> epochs;
};

/// Minibatch cross-entropy training. With SN enabled the power iteration is
/// stepped once per batch. After the last epoch the head is frozen: weights
/// are rounded to f32 and the spectral estimates iterated to convergence.
/// `epochs == 0` leaves the head untouched.
TrainLog train_head(ResidualMlpHead& head, const Matrix& features, std::span<const ClassId> labels,
                    OptimizerState& opt, const TrainOptions& options);
TrainLog train_head(ResidualMlpHead& head, const FeatureDataset& dataset, OptimizerState& opt,
                    const TrainOptions& options);

/// Rounds weights to f32 precision and converges every spectral estimate.
void freeze_head(ResidualMlpHead& head);

double accuracy(const ResidualMlpHead& head, const Matrix& features, std::span<const ClassId> labels);

struct LipschitzEstimate {
    double lower = 0.0;  // min observed ratio
    double upper = 0.0;  // max observed ratio
    std::size_t samples = 0;
    std::size_t skipped = 0;  // coincident pairs
};

/// Ratios |phi(x1) - phi(x2)| / |x1 - x2| over penultimate features phi.
LipschitzEstimate estimate_lipschitz(const ResidualMlpHead& head,
                                     std::span<const std::pair<Vector, Vector>> pairs);

/// Product over hidden blocks of (1 + s) for residual blocks and s otherwise,
/// where s = min(c, sigma) is the block's spectral norm after rescaling.
/// Never exceeds the product of (1 + c).
double lipschitz_upper_bound(const ResidualMlpHead& head);

}  // namespace ocuq
