#include "ocuq/uncertainty.hpp"

#include "ocuq/gda.hpp"
#include "ocuq/head.hpp"
#include "ocuq/nn.hpp"
#include "ocuq/rng.hpp"

#include <cmath>

namespace ocuq {

namespace {

void check_distributions(const Matrix& probs, const char* where) {
    for (Index r = 0; r < probs.rows(); ++r) {
        if ((probs.row(r).array() < 0.0).any())
            throw InputError(std::string(where) + ": negative probability in row " + std::to_string(r));
        if (std::abs(probs.row(r).sum() - 1.0) > 1e-6)
            throw InputError(std::string(where) + ": row " + std::to_string(r) + " does not sum to 1");
    }
}

}  // namespace

Vector softmax_entropy(const Matrix& probs) {
    check_distributions(probs, "softmax_entropy");
    Vector h(probs.rows());
    for (Index r = 0; r < probs.rows(); ++r) {
        double s = 0.0;
        for (Index k = 0; k < probs.cols(); ++k) {
            const double p = probs(r, k);
            if (p > 0.0) s -= p * std::log(p);
        }
        h[r] = std::max(s, 0.0);
    }
    return h;
}

Vector max_softmax_score(const Matrix& probs) {
    Vector s(probs.rows());
    for (Index r = 0; r < probs.rows(); ++r) s[r] = 1.0 - probs.row(r).maxCoeff();
    return s;
}

EnsemblePrediction ensemble_predict(std::span<const ResidualMlpHead* const> members,
                                    const EnsembleSpec& spec, const Matrix& features) {
    if (spec.n < 2) throw InputError("ensemble_predict: n must be >= 2");
    EnsemblePrediction out;
    if (spec.kind == EnsembleKind::deep_ensemble) {
        if (static_cast<int>(members.size()) < spec.n)
            throw InputError("ensemble_predict: " + std::to_string(spec.n) + " members requested, " +
                             std::to_string(members.size()) + " available");
        for (int i = 0; i < spec.n; ++i)
            out.member_probs.push_back(softmax(head_forward(*members[static_cast<std::size_t>(i)], features).logits));
    } else {
        if (members.empty()) throw InputError("ensemble_predict: mc-dropout needs a head");
        if (!(spec.dropout_p >= 0.0 && spec.dropout_p < 1.0))
            throw InputError("ensemble_predict: dropout p must lie in [0, 1)");
        for (int i = 0; i < spec.n; ++i) {
            const auto seed = derive_seed({spec.base_seed, static_cast<std::uint64_t>(i)});
            out.member_probs.push_back(softmax(dropout_forward(*members[0], features, spec.dropout_p, seed).logits));
        }
    }
    out.mean_probs = out.member_probs[0];
    for (std::size_t i = 1; i < out.member_probs.size(); ++i) out.mean_probs += out.member_probs[i];
    out.mean_probs /= static_cast<double>(out.member_probs.size());
    return out;
}

Vector predictive_entropy(const Matrix& mean_probs) { return softmax_entropy(mean_probs); }

Vector mutual_information(std::span<const Matrix> member_probs) {
    if (member_probs.size() < 2) throw InputError("mutual_information: need >= 2 members");
    Matrix mean = member_probs[0];
    Vector member_entropy = softmax_entropy(member_probs[0]);
    for (std::size_t i = 1; i < member_probs.size(); ++i) {
        require_shape(member_probs[i].rows() == mean.rows() && member_probs[i].cols() == mean.cols(),
                      "mutual_information: member shapes differ");
        mean += member_probs[i];
        member_entropy += softmax_entropy(member_probs[i]);
    }
    const double n = static_cast<double>(member_probs.size());
    mean /= n;
    Vector mi = predictive_entropy(mean) - member_entropy / n;
    for (Index r = 0; r < mi.size(); ++r) {
        if (mi[r] < 0.0) {
            if (mi[r] < -1e-12) throw NumericError("mutual_information: negative beyond tolerance");
            mi[r] = 0.0;
        }
    }
    return mi;
}

std::vector<UncertaintyRecord> make_records(const ResidualMlpHead& head, const GdaModel& gda,
                                            const Matrix& features) {
    const auto out = head_forward(head, features);
    const Matrix probs = softmax(out.logits);
    const Vector alea = softmax_entropy(probs);
    const Vector epi = epistemic_score(gda, out.penultimate);
    std::vector<UncertaintyRecord> records(static_cast<std::size_t>(features.rows()));
    for (Index r = 0; r < features.rows(); ++r) {
        auto& rec = records[static_cast<std::size_t>(r)];
        Index best = 0;
        rec.confidence = probs.row(r).maxCoeff(&best);
        rec.voxel = static_cast<std::uint64_t>(r);
        rec.predicted = static_cast<std::uint16_t>(best);
        rec.aleatoric = alea[r];
        rec.epistemic = epi[r];
    }
    return records;
}

}  // namespace ocuq
