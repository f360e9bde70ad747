#include "ocuq/ood.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ocuq {

namespace {

void check_population(const ScoredPopulation& pop, const char* where) {
    if (pop.id_scores.empty() || pop.ood_scores.empty())
        throw InputError(std::string(where) + ": both populations must be nonempty");
    auto finite = [](double v) { return std::isfinite(v); };
    if (!std::all_of(pop.id_scores.begin(), pop.id_scores.end(), finite) ||
        !std::all_of(pop.ood_scores.begin(), pop.ood_scores.end(), finite))
        throw InputError(std::string(where) + ": scores must be finite");
}

}  // namespace

double auroc(const ScoredPopulation& pop) {
    check_population(pop, "auroc");
    const std::size_t n_id = pop.id_scores.size();
    const std::size_t n_ood = pop.ood_scores.size();
    struct Item {
        double score;
        bool ood;
    };
    std::vector<Item> all;
    all.reserve(n_id + n_ood);
    for (double s : pop.id_scores) all.push_back({s, false});
    for (double s : pop.ood_scores) all.push_back({s, true});
    std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

    // Sum of midranks (1-based) of the OoD items.
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i;
        std::size_t ood_in_group = 0;
        while (j < all.size() && all[j].score == all[i].score) {
            ood_in_group += all[j].ood;
            ++j;
        }
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);
        rank_sum += midrank * static_cast<double>(ood_in_group);
        i = j;
    }
    const double u = rank_sum - 0.5 * static_cast<double>(n_ood) * static_cast<double>(n_ood + 1);
    return u / (static_cast<double>(n_ood) * static_cast<double>(n_id));
}

double fpr_at_95_tpr(const ScoredPopulation& pop) {
    check_population(pop, "fpr_at_95_tpr");
    std::vector<double> ood = pop.ood_scores;
    std::sort(ood.begin(), ood.end(), std::greater<>());
    const std::size_t n = ood.size();
    const std::size_t needed = (19 * n + 19) / 20;  // ceil(0.95 n)
    const double tau = ood[needed - 1];
    const auto hits = std::count_if(pop.id_scores.begin(), pop.id_scores.end(), [&](double s) { return s >= tau; });
    return static_cast<double>(hits) / static_cast<double>(pop.id_scores.size());
}

double aggregate_scene(std::span<const double> voxel_scores) {
    if (voxel_scores.empty()) throw InputError("aggregate_scene: empty scene");
    double s = 0.0;
    for (double v : voxel_scores) s += v;
    return s / static_cast<double>(voxel_scores.size());
}

double aggregate_region(std::span<const double> voxel_scores, std::span<const std::uint8_t> mask) {
    require_shape(voxel_scores.size() == mask.size(), "aggregate_region: mask size mismatch");
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        s += voxel_scores[i];
        ++n;
    }
    if (n == 0) throw InputError("aggregate_region: mask selects no voxels");
    return s / static_cast<double>(n);
}

Histogram pooled_histogram(const ScoredPopulation& pop, int bins) {
    check_population(pop, "pooled_histogram");
    if (bins < 1) throw InputError("pooled_histogram: bins must be >= 1");
    double lo = std::min(*std::min_element(pop.id_scores.begin(), pop.id_scores.end()),
                         *std::min_element(pop.ood_scores.begin(), pop.ood_scores.end()));
    double hi = std::max(*std::max_element(pop.id_scores.begin(), pop.id_scores.end()),
                         *std::max_element(pop.ood_scores.begin(), pop.ood_scores.end()));
    if (hi == lo) {
        lo -= 0.5;
        hi += 0.5;
    }
    Histogram h;
    h.edges.resize(static_cast<std::size_t>(bins) + 1);
    for (int i = 0; i <= bins; ++i) h.edges[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / bins;
    h.edges.back() = hi;
    h.count_id.assign(static_cast<std::size_t>(bins), 0);
    h.count_ood.assign(static_cast<std::size_t>(bins), 0);
    auto bin_of = [&](double v) {
        const auto b = static_cast<int>(std::floor((v - lo) / (hi - lo) * bins));
        return static_cast<std::size_t>(std::clamp(b, 0, bins - 1));
    };
    for (double v : pop.id_scores) ++h.count_id[bin_of(v)];
    for (double v : pop.ood_scores) ++h.count_ood[bin_of(v)];
    return h;
}

}  // namespace ocuq
