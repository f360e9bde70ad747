// Default-configuration checks on the full synthetic world. Slower than the
// unit suite: one world, one trained head, one density fit shared by all cases.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ocuq/bench.hpp"

using namespace ocuq;

namespace {

struct Desk {
    RunConfig cfg;
    World world;
    FeatureDataset train, val, test;
    ModelBundle models;

    Desk() {
        sync_head_to_world(cfg);
        world = generate_world(cfg.world);
        train = generate_split(world, "train", cfg.world.train_scenes);
        world.feature_std = feature_std(train);
        val = generate_split(world, "val", cfg.world.val_scenes);
        test = generate_split(world, "test", 20);
        models.ours = train_variant(cfg.training, variant_config(cfg.head, HeadVariant::ours), train,
                                    member_seed(cfg.training.seed, HeadVariant::ours, 0));
        models.gda = fit_density(cfg.gda, *models.ours, train);
    }
};

const Desk& desk() {
    static const Desk d;
    return d;
}

}  // namespace

TEST_CASE("default head reaches 0.90 validation accuracy") {
    const auto& d = desk();
    double correct = 0.0, total = 0.0;
    for (const auto& s : d.val.scenes) {
        const auto n = static_cast<double>(s.labels.size());
        correct += accuracy(*d.models.ours, scene_matrix(s), s.labels) * n;
        total += n;
    }
    CHECK(correct / total >= 0.90);
}

TEST_CASE("front-sector noise raises front epistemic score above the rear") {
    const auto& d = desk();
    const auto mask = front_sector_mask(d.world.config, d.cfg.benchmark.half_angle_deg);
    double front = 0.0, rear = 0.0, front_clean = 0.0;
    std::size_t nf = 0, nr = 0;
    for (std::size_t i = 0; i < d.test.scenes.size(); ++i) {
        const auto& clean = d.test.scenes[i];
        const auto noisy =
            apply_corruption(d.world, clean, {CorruptionKind::noise, 3, CorruptionRegion::front_sector}, i);
        const Vector u = epistemic_score(*d.models.gda, head_forward(*d.models.ours, scene_matrix(noisy)).penultimate);
        const Vector u0 = epistemic_score(*d.models.gda, head_forward(*d.models.ours, scene_matrix(clean)).penultimate);
        REQUIRE(static_cast<std::size_t>(u.size()) == mask.size());
        for (std::size_t v = 0; v < mask.size(); ++v) {
            const auto r = static_cast<Index>(v);
            if (mask[v]) {
                front += u(r);
                front_clean += u0(r);
                ++nf;
            } else {
                rear += u(r);
                ++nr;
            }
        }
    }
    REQUIRE(nf > 0);
    REQUIRE(nr > 0);
    CHECK(front / static_cast<double>(nf) > rear / static_cast<double>(nr));
    CHECK(front > front_clean);
}

TEST_CASE("tuned lambda does not raise validation ECE over lambda 0") {
    const auto& d = desk();
    const auto method = parse_method("ours");
    const auto val_set = build_calibration_set(d.models, method, d.val.scenes, d.cfg.benchmark.seed);
    const auto train_set = build_calibration_set(d.models, method, d.train.scenes, d.cfg.benchmark.seed);
    CalibrationParams base;
    base.t_min = d.cfg.calibration.t_min;
    base.t_max = d.cfg.calibration.t_max;
    base.t_train = fit_temperature(val_set.logits, val_set.labels, base.t_min, base.t_max);
    base.u_bar_train = train_set.u_bar.mean();
    CalibrationParams tuned = base;
    tuned.lambda = tune_lambda(val_set, base, d.cfg.calibration.lambda_grid, d.cfg.calibration.bins);
    const double at_zero = evaluate_ugts(val_set, base, d.cfg.calibration.bins).ece;
    const double at_best = evaluate_ugts(val_set, tuned, d.cfg.calibration.bins).ece;
    CHECK(at_best <= at_zero);
    CHECK(at_zero == doctest::Approx(evaluate_fixed(val_set, base.t_train, d.cfg.calibration.bins).ece).epsilon(1e-12));
}
