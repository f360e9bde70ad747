// Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails. Tolerances are fixed here, not read from config.

#include "ocuq/bench.hpp"
#include "ocuq/report.hpp"
#include "ocuq/store.hpp"

#include "../support/oracles.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

using namespace ocuq;

namespace {

constexpr double kGradRelTol = 1e-4;
constexpr double kGradStep = 1e-5;
constexpr int kGradProbesPerConfig = 100;
constexpr double kGradSeconds = 30.0;
constexpr double kSpectralTol = 1.001;
constexpr int kLipschitzPairs = 1000;
constexpr double kLipschitzSlack = 1e-6;
constexpr int kDensityCases = 1000;
constexpr double kDensityTol = 1e-8;
constexpr double kMetricTol = 1e-12;
constexpr int kMetricCases = 300;
constexpr int kNullScenesPerSide = 200;
constexpr double kNullLo = 0.45, kNullHi = 0.55;
constexpr double kNoiseSev3Min = 0.95;
constexpr double kFullRunSeconds = 600.0;
constexpr int kMinScenesPerCell = 100;
constexpr std::int64_t kParams32 = 17952, kParams128 = 280704, kParams64Printed = 69649;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

int failures = 0;

void verdict(int id, bool ok, const std::string& what, const std::string& detail) {
    if (!ok) ++failures;
    std::printf("%s [%d] %s: %s\n", ok ? "PASS" : "FAIL", id, what.c_str(), detail.c_str());
    std::fflush(stdout);
}

void note(const std::string& text) {
    std::printf("     %s\n", text.c_str());
    std::fflush(stdout);
}

// ---------------------------------------------------------------------------

void criterion_gradients() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    int probes = 0, bad = 0;
    std::uint64_t seed = 0;
    for (int layers : {3, 5})
        for (bool skip : {false, true})
            for (bool sn : {false, true}) {
                HeadConfig c;
                c.num_layers = layers;
                c.skip = skip;
                c.sn_enabled = sn;
                auto head = make_head(c, derive_seed({1, ++seed}));
                const Matrix x = oracle::random_matrix(16, c.input_dim, derive_seed({2, seed}));
                std::vector<ClassId> y(16);
                Rng labels(derive_seed({3, seed}));
                for (auto& v : y) v = static_cast<ClassId>(labels.uniform_int(17));
                const auto g = head_loss_and_gradients(head, x, y);
                Rng pick(derive_seed({4, seed}));
                for (int p = 0; p < kGradProbesPerConfig; ++p) {
                    const auto li = static_cast<std::size_t>(pick.uniform_int(head.num_linear()));
                    auto& layer = head.linear(li);
                    const bool bias = pick.uniform() < 0.2;
                    double* v = bias ? layer.bias.data() : layer.weight.data();
                    const auto k = static_cast<Index>(
                        pick.uniform_int(static_cast<std::uint64_t>(bias ? layer.bias.size() : layer.weight.size())));
                    const double saved = v[k];
                    v[k] = saved + kGradStep;
                    const double up = head_loss_and_gradients(head, x, y).loss;
                    v[k] = saved - kGradStep;
                    const double down = head_loss_and_gradients(head, x, y).loss;
                    v[k] = saved;
                    const double fd = (up - down) / (2 * kGradStep);
                    const double an = bias ? g.layers[li].bias(k) : g.layers[li].weight.data()[k];
                    // Floor of 1e-6 keeps the ratio above h=1e-5 round-off on near-zero gradients.
                    const double err = oracle::rel_err(fd, an);
                    worst = std::max(worst, err);
                    bad += err >= kGradRelTol;
                    ++probes;
                }
            }
    const double secs = seconds_since(t0);
    verdict(1, bad == 0 && secs < kGradSeconds, "gradient correctness",
            fmt("%d probes over 8 head variants, max rel err %.2e (< %.0e), %d over; %.1f s (< %.0f s)", probes, worst,
                kGradRelTol, bad, secs, kGradSeconds));
}

void criterion_spectral(const ResidualMlpHead& head, const FeatureDataset& val) {
    double worst_sigma = 0.0, worst_jacobi = 0.0;
    Rng rng(5);
    for (const auto& b : head.blocks) {
        SpectralState s = init_spectral_state(b.out_dim(), b.in_dim(), rng);
        worst_sigma = std::max(worst_sigma, power_iteration_converged(effective_weight(b), s));
        worst_jacobi = std::max(worst_jacobi, oracle::singular_values(effective_weight(b))[0]);
    }
    std::vector<std::pair<Vector, Vector>> pairs;
    Rng pick(6);
    const auto& scenes = val.scenes;
    auto voxel = [&] {
        const auto& s = scenes[pick.uniform_int(scenes.size())];
        return Vector(s.features.row(static_cast<Index>(pick.uniform_int(static_cast<std::uint64_t>(s.features.rows()))))
                          .cast<double>()
                          .transpose());
    };
    for (int i = 0; i < kLipschitzPairs; ++i) {
        Vector a = voxel();
        Vector b = i % 2 == 0 ? voxel() : Vector(a + 0.1 * oracle::random_matrix(a.size(), 1, derive_seed({7, static_cast<std::uint64_t>(i)})).col(0));
        pairs.emplace_back(std::move(a), std::move(b));
    }
    const auto est = estimate_lipschitz(head, pairs);
    double product = 1.0;
    for (std::size_t i = 0; i < head.blocks.size(); ++i)
        product *= head.block_has_skip(i) ? 1.0 + head.config.sn_coefficient : head.config.sn_coefficient;
    const bool ok = worst_sigma <= kSpectralTol && worst_jacobi <= kSpectralTol &&
                    est.upper <= product + kLipschitzSlack && est.samples >= static_cast<std::size_t>(kLipschitzPairs);
    verdict(2, ok, "spectral bound",
            fmt("max hidden sigma %.6f power iteration, %.6f Jacobi SVD (<= %.3f); Lipschitz ratio over %zu pairs "
                "in [%.4f, %.4f] <= %.0f + 1e-6",
                worst_sigma, worst_jacobi, kSpectralTol, est.samples, est.lower, est.upper, product));
}

void criterion_density() {
    Rng rng(8);
    double worst = 0.0;
    int cases = 0;
    for (int t = 0; t < kDensityCases; ++t) {
        const Index d = 1 + static_cast<Index>(rng.uniform_int(8));
        const Index k = 1 + static_cast<Index>(rng.uniform_int(5));
        // Random SPD covariance A A^T + 0.1 I at a random overall scale.
        GdaModel model;
        model.dim = d;
        std::vector<Vector> mus;
        std::vector<Matrix> covs;
        std::vector<double> priors;
        double weight_sum = 0.0;
        for (Index c = 0; c < k; ++c) {
            const Matrix a = oracle::random_matrix(d, d, rng.next_u64());
            Matrix cov = oracle::matmul(a, a.transpose());
            cov.diagonal().array() += 0.1;
            cov *= std::exp(rng.uniform(-2.0, 2.0));
            mus.push_back(oracle::random_matrix(d, 1, rng.next_u64(), 3.0).col(0));
            covs.push_back(cov);
            priors.push_back(rng.uniform(0.1, 1.0));
            weight_sum += priors.back();

            ClassGaussian g;
            g.mean = mus.back();
            g.chol = Eigen::LLT<Matrix>(cov).matrixL();
            g.count = 1 + static_cast<std::int64_t>(rng.uniform_int(1000));
            refresh_derived(g);
            model.classes.push_back(std::move(g));
        }
        model.log_priors.resize(k);
        for (Index c = 0; c < k; ++c) {
            priors[static_cast<std::size_t>(c)] /= weight_sum;
            model.log_priors(c) = std::log(priors[static_cast<std::size_t>(c)]);
        }
        const Index c = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(k)));
        const Vector z = mus[static_cast<std::size_t>(c)] + oracle::random_matrix(d, 1, rng.next_u64(), 2.0).col(0);
        const double got = log_density(model, z);
        const double want = oracle::mixture_logpdf(z, mus, covs, priors);
        worst = std::max(worst, std::abs(got - want));
        ++cases;
    }
    verdict(3, worst < kDensityTol, "density oracle",
            fmt("%d random SPD mixtures (dim <= 8, K <= 5), max |log_density - dense oracle| %.2e (< %.0e)", cases,
                worst, kDensityTol));
}

void criterion_metrics(const ModelBundle& models, const std::vector<MethodSpec>& methods, const World& world,
                       const BenchmarkConfig& bench) {
    Rng rng(9);
    double worst_auroc = 0.0, worst_ece = 0.0;
    int fpr_mismatch = 0;
    for (int t = 0; t < kMetricCases; ++t) {
        ScoredPopulation pop;
        const auto n_id = 1 + rng.uniform_int(200), n_ood = 1 + rng.uniform_int(200);
        const double shift = rng.uniform(-1.0, 2.0);
        // Quarter-step grid injects ties.
        for (std::uint64_t i = 0; i < n_id; ++i) pop.id_scores.push_back(std::round(4 * rng.normal()) / 4);
        for (std::uint64_t i = 0; i < n_ood; ++i) pop.ood_scores.push_back(std::round(4 * (rng.normal() + shift)) / 4);
        worst_auroc = std::max(worst_auroc, std::abs(auroc(pop) - oracle::auroc(pop.id_scores, pop.ood_scores)));
        fpr_mismatch += fpr_at_95_tpr(pop) != oracle::fpr95(pop.id_scores, pop.ood_scores);

        const Index n = 1 + static_cast<Index>(rng.uniform_int(300));
        const Matrix probs = softmax(oracle::random_matrix(n, 6, rng.next_u64(), 2.0));
        std::vector<ClassId> labels(static_cast<std::size_t>(n));
        std::vector<double> conf;
        std::vector<bool> correct;
        for (Index r = 0; r < n; ++r) {
            labels[static_cast<std::size_t>(r)] = static_cast<ClassId>(rng.uniform_int(6));
            Index arg = 0;
            conf.push_back(probs.row(r).maxCoeff(&arg));
            correct.push_back(arg == labels[static_cast<std::size_t>(r)]);
        }
        worst_ece = std::max(worst_ece, std::abs(ece(probs, labels, 15).ece - oracle::ece(conf, correct, 15)));
    }
    BenchmarkConfig null_cfg = bench;
    null_cfg.null_scenes = kNullScenesPerSide;
    const auto nulls = run_null(models, methods, world, null_cfg);
    bool null_ok = true;
    std::string null_text;
    for (const auto& r : nulls) {
        null_ok = null_ok && r.auroc >= kNullLo && r.auroc <= kNullHi;
        null_text += fmt(" %s %.4f", r.method.c_str(), r.auroc);
    }
    const bool ok = worst_auroc < kMetricTol && fpr_mismatch == 0 && worst_ece < kMetricTol && null_ok;
    verdict(4, ok, "metric oracles",
            fmt("%d cases each: AUROC max err %.1e, FPR95 mismatches %d, ECE max err %.1e (< %.0e); null AUROC on "
                "%d+%d clean scenes in [%.2f, %.2f]:%s",
                kMetricCases, worst_auroc, fpr_mismatch, worst_ece, kMetricTol, kNullScenesPerSide,
                kNullScenesPerSide, kNullLo, kNullHi, null_text.c_str()));
}

const MethodReport& find(const BenchmarkReport& rep, const std::string& label) {
    for (const auto& m : rep.methods)
        if (m.method.label == label) return m;
    throw InputError("no method " + label);
}

void criterion_ood(const BenchmarkReport& rep, double seconds, std::size_t scenes) {
    const auto& ours = find(rep, "ours");
    const auto& msp = find(rep, "max-softmax");
    const auto& ent = find(rep, "entropy");
    std::vector<double> noise;
    for (const auto& c : ours.scene.cells)
        if (c.corruption == CorruptionKind::noise) noise.push_back(c.auroc);
    bool increasing = noise.size() == 3;
    for (std::size_t i = 1; i < noise.size(); ++i) increasing = increasing && noise[i] > noise[i - 1];
    const double sev3 = noise.size() == 3 ? noise[2] : 0.0;
    const double o = ours.scene.mauroc.value_or(0), m = msp.scene.mauroc.value_or(1), e = ent.scene.mauroc.value_or(1);
    const double ro = ours.region ? ours.region->mauroc.value_or(0) : 0;
    const double rm = msp.region ? msp.region->mauroc.value_or(1) : 1;
    const bool cells_ok = ours.scene.cells.size() == 15 && scenes >= static_cast<std::size_t>(kMinScenesPerCell);
    const bool ok = cells_ok && o > m && o > e && increasing && sev3 >= kNoiseSev3Min && ro > 0.5 && ro > rm &&
                    seconds < kFullRunSeconds;
    verdict(5, ok, "directional OoD reproduction",
            fmt("scene mAUROC ours %.4f vs max-softmax %.4f, entropy %.4f; noise AUROC %.4f < %.4f < %.4f "
                "(sev 3 >= %.2f); region mAUROC ours %.4f vs max-softmax %.4f (> 0.5); %zu cells x %zu scenes; "
                "full run %.0f s (< %.0f s)",
                o, m, e, noise.size() > 0 ? noise[0] : NAN, noise.size() > 1 ? noise[1] : NAN, sev3, kNoiseSev3Min, ro,
                rm, ours.scene.cells.size(), scenes, seconds, kFullRunSeconds));
    for (const auto& r : rep.methods)
        note(fmt("%-14s scene mAUROC %.4f mFPR95 %.4f  region mAUROC %.4f  inference %.1f s", r.method.label.c_str(),
                 r.scene.mauroc.value_or(NAN), r.scene.mfpr95.value_or(NAN),
                 r.region ? r.region->mauroc.value_or(NAN) : NAN, r.seconds));
}

void criterion_calibration(const ModelBundle& models, const World& world, const FeatureDataset& train,
                           const FeatureDataset& val, const FeatureDataset& test, const RunConfig& cfg) {
    bool ok = true;
    std::string detail;
    for (const char* label : {"ours", "entropy", "mcd:n=5:p=0.1", "de:n=5"}) {
        const auto rep = calibrate_method(models, parse_method(label), world, train, val, test, cfg.calibration,
                                          cfg.benchmark, true);
        const bool nll_ok = rep.clean_ts.nll <= rep.clean_raw.nll;
        const bool ece_ok = rep.mece_ugts && rep.mece_ts && *rep.mece_ugts <= *rep.mece_ts;
        ok = ok && nll_ok && ece_ok && rep.argmax_preserved;
        detail += fmt("%s%s NLL %.4f -> %.4f, mECE ugts %.4f vs ts %.4f (t %.4g, lambda %.3g, argmax %s)",
                      detail.empty() ? "" : "; ", label, rep.clean_raw.nll, rep.clean_ts.nll,
                      rep.mece_ugts.value_or(NAN), rep.mece_ts.value_or(NAN), rep.params.t_train, rep.params.lambda,
                      rep.argmax_preserved ? "kept" : "CHANGED");
    }
    // Direct argmax check on clean validation logits across the temperature range.
    const auto& head = *models.ours;
    bool argmax_ok = true;
    for (const auto& s : val.scenes) {
        const Matrix logits = head_forward(head, scene_matrix(s)).logits;
        const auto ref = argmax_rows(logits);
        for (double t : {cfg.calibration.t_min, 0.5, 1.0, 3.0, cfg.calibration.t_max})
            argmax_ok = argmax_ok && argmax_rows(scale_logits(logits, t)) == ref;
    }
    ok = ok && argmax_ok;
    verdict(6, ok, "calibration direction", detail + (argmax_ok ? "" : "; direct argmax check failed"));
}

void criterion_params(const GdaModel& gda) {
    std::int64_t fitted = 0;
    for (const auto& c : gda.classes) fitted += static_cast<std::int64_t>(c.mean.size() + c.chol.rows() * c.chol.cols());
    const auto p32 = gmm_param_count(32, 17), p128 = gmm_param_count(128, 17), p64 = gmm_param_count(64, 17);
    const bool ok = p32 == kParams32 && p128 == kParams128 && fitted == kParams32;
    verdict(7, ok, "parameter accounting",
            fmt("K(d+d^2): d=32 -> %lld (want %lld, fitted model holds %lld), d=128 -> %lld (want %lld); d=64 -> %lld, "
                "printed value %lld treated as anomalous and not checked",
                static_cast<long long>(p32), static_cast<long long>(kParams32), static_cast<long long>(fitted),
                static_cast<long long>(p128), static_cast<long long>(kParams128), static_cast<long long>(p64),
                static_cast<long long>(kParams64Printed)));
}

void criterion_ablation(const RunConfig& cfg, const World& world, const FeatureDataset& train,
                        const FeatureDataset& test) {
    const auto rep = run_ablation(cfg, world, train, test);
    nlohmann::json m = metrics_header(cfg);
    m["ablation"] = to_json(rep);
    const std::string tables = render_tables(m);
    std::istringstream lines(tables.substr(tables.find("## Ablation")));
    int table_rows = 0;
    for (std::string line; std::getline(lines, line);)
        if (line.rfind("| 3 |", 0) == 0 || line.rfind("| 5 |", 0) == 0) ++table_rows;
    bool complete = rep.rows.size() == 4 && table_rows == 4;
    std::string detail;
    for (const auto& r : rep.rows) {
        complete = complete && r.mauroc && r.mfpr95 && r.parameters > 0;
        detail += fmt("L%d%s %.4f/%.4f/%lld ", r.layers, r.skip ? "+skip" : "", r.mauroc.value_or(NAN),
                      r.mfpr95.value_or(NAN), static_cast<long long>(r.parameters));
    }
    const bool wins = rep.deep_skip_wins.value_or(false);
    verdict(8, complete && rep.deep_skip_wins.has_value(), "ablation harness",
            fmt("4-row table (mAUROC/mFPR95/params): %sdirection 5+skip > 5 no-skip: %s", detail.c_str(),
                wins ? "holds" : "does not hold"));
    if (!wins) note("warning W_ABLATION: 5 layers with skip did not beat 5 layers without skip (reported, not a failure)");
}

struct SmallRun {
    std::string metrics;
    std::vector<std::uint8_t> head_bytes, gda_bytes;
};

SmallRun small_pipeline() {
    RunConfig cfg;
    cfg.world.grid_x = 12;
    cfg.world.grid_y = 12;
    cfg.world.num_classes = 5;
    cfg.world.train_scenes = 6;
    cfg.world.test_scenes = 10;
    cfg.head.num_layers = 3;
    cfg.training.epochs = 2;
    sync_head_to_world(cfg);
    World world = generate_world(cfg.world);
    const auto train = generate_split(world, "train", cfg.world.train_scenes);
    world.feature_std = feature_std(train);
    const auto test = generate_split(world, "test", cfg.world.test_scenes);
    ModelBundle models;
    models.ours = train_variant(cfg.training, variant_config(cfg.head, HeadVariant::ours), train,
                                member_seed(cfg.training.seed, HeadVariant::ours, 0));
    models.gda = fit_density(cfg.gda, *models.ours, train);
    for (int i = 0; i < 3; ++i)
        models.members.push_back(train_variant(cfg.training, variant_config(cfg.head, HeadVariant::baseline), train,
                                               member_seed(cfg.training.seed, HeadVariant::baseline, i)));
    const auto methods = parse_methods({"ours", "entropy", "mcd:n=3", "de:n=3"});
    nlohmann::json m = metrics_header(cfg);
    merge_benchmark(m, run_sweep(models, methods, world, test, cfg.benchmark));
    return {dump_json(m), encode_artifact(to_artifact(*models.ours)), encode_artifact(to_artifact(*models.gda))};
}

void criterion_determinism(const ModelBundle& models, const World& world, const FeatureDataset& test) {
    const auto a = small_pipeline();
    const auto b = small_pipeline();
    const bool metrics_same = a.metrics == b.metrics && a.head_bytes == b.head_bytes && a.gda_bytes == b.gda_bytes;

    // Round trips: decode then re-encode, and compare values bit for bit.
    bool trips = true;
    const Matrix probe = scene_matrix(test.scenes[0]);
    for (const auto* head : {&*models.ours, &models.members[0]}) {
        const auto bytes = encode_artifact(to_artifact(*head));
        const auto back = head_from_artifact(decode_artifact(bytes, ArtifactKind::head));
        trips = trips && encode_artifact(to_artifact(back)) == bytes &&
                head_forward(back, probe).logits == head_forward(*head, probe).logits;
    }
    {
        const auto bytes = encode_artifact(to_artifact(*models.gda));
        const auto back = gda_from_artifact(decode_artifact(bytes, ArtifactKind::gda));
        const Matrix pen = head_forward(*models.ours, probe).penultimate;
        trips = trips && encode_artifact(to_artifact(back)) == bytes && log_density(back, pen) == log_density(*models.gda, pen);
    }
    {
        CalibrationArtifact c{"ours", {}};
        c.params.t_train = 0.731;
        c.params.lambda = 0.02;
        c.params.u_bar_train = -41.25;
        const auto bytes = encode_artifact(to_artifact(c));
        const auto back = calibration_from_artifact(decode_artifact(bytes, ArtifactKind::calib));
        trips = trips && encode_artifact(to_artifact(back)) == bytes && back.params.t_train == c.params.t_train &&
                back.params.lambda == c.params.lambda && back.params.u_bar_train == c.params.u_bar_train;
    }
    {
        const auto bytes = encode_artifact(to_artifact(world));
        const auto back = world_from_artifact(decode_artifact(bytes, ArtifactKind::dataset_manifest));
        trips = trips && encode_artifact(to_artifact(back)) == bytes && back.anchors == world.anchors &&
                back.feature_std == world.feature_std;
    }

    int identities = 0;
    bool sev0 = true;
    for (std::size_t s = 0; s < 20; ++s)
        for (auto kind : all_corruption_kinds())
            for (auto region : {CorruptionRegion::full_scene, CorruptionRegion::front_sector}) {
                const auto out = apply_corruption(world, test.scenes[s], {kind, 0, region}, s);
                sev0 = sev0 && out.features == test.scenes[s].features && out.labels == test.scenes[s].labels;
                ++identities;
            }
    verdict(9, metrics_same && trips && sev0, "determinism and round trips",
            fmt("repeated seeded pipeline: metrics and artifacts %s; head/gda/calib/world round trips %s; "
                "%d severity-0 corruptions %s",
                metrics_same ? "byte-identical" : "DIFFER", trips ? "bit-exact" : "NOT exact", identities,
                sev0 ? "bit-exact identities" : "CHANGED the scene"));
}

}  // namespace

int main() {
    std::printf("acceptance suite (seed 42, default configuration)\n");
    criterion_gradients();

    // Full default run: data, six methods' models, sweep with region level.
    RunConfig cfg;
    sync_head_to_world(cfg);
    const auto t0 = Clock::now();
    World world = generate_world(cfg.world);
    const auto train = generate_split(world, "train", cfg.world.train_scenes);
    world.feature_std = feature_std(train);
    const auto val = generate_split(world, "val", cfg.world.val_scenes);
    const auto test = generate_split(world, "test", cfg.world.test_scenes);
    ModelBundle models;
    models.ours = train_variant(cfg.training, variant_config(cfg.head, HeadVariant::ours), train,
                                member_seed(cfg.training.seed, HeadVariant::ours, 0));
    models.gda = fit_density(cfg.gda, *models.ours, train);
    for (int i = 0; i < cfg.training.ensemble; ++i)
        models.members.push_back(train_variant(cfg.training, variant_config(cfg.head, HeadVariant::baseline), train,
                                               member_seed(cfg.training.seed, HeadVariant::baseline, i)));
    const auto methods = parse_methods(cfg.benchmark.methods);
    const auto report = run_sweep(models, methods, world, test, cfg.benchmark);
    const double full_seconds = seconds_since(t0);

    criterion_spectral(*models.ours, val);
    criterion_density();
    criterion_metrics(models, methods, world, cfg.benchmark);
    criterion_ood(report, full_seconds, test.scenes.size());
    criterion_calibration(models, world, train, val, test, cfg);
    criterion_params(*models.gda);
    criterion_ablation(cfg, world, train, test);
    criterion_determinism(models, world, test);

    std::printf("%s: %d of 9 criteria failed\n", failures ? "FAILED" : "ALL PASSED", failures);
    return failures ? 1 : 0;
}
