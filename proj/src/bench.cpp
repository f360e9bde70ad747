#include "ocuq/bench.hpp"

#include "ocuq/nn.hpp"
#include "ocuq/rng.hpp"
#include "ocuq/uncertainty.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

namespace ocuq {

namespace {

std::uint64_t tag(std::string_view s) { return split_tag(s); }

int parse_int_value(const std::string& method, const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const int x = std::stoi(v, &pos);
        if (pos == v.size()) return x;
    } catch (const std::exception&) {
    }
    throw ConfigError("method '" + method + "': invalid integer for " + key + ": '" + v + "'");
}

double parse_double_value(const std::string& method, const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos == v.size()) return x;
    } catch (const std::exception&) {
    }
    throw ConfigError("method '" + method + "': invalid number for " + key + ": '" + v + "'");
}

}  // namespace

MethodSpec parse_method(const std::string& text) {
    const auto parts = split_list(text, ':');
    if (parts.empty()) throw ConfigError("empty method name");
    MethodSpec m;
    m.label = text;
    const std::string& name = parts[0];
    if (name == "ours") m.kind = MethodKind::ours;
    else if (name == "max-softmax") m.kind = MethodKind::max_softmax;
    else if (name == "entropy") m.kind = MethodKind::entropy;
    else if (name == "mcd") {
        m.kind = MethodKind::mcd;
        m.n = 5;
    } else if (name == "de") {
        m.kind = MethodKind::de;
        m.n = 5;
    } else
        throw ConfigError("unknown method '" + name + "' (ours|max-softmax|entropy|mcd|de)");

    const bool ensemble = m.kind == MethodKind::mcd || m.kind == MethodKind::de;
    for (std::size_t i = 1; i < parts.size(); ++i) {
        const auto eq = parts[i].find('=');
        if (eq == std::string::npos) throw ConfigError("method '" + text + "': expected key=value, got '" + parts[i] + "'");
        const std::string key = parts[i].substr(0, eq);
        const std::string value = parts[i].substr(eq + 1);
        if (ensemble && key == "n") {
            m.n = parse_int_value(text, key, value);
            if (m.n < 2) throw ConfigError("method '" + text + "': n must be >= 2");
        } else if (m.kind == MethodKind::mcd && key == "p") {
            m.dropout_p = parse_double_value(text, key, value);
            if (!(m.dropout_p > 0.0 && m.dropout_p < 1.0)) throw ConfigError("method '" + text + "': p must lie in (0, 1)");
        } else if (ensemble && key == "score") {
            if (value == "pe") m.score = EnsembleScore::predictive_entropy;
            else if (value == "mi") m.score = EnsembleScore::mutual_information;
            else throw ConfigError("method '" + text + "': score must be pe or mi");
        } else
            throw ConfigError("method '" + text + "': unknown key '" + key + "'");
    }
    return m;
}

std::vector<MethodSpec> parse_methods(const std::vector<std::string>& texts) {
    std::vector<MethodSpec> out;
    for (const auto& t : texts) {
        out.push_back(parse_method(t));
        for (std::size_t i = 0; i + 1 < out.size(); ++i)
            if (out[i].label == t) throw ConfigError("method '" + t + "' listed twice");
    }
    return out;
}

void check_artifacts(const ModelBundle& models, const MethodSpec& m) {
    switch (m.kind) {
        case MethodKind::ours:
            if (!models.ours || !models.gda)
                throw ConfigError("method '" + m.label + "' needs a trained head and a fitted density model");
            if (models.gda->dim != models.ours->config.penultimate_dim())
                throw ConfigError("method '" + m.label + "': density model dim disagrees with the head");
            break;
        case MethodKind::max_softmax:
        case MethodKind::entropy:
        case MethodKind::mcd:
            if (models.members.empty()) throw ConfigError("method '" + m.label + "' needs a baseline head (member 0)");
            break;
        case MethodKind::de:
            if (static_cast<int>(models.members.size()) < m.n)
                throw ConfigError("method '" + m.label + "' needs " + std::to_string(m.n) + " ensemble members, found " +
                                  std::to_string(models.members.size()));
            break;
    }
}

MethodOutput run_method(const ModelBundle& models, const MethodSpec& m, const Matrix& features,
                        std::uint64_t mc_seed) {
    check_artifacts(models, m);
    MethodOutput out;
    switch (m.kind) {
        case MethodKind::ours: {
            auto h = head_forward(*models.ours, features);
            out.ood_score = epistemic_score(*models.gda, h.penultimate);
            out.calibration_measure = out.ood_score;
            out.logits = std::move(h.logits);
            break;
        }
        case MethodKind::max_softmax:
        case MethodKind::entropy: {
            out.logits = head_forward(models.members[0], features).logits;
            const Matrix probs = softmax(out.logits);
            out.calibration_measure = softmax_entropy(probs);
            out.ood_score = m.kind == MethodKind::entropy ? out.calibration_measure : max_softmax_score(probs);
            break;
        }
        case MethodKind::mcd:
        case MethodKind::de: {
            std::vector<const ResidualMlpHead*> ptrs;
            for (const auto& h : models.members) ptrs.push_back(&h);
            EnsembleSpec spec;
            spec.kind = m.kind == MethodKind::de ? EnsembleKind::deep_ensemble : EnsembleKind::mc_dropout;
            spec.n = m.n;
            spec.dropout_p = m.dropout_p;
            spec.base_seed = mc_seed;
            const auto pred = ensemble_predict(ptrs, spec, features);
            out.calibration_measure = predictive_entropy(pred.mean_probs);
            out.ood_score = m.score == EnsembleScore::predictive_entropy ? out.calibration_measure
                                                                         : mutual_information(pred.member_probs);
            out.logits = pred.mean_probs.array().max(1e-300).log().matrix();
            break;
        }
    }
    return out;
}

std::int64_t method_parameter_count(const ModelBundle& models, const MethodSpec& m) {
    check_artifacts(models, m);
    switch (m.kind) {
        case MethodKind::ours:
            return parameter_count(*models.ours) + gmm_param_count(models.gda->dim, models.gda->num_classes());
        case MethodKind::max_softmax:
        case MethodKind::entropy:
        case MethodKind::mcd:
            return parameter_count(models.members[0]);
        case MethodKind::de:
            return parameter_count(models.members[0]) * m.n;
    }
    return 0;
}

// ---------------------------------------------------------------------------

HeadConfig variant_config(const HeadConfig& config, HeadVariant variant) {
    HeadConfig c = config;
    if (variant == HeadVariant::baseline) c.sn_enabled = false;
    return c;
}

std::uint64_t member_seed(std::uint64_t training_seed, HeadVariant variant, int index) {
    return derive_seed({training_seed, tag(variant == HeadVariant::ours ? "ours" : "member"),
                        static_cast<std::uint64_t>(index)});
}

ResidualMlpHead train_variant(const TrainingConfig& training, const HeadConfig& config,
                              const FeatureDataset& train, std::uint64_t seed, TrainLog* log) {
    ResidualMlpHead head = make_head(config, derive_seed({seed, 1}));
    OptimizerState opt;
    opt.config = training.optimizer;
    TrainOptions options;
    options.epochs = training.epochs;
    options.batch_size = training.batch_size;
    options.seed = derive_seed({seed, 2});
    TrainLog l = train_head(head, train, opt, options);
    if (log) *log = std::move(l);
    return head;
}

GdaModel fit_density(const GdaConfig& gda, const ResidualMlpHead& head, const FeatureDataset& train,
                     FeatureBank* bank_out) {
    FeatureBank bank = collect_features(head, train, gda.cap_per_class, gda.seed);
    GdaModel model = fit_gda(bank, gda.eps_ladder);
    if (bank_out) *bank_out = std::move(bank);
    return model;
}

Matrix scene_matrix(const VoxelScene& scene) { return scene.features.cast<double>(); }

// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

double mean_of(const Vector& v) { return v.size() ? v.mean() : 0.0; }

Matrix select_rows(const Matrix& m, const std::vector<Index>& rows) {
    Matrix out(static_cast<Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
    return out;
}

std::vector<Index> mask_rows(const std::vector<std::uint8_t>& mask) {
    std::vector<Index> rows;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) rows.push_back(static_cast<Index>(i));
    return rows;
}

// MC-dropout masks depend on the scene and the level only, so a clean scene
// and its corrupted copy see the same masks.
std::uint64_t mc_seed_for(std::uint64_t seed, std::uint64_t scene_id, std::string_view level) {
    return derive_seed({seed, tag("mcd"), scene_id, tag(level)});
}

std::uint64_t corruption_seed(std::uint64_t seed, CorruptionKind kind, int severity, std::uint64_t scene_id,
                              CorruptionRegion region) {
    return derive_seed({seed, tag(to_string(kind)), static_cast<std::uint64_t>(severity), scene_id,
                        static_cast<std::uint64_t>(region)});
}

void finish_level(LevelReport& level) {
    if (level.cells.empty()) return;
    double a = 0.0;
    double f = 0.0;
    for (const auto& c : level.cells) {
        a += c.auroc;
        f += c.fpr95;
    }
    level.mauroc = a / static_cast<double>(level.cells.size());
    level.mfpr95 = f / static_cast<double>(level.cells.size());
}

OodCell make_cell(CorruptionKind kind, int severity, std::vector<double> id, std::vector<double> ood, int bins) {
    OodCell cell;
    cell.corruption = kind;
    cell.severity = severity;
    ScoredPopulation pop{std::move(id), std::move(ood)};
    cell.auroc = auroc(pop);
    cell.fpr95 = fpr_at_95_tpr(pop);
    cell.n_id = pop.id_scores.size();
    cell.n_ood = pop.ood_scores.size();
    cell.histogram = pooled_histogram(pop, bins);
    return cell;
}

void check_grid(const BenchmarkConfig& config) {
    for (int s : config.severities)
        if (s < 0 || s > 3) throw InputError("severity must lie in 0..3, got " + std::to_string(s));
}

}  // namespace

BenchmarkReport run_sweep(const ModelBundle& models, const std::vector<MethodSpec>& methods, const World& world,
                          const FeatureDataset& test, const BenchmarkConfig& config) {
    for (const auto& m : methods) check_artifacts(models, m);
    check_grid(config);
    if (test.scenes.empty()) throw InputError("run_sweep: empty evaluation set");

    const std::size_t nm = methods.size();
    std::vector<double> seconds(nm, 0.0);
    const auto region_rows = mask_rows(front_sector_mask(world.config, config.half_angle_deg));
    if (config.region && region_rows.empty()) throw InputError("run_sweep: front sector selects no voxels");

    auto score = [&](std::size_t mi, const Matrix& x, std::uint64_t mc_seed) {
        const auto t0 = Clock::now();
        const double s = mean_of(run_method(models, methods[mi], x, mc_seed).ood_score);
        seconds[mi] += std::chrono::duration<double>(Clock::now() - t0).count();
        return s;
    };

    // Clean scores, per method and scene.
    std::vector<std::vector<double>> clean_scene(nm), clean_region(nm);
    for (const auto& scene : test.scenes) {
        const Matrix x = scene_matrix(scene);
        const Matrix xr = config.region ? select_rows(x, region_rows) : Matrix();
        for (std::size_t mi = 0; mi < nm; ++mi) {
            clean_scene[mi].push_back(score(mi, x, mc_seed_for(config.seed, scene.scene_id, "scene")));
            if (config.region)
                clean_region[mi].push_back(score(mi, xr, mc_seed_for(config.seed, scene.scene_id, "region")));
        }
    }

    BenchmarkReport report;
    report.methods.resize(nm);
    for (std::size_t mi = 0; mi < nm; ++mi) {
        report.methods[mi].method = methods[mi];
        report.methods[mi].parameters = method_parameter_count(models, methods[mi]);
        if (config.region) report.methods[mi].region.emplace();
    }

    for (CorruptionKind kind : config.corruptions) {
        for (int severity : config.severities) {
            std::vector<std::vector<double>> ood_scene(nm), ood_region(nm);
            for (const auto& scene : test.scenes) {
                CorruptionSpec spec{kind, severity, CorruptionRegion::full_scene, config.half_angle_deg};
                const auto full = apply_corruption(
                    world, scene, spec,
                    corruption_seed(config.seed, kind, severity, scene.scene_id, CorruptionRegion::full_scene));
                const Matrix x = scene_matrix(full);
                Matrix xr;
                if (config.region) {
                    spec.region = CorruptionRegion::front_sector;
                    const auto front = apply_corruption(
                        world, scene, spec,
                        corruption_seed(config.seed, kind, severity, scene.scene_id, CorruptionRegion::front_sector));
                    xr = select_rows(scene_matrix(front), region_rows);
                }
                for (std::size_t mi = 0; mi < nm; ++mi) {
                    ood_scene[mi].push_back(score(mi, x, mc_seed_for(config.seed, scene.scene_id, "scene")));
                    if (config.region)
                        ood_region[mi].push_back(score(mi, xr, mc_seed_for(config.seed, scene.scene_id, "region")));
                }
            }
            for (std::size_t mi = 0; mi < nm; ++mi) {
                auto& mr = report.methods[mi];
                mr.scene.cells.push_back(
                    make_cell(kind, severity, clean_scene[mi], std::move(ood_scene[mi]), config.histogram_bins));
                if (config.region)
                    mr.region->cells.push_back(
                        make_cell(kind, severity, clean_region[mi], std::move(ood_region[mi]), config.histogram_bins));
            }
        }
    }
    for (std::size_t mi = 0; mi < nm; ++mi) {
        auto& mr = report.methods[mi];
        finish_level(mr.scene);
        if (mr.region) finish_level(*mr.region);
        mr.seconds = seconds[mi];
    }
    return report;
}

std::vector<NullResult> run_null(const ModelBundle& models, const std::vector<MethodSpec>& methods,
                                 const World& world, const BenchmarkConfig& config) {
    for (const auto& m : methods) check_artifacts(models, m);
    if (config.null_scenes < 1) throw InputError("run_null: null_scenes must be >= 1");
    const auto a = generate_split(world, "null_a", config.null_scenes);
    const auto b = generate_split(world, "null_b", config.null_scenes);
    std::vector<NullResult> out;
    for (const auto& m : methods) {
        ScoredPopulation pop;
        for (const auto& s : a.scenes)
            pop.id_scores.push_back(
                mean_of(run_method(models, m, scene_matrix(s), mc_seed_for(config.seed, s.seed, "null")).ood_score));
        for (const auto& s : b.scenes)
            pop.ood_scores.push_back(
                mean_of(run_method(models, m, scene_matrix(s), mc_seed_for(config.seed, s.seed, "null")).ood_score));
        out.push_back({m.label, auroc(pop), fpr_at_95_tpr(pop), pop.id_scores.size(), pop.ood_scores.size()});
    }
    return out;
}

// ---------------------------------------------------------------------------

CalibrationSet build_calibration_set(const ModelBundle& models, const MethodSpec& method,
                                     const std::vector<VoxelScene>& scenes, std::uint64_t mc_seed) {
    CalibrationSet set;
    if (scenes.empty()) throw InputError("build_calibration_set: no scenes");
    Index total = 0;
    for (const auto& s : scenes) total += s.features.rows();
    set.u_bar.resize(static_cast<Index>(scenes.size()));
    set.offsets.push_back(0);
    Index row = 0;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const auto& s = scenes[i];
        auto out = run_method(models, method, scene_matrix(s), mc_seed_for(mc_seed, s.scene_id, "calibration"));
        if (set.logits.size() == 0) set.logits.resize(total, out.logits.cols());
        set.logits.middleRows(row, out.logits.rows()) = out.logits;
        set.labels.insert(set.labels.end(), s.labels.begin(), s.labels.end());
        set.u_bar[static_cast<Index>(i)] = mean_of(out.calibration_measure);
        row += out.logits.rows();
        set.offsets.push_back(row);
    }
    return set;
}

namespace {

bool same_argmax(const Matrix& logits, const Matrix& probs) {
    return argmax_rows(logits) == argmax_rows(probs);
}

}  // namespace

CalibrationReport calibrate_method(const ModelBundle& models, const MethodSpec& method, const World& world,
                                   const FeatureDataset& train, const FeatureDataset& val,
                                   const FeatureDataset& test, const CalibrationConfig& calib,
                                   const BenchmarkConfig& bench, bool ugts) {
    check_artifacts(models, method);
    check_grid(bench);
    CalibrationReport rep;
    rep.method = method.label;
    rep.ugts_enabled = ugts;

    const CalibrationSet val_set = build_calibration_set(models, method, val.scenes, bench.seed);
    rep.params.t_min = calib.t_min;
    rep.params.t_max = calib.t_max;
    rep.params.mode = calib.mode;
    rep.params.t_train = fit_temperature(val_set.logits, val_set.labels, calib.t_min, calib.t_max);
    rep.clean_raw = evaluate_fixed(val_set, 1.0, calib.bins);
    rep.clean_ts = evaluate_fixed(val_set, rep.params.t_train, calib.bins);
    const auto predicted = argmax_rows(val_set.logits);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == val_set.labels[i];
    rep.accuracy_clean = static_cast<double>(correct) / static_cast<double>(predicted.size());
    rep.argmax_preserved = same_argmax(val_set.logits, scale_logits(val_set.logits, rep.params.t_train));

    if (ugts) {
        const CalibrationSet train_set = build_calibration_set(models, method, train.scenes, bench.seed);
        double u = 0.0;
        for (Index s = 0; s < train_set.num_samples(); ++s)
            u += train_set.u_bar[s] * static_cast<double>(train_set.offsets[s + 1] - train_set.offsets[s]);
        rep.params.u_bar_train = u / static_cast<double>(train_set.logits.rows());
        rep.params.lambda = tune_lambda(val_set, rep.params, calib.lambda_grid, calib.bins);
        rep.clean_ugts = evaluate_ugts(val_set, rep.params, calib.bins);
        rep.argmax_preserved = rep.argmax_preserved &&
                               same_argmax(val_set.logits, scale_logits(val_set.logits,
                                                                        ugts_row_temperatures(val_set, rep.params)));
    }

    double ets = 0.0, nts = 0.0, eug = 0.0, nug = 0.0;
    for (CorruptionKind kind : bench.corruptions) {
        for (int severity : bench.severities) {
            std::vector<VoxelScene> corrupted;
            corrupted.reserve(test.scenes.size());
            for (const auto& s : test.scenes)
                corrupted.push_back(apply_corruption(
                    world, s, {kind, severity, CorruptionRegion::full_scene, bench.half_angle_deg},
                    corruption_seed(bench.seed, kind, severity, s.scene_id, CorruptionRegion::full_scene)));
            const CalibrationSet set = build_calibration_set(models, method, corrupted, bench.seed);
            CalibrationCell cell;
            cell.corruption = kind;
            cell.severity = severity;
            cell.ts = evaluate_fixed(set, rep.params.t_train, calib.bins);
            ets += cell.ts.ece;
            nts += cell.ts.nll;
            rep.argmax_preserved =
                rep.argmax_preserved && same_argmax(set.logits, scale_logits(set.logits, rep.params.t_train));
            if (ugts) {
                cell.ugts = evaluate_ugts(set, rep.params, calib.bins);
                eug += cell.ugts->ece;
                nug += cell.ugts->nll;
                rep.argmax_preserved =
                    rep.argmax_preserved &&
                    same_argmax(set.logits, scale_logits(set.logits, ugts_row_temperatures(set, rep.params)));
            }
            rep.cells.push_back(std::move(cell));
        }
    }
    if (!rep.cells.empty()) {
        const double n = static_cast<double>(rep.cells.size());
        rep.mece_ts = ets / n;
        rep.mnll_ts = nts / n;
        if (ugts) {
            rep.mece_ugts = eug / n;
            rep.mnll_ugts = nug / n;
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------

namespace {

LevelReport scene_level_sweep(const ResidualMlpHead& head, const GdaModel& gda, const World& world,
                              const FeatureDataset& test, BenchmarkConfig bench) {
    ModelBundle models;
    models.ours = head;
    models.gda = gda;
    bench.region = false;
    const auto rep = run_sweep(models, {parse_method("ours")}, world, test, bench);
    return rep.methods[0].scene;
}

}  // namespace

AblationReport run_ablation(const RunConfig& config, const World& world, const FeatureDataset& train,
                            const FeatureDataset& test) {
    AblationReport rep;
    for (int layers : config.benchmark.ablation_layers) {
        for (bool skip : {false, true}) {
            HeadConfig hc = variant_config(config.head, HeadVariant::ours);
            hc.num_layers = layers;
            hc.skip = skip;
            const auto seed = derive_seed({config.training.seed, tag("ablation"), static_cast<std::uint64_t>(layers),
                                           static_cast<std::uint64_t>(skip)});
            const auto head = train_variant(config.training, hc, train, seed);
            const auto gda = fit_density(config.gda, head, train);
            const auto level = scene_level_sweep(head, gda, world, test, config.benchmark);
            AblationRow row;
            row.layers = layers;
            row.skip = skip;
            row.mauroc = level.mauroc;
            row.mfpr95 = level.mfpr95;
            row.parameters = parameter_count(head);
            rep.rows.push_back(row);
        }
    }
    const AblationRow* with = nullptr;
    const AblationRow* without = nullptr;
    for (const auto& r : rep.rows) {
        if (r.layers != 5) continue;
        (r.skip ? with : without) = &r;
    }
    if (with && without && with->mauroc && without->mauroc) rep.deep_skip_wins = *with->mauroc > *without->mauroc;
    return rep;
}

std::vector<DimSweepRow> feature_dim_sweep(const std::vector<int>& dims, const RunConfig& config,
                                           const World& world, const FeatureDataset& train,
                                           const FeatureDataset& test) {
    if (dims.empty()) throw InputError("feature_dim_sweep: dims must be nonempty");
    std::vector<DimSweepRow> rows;
    for (int dim : dims) {
        if (dim < 1) throw InputError("feature_dim_sweep: dims must be positive");
        HeadConfig hc = variant_config(config.head, HeadVariant::ours);
        hc.width = dim;
        const auto seed = derive_seed({config.training.seed, tag("dim_sweep"), static_cast<std::uint64_t>(dim)});
        const auto head = train_variant(config.training, hc, train, seed);
        const auto gda = fit_density(config.gda, head, train);
        const auto level = scene_level_sweep(head, gda, world, test, config.benchmark);
        rows.push_back({dim, level.mauroc, level.mfpr95, gmm_param_count(dim, hc.num_classes)});
    }
    return rows;
}

}  // namespace ocuq
