#include "ocuq/bench.hpp"
#include "ocuq/config.hpp"
#include "ocuq/report.hpp"
#include "ocuq/store.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ocuq;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;

struct Common {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, Common& c, const char* config_flag = "--config") {
    sub->add_option(config_flag, c.config_path, "Sectioned key-value config file")->check(CLI::ExistingFile);
    sub->add_option("--set", c.overrides, "Override one key: section.key=value (repeatable)");
}

RunConfig load(const Common& c) {
    RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_config(c.config_path);
    for (const auto& o : c.overrides) apply_override(cfg, o);
    sync_head_to_world(cfg);
    return cfg;
}

void log(const std::string& line) { std::cerr << line << "\n"; }

bool dir_nonempty(const fs::path& p) { return fs::exists(p) && fs::is_directory(p) && !fs::is_empty(p); }

DatasetBundle load_data(const std::string& dir, RunConfig& cfg) {
    DatasetBundle data = read_dataset(dir);
    cfg.world = data.world.config;
    sync_head_to_world(cfg);
    return data;
}

std::string member_path(const fs::path& out, int i) {
    const std::string name = out.filename().string();
    const auto dot = name.find('.');
    const std::string stem = dot == std::string::npos ? name : name.substr(0, dot);
    const std::string rest = dot == std::string::npos ? "" : name.substr(dot);
    return (out.parent_path() / (stem + "." + std::to_string(i) + rest)).string();
}

ModelBundle load_models(const fs::path& dir, const std::vector<MethodSpec>& methods) {
    ModelBundle m;
    bool need_ours = false;
    int need_members = 0;
    for (const auto& s : methods) {
        if (s.kind == MethodKind::ours) need_ours = true;
        else if (s.kind == MethodKind::de) need_members = std::max(need_members, s.n);
        else need_members = std::max(need_members, 1);
    }
    if (need_ours) {
        if (fs::exists(dir / "ours.head.ocuq")) m.ours = load_head(dir / "ours.head.ocuq");
        if (fs::exists(dir / "ours.gda.ocuq")) m.gda = load_gda(dir / "ours.gda.ocuq");
    }
    for (int i = 0; i < need_members; ++i) {
        const fs::path p = dir / ("member." + std::to_string(i) + ".head.ocuq");
        if (!fs::exists(p)) break;
        m.members.push_back(load_head(p));
    }
    for (const auto& s : methods) check_artifacts(m, s);
    return m;
}

void write_train_log(const fs::path& path, const std::vector<TrainLog>& logs) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    const bool members = logs.size() > 1;
    out << (members ? "member," : "") << "epoch,loss,accuracy\n";
    char buf[128];
    for (std::size_t i = 0; i < logs.size(); ++i)
        for (const auto& e : logs[i].epochs) {
            std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", e.epoch, e.loss, e.accuracy);
            if (members) out << i << ',';
            out << buf;
        }
}

double split_accuracy(const ResidualMlpHead& head, const FeatureDataset& ds) {
    std::size_t correct = 0, total = 0;
    for (const auto& s : ds.scenes) {
        const auto pred = argmax_rows(head_forward(head, scene_matrix(s)).logits);
        for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == s.labels[i];
        total += pred.size();
    }
    return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

// --- commands --------------------------------------------------------------

int cmd_generate(const RunConfig& cfg, const std::string& out, bool force) {
    if (dir_nonempty(out) && !force) throw ConfigError("output directory " + out + " is not empty (use --force)");
    if (force && fs::exists(out)) fs::remove_all(out);
    DatasetBundle b;
    b.world = generate_world(cfg.world);
    b.splits["train"] = generate_split(b.world, "train", cfg.world.train_scenes);
    b.world.feature_std = feature_std(b.splits["train"]);
    b.splits["val"] = generate_split(b.world, "val", cfg.world.val_scenes);
    b.splits["test"] = generate_split(b.world, "test", cfg.world.test_scenes);
    write_dataset(out, b);
    std::cout << "wrote " << out << ": train " << cfg.world.train_scenes << ", val " << cfg.world.val_scenes
              << ", test " << cfg.world.test_scenes << " scenes\n";
    return 0;
}

int cmd_train(RunConfig& cfg, const std::string& data_dir, const std::string& out, const std::string& variant,
              int ensemble) {
    const auto data = load_data(data_dir, cfg);
    HeadVariant v;
    if (variant == "ours") v = HeadVariant::ours;
    else if (variant == "baseline") v = HeadVariant::baseline;
    else throw ConfigError("--variant must be ours or baseline");
    const HeadConfig hc = variant_config(cfg.head, v);
    validate(hc);
    const fs::path out_path(out);
    if (!out_path.parent_path().empty()) fs::create_directories(out_path.parent_path());
    const int count = std::max(ensemble, 1);
    std::vector<TrainLog> logs(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const auto head = train_variant(cfg.training, hc, data.split("train"),
                                        member_seed(cfg.training.seed, v, i), &logs[static_cast<std::size_t>(i)]);
        const std::string path = ensemble > 0 ? member_path(out_path, i) : out;
        save_head(head, path);
        char buf[160];
        std::snprintf(buf, sizeof buf, "validation accuracy %.4f", split_accuracy(head, data.split("val")));
        std::cout << "wrote " << path << " (" << buf << ")\n";
    }
    write_train_log(out_path.parent_path() / "train_log.csv", logs);
    return 0;
}

int cmd_fit_gmm(RunConfig& cfg, const std::string& data_dir, const std::string& head_path, const std::string& out) {
    if (!fs::exists(head_path)) throw IoError("missing head file " + head_path);
    const auto head = load_head(head_path);
    const auto data = load_data(data_dir, cfg);
    FeatureBank bank = collect_features(head, data.split("train"), cfg.gda.cap_per_class, cfg.gda.seed);
    const auto names = default_class_names(bank.num_classes());
    for (Index c = 0; c < bank.num_classes(); ++c) {
        std::cout << "class " << c << " (" << names[static_cast<std::size_t>(c)] << "): " << bank.size(c) << " kept of "
                  << bank.seen(c) << "\n";
        if (bank.absent(c))
            throw FitError("class " + std::to_string(c) + " (" + names[static_cast<std::size_t>(c)] +
                           ") is absent from the training split");
    }
    const GdaModel model = fit_gda(bank, cfg.gda.eps_ladder);
    const fs::path out_path(out);
    if (!out_path.parent_path().empty()) fs::create_directories(out_path.parent_path());
    save_gda(model, out);
    std::cout << "wrote " << out << " (eps " << model.eps << ")\n";
    return 0;
}

json load_metrics_for_update(const fs::path& path, const RunConfig& cfg) {
    json m = read_json_file(path, true);
    if (m.empty()) return metrics_header(cfg);
    validate_metrics(m);
    return m;
}

int cmd_eval_ood(RunConfig& cfg, const std::string& data_dir, const std::string& models_dir, const std::string& out,
                 bool null_experiment) {
    const auto data = load_data(data_dir, cfg);
    const auto methods = parse_methods(cfg.benchmark.methods);
    const auto models = load_models(models_dir, methods);
    fs::create_directories(out);
    const auto report = run_sweep(models, methods, data.world, data.split("test"), cfg.benchmark);
    json metrics = load_metrics_for_update(fs::path(out) / "metrics.json", cfg);
    const json header = metrics_header(cfg);
    for (const char* k : {"schema_version", "config_hash", "seed", "config"}) metrics[k] = header[k];
    json& methods_block = metrics["methods"];
    for (auto it = methods_block.begin(); it != methods_block.end();) {
        bool keep = false;
        for (const auto& m : methods) keep = keep || m.label == it.key();
        if (keep || it.value().contains("calibration")) ++it;
        else it = methods_block.erase(it);
    }
    for (auto& [_, block] : methods_block.items()) {
        block.erase("scene");
        block.erase("region");
    }
    merge_benchmark(metrics, report);
    if (null_experiment) metrics["null"] = to_json(run_null(models, methods, data.world, cfg.benchmark));
    write_json_file(fs::path(out) / "metrics.json", metrics);
    write_histograms_csv(fs::path(out) / "histograms.csv", metrics);
    json timing = read_json_file(fs::path(out) / "timing.json", true);
    timing["eval_ood"] = timing_json(report);
    write_json_file(fs::path(out) / "timing.json", timing);
    for (const auto& m : report.methods) {
        char buf[200];
        std::snprintf(buf, sizeof buf, "%-16s scene mAUROC %s  mFPR95 %s", m.method.label.c_str(),
                      m.scene.mauroc ? std::to_string(*m.scene.mauroc).c_str() : "n/a",
                      m.scene.mfpr95 ? std::to_string(*m.scene.mfpr95).c_str() : "n/a");
        std::cout << buf;
        if (m.region && m.region->mauroc) std::cout << "  region mAUROC " << *m.region->mauroc;
        std::cout << "\n";
    }
    return 0;
}

int cmd_calibrate(RunConfig& cfg, const std::string& data_dir, const std::string& models_dir,
                  const std::string& method_text, const std::string& mode, const std::string& out) {
    const auto data = load_data(data_dir, cfg);
    const auto method = parse_method(method_text);
    const auto models = load_models(models_dir, {method});
    if (mode != "ts" && mode != "ugts") throw ConfigError("--mode must be ts or ugts");
    const bool ugts = mode == "ugts";
    const auto rep = calibrate_method(models, method, data.world, data.split("train"), data.split("val"),
                                      data.split("test"), cfg.calibration, cfg.benchmark, ugts);
    fs::create_directories(out);
    CalibrationArtifact art{method.label, rep.params};
    if (!ugts) art.params.lambda = 0.0;
    save_artifact(to_artifact(art), fs::path(out) / (slug(method.label) + ".calib.ocuq"));
    json metrics = load_metrics_for_update(fs::path(out) / "metrics.json", cfg);
    metrics["methods"][method.label]["calibration"] = to_json(rep);
    write_json_file(fs::path(out) / "metrics.json", metrics);
    std::printf("%s: t_train %.4f lambda %.6g clean ECE(ts) %.4f mECE(ts) %.4f", method.label.c_str(),
                rep.params.t_train, rep.params.lambda, rep.clean_ts.ece, rep.mece_ts.value_or(NAN));
    if (ugts) std::printf(" mECE(ugts) %.4f", rep.mece_ugts.value_or(NAN));
    std::printf("\n");
    return 0;
}

int cmd_report(const std::string& metrics_path, const std::string& out_dir) {
    json metrics = read_json_file(metrics_path);
    try {
        validate_metrics(metrics);
    } catch (const FormatError& e) {
        throw ConfigError(e.what());
    }
    const auto s = render_report(metrics, out_dir);
    if (s.cells == 0) std::cout << "no cells\n";
    std::cout << "wrote " << out_dir << "/tables.md and " << s.svg_files << " histogram SVGs\n";
    return 0;
}

int cmd_ablate(RunConfig& cfg, const std::string& data_dir, const std::string& out) {
    const auto data = load_data(data_dir, cfg);
    const auto rep = run_ablation(cfg, data.world, data.split("train"), data.split("test"));
    fs::create_directories(out);
    json metrics = load_metrics_for_update(fs::path(out) / "metrics.json", cfg);
    metrics["ablation"] = to_json(rep);
    write_json_file(fs::path(out) / "metrics.json", metrics);
    for (const auto& r : rep.rows)
        std::printf("layers %d skip %-3s mAUROC %.4f mFPR95 %.4f params %lld\n", r.layers, r.skip ? "yes" : "no",
                    r.mauroc.value_or(NAN), r.mfpr95.value_or(NAN), static_cast<long long>(r.parameters));
    if (rep.deep_skip_wins && !*rep.deep_skip_wins)
        log("warning W_ABLATION: 5 layers with skip did not beat 5 layers without skip");
    return 0;
}

int cmd_dim_sweep(RunConfig& cfg, const std::string& data_dir, const std::string& out) {
    const auto data = load_data(data_dir, cfg);
    const auto rows = feature_dim_sweep(cfg.benchmark.sweep_dims, cfg, data.world, data.split("train"), data.split("test"));
    fs::create_directories(out);
    json metrics = load_metrics_for_update(fs::path(out) / "metrics.json", cfg);
    metrics["feature_dim_sweep"] = to_json(rows);
    write_json_file(fs::path(out) / "metrics.json", metrics);
    for (const auto& r : rows)
        std::printf("dim %d mAUROC %.4f mFPR95 %.4f gmm_params %lld\n", r.dim, r.mauroc.value_or(NAN),
                    r.mfpr95.value_or(NAN), static_cast<long long>(r.gmm_parameters));
    return 0;
}

std::string error_code(const std::exception& e) {
    if (const auto* oe = dynamic_cast<const Error*>(&e)) return oe->code();
    return "E_INTERNAL";
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const IoError*>(&e) ||
        dynamic_cast<const FormatError*>(&e) || dynamic_cast<const VersionError*>(&e) ||
        dynamic_cast<const KindMismatchError*>(&e))
        return kExitUsage;
    return kExitData;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Uncertainty estimation for semantic occupancy: synthetic benchmark and tooling"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    Common common;
    std::string data, out, models, head, method, mode = "ugts", metrics_path, variant = "ours";
    std::string methods_flag, corruptions_flag, severities_flag, lambda_grid, dims_flag;
    int ensemble = 0;
    std::optional<int> epochs;
    std::optional<std::size_t> cap;
    bool force = false, null_experiment = false, no_region = false;

    auto* gen = app.add_subcommand("generate-data", "Generate the synthetic train/val/test splits");
    add_common(gen, common);
    gen->add_option("--out", out, "Dataset directory")->required();
    gen->add_option("--seed", common.seed, "World seed");
    gen->add_flag("--force", force, "Replace a non-empty output directory");

    auto* train = app.add_subcommand("train", "Train a head (or an ensemble of heads)");
    add_common(train, common, "--head-config");
    train->add_option("--data", data, "Dataset directory")->required();
    train->add_option("--out", out, "Head artifact path; with --ensemble N, member i goes to <stem>.<i>.<ext>")->required();
    train->add_option("--seed", common.seed, "Training seed");
    train->add_option("--variant", variant, "ours (spectral norm per config) or baseline (no spectral norm)");
    train->add_option("--ensemble", ensemble, "Train N members with distinct seeds")->check(CLI::NonNegativeNumber);
    train->add_option("--epochs", epochs, "Override training.epochs")->check(CLI::NonNegativeNumber);

    auto* fit = app.add_subcommand("fit-gmm", "Fit the per-class Gaussian density on penultimate features");
    add_common(fit, common);
    fit->add_option("--data", data, "Dataset directory")->required();
    fit->add_option("--head", head, "Head artifact")->required();
    fit->add_option("--cap", cap, "Per-class reservoir capacity");
    fit->add_option("--out", out, "GDA artifact path")->required();
    fit->add_option("--seed", common.seed, "Reservoir seed");

    auto* eval = app.add_subcommand("eval-ood", "Run the corruption sweep and write metrics.json + histograms.csv");
    add_common(eval, common);
    eval->add_option("--data", data, "Dataset directory")->required();
    eval->add_option("--models", models, "Directory with ours.head.ocuq, ours.gda.ocuq, member.<i>.head.ocuq")->required();
    eval->add_option("--methods", methods_flag, "Comma-separated method registry entries");
    eval->add_option("--corruptions", corruptions_flag, "Comma-separated corruption kinds");
    eval->add_option("--severities", severities_flag, "Comma-separated severities (0 = identity)");
    eval->add_option("--out", out, "Output directory")->required();
    eval->add_option("--seed", common.seed, "Benchmark seed");
    eval->add_flag("--null", null_experiment, "Also run the clean-vs-clean null experiment");
    eval->add_flag("--no-region", no_region, "Skip the front-sector (region-level) sweep");

    auto* cal = app.add_subcommand("calibrate", "Fit TS / UGTS for one method and evaluate under corruption");
    add_common(cal, common);
    cal->add_option("--data", data, "Dataset directory")->required();
    cal->add_option("--models", models, "Model directory")->required();
    cal->add_option("--method", method, "Method registry entry")->required();
    cal->add_option("--mode", mode, "ts or ugts");
    cal->add_option("--lambda-grid", lambda_grid, "Comma-separated lambda candidates");
    cal->add_option("--corruptions", corruptions_flag, "Comma-separated corruption kinds");
    cal->add_option("--severities", severities_flag, "Comma-separated severities");
    cal->add_option("--out", out, "Output directory (calib artifact and metrics.json)")->required();
    cal->add_option("--seed", common.seed, "Benchmark seed");

    auto* rep = app.add_subcommand("report", "Render tables and SVG histograms from metrics.json");
    rep->add_option("--metrics", metrics_path, "metrics.json")->required();
    rep->add_option("--out-dir", out, "Output directory")->required();

    auto* abl = app.add_subcommand("ablate", "Depth x skip ablation of the uncertainty head");
    add_common(abl, common);
    abl->add_option("--data", data, "Dataset directory")->required();
    abl->add_option("--out", out, "Output directory (metrics.json)")->required();
    abl->add_option("--seed", common.seed, "Training seed");

    auto* dim = app.add_subcommand("dim-sweep", "Penultimate feature dimension sweep");
    add_common(dim, common);
    dim->add_option("--data", data, "Dataset directory")->required();
    dim->add_option("--dims", dims_flag, "Comma-separated widths");
    dim->add_option("--out", out, "Output directory (metrics.json)")->required();
    dim->add_option("--seed", common.seed, "Training seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        if (rep->parsed()) return cmd_report(metrics_path, out);

        RunConfig cfg = load(common);
        if (!methods_flag.empty()) set_value(cfg, "benchmark", "methods", methods_flag);
        if (!corruptions_flag.empty()) set_value(cfg, "benchmark", "corruptions", corruptions_flag);
        if (!severities_flag.empty()) set_value(cfg, "benchmark", "severities", severities_flag);
        if (!lambda_grid.empty()) set_value(cfg, "calibration", "lambda_grid", lambda_grid);
        if (!dims_flag.empty()) set_value(cfg, "benchmark", "sweep_dims", dims_flag);
        if (no_region) cfg.benchmark.region = false;
        if (epochs) cfg.training.epochs = *epochs;
        if (cap) cfg.gda.cap_per_class = *cap;

        if (gen->parsed()) {
            if (common.seed) cfg.world.seed = *common.seed;
            return cmd_generate(cfg, out, force);
        }
        if (train->parsed()) {
            if (common.seed) cfg.training.seed = *common.seed;
            return cmd_train(cfg, data, out, variant, ensemble);
        }
        if (fit->parsed()) {
            if (common.seed) cfg.gda.seed = *common.seed;
            return cmd_fit_gmm(cfg, data, head, out);
        }
        if (eval->parsed()) {
            if (common.seed) cfg.benchmark.seed = *common.seed;
            return cmd_eval_ood(cfg, data, models, out, null_experiment);
        }
        if (cal->parsed()) {
            if (common.seed) cfg.benchmark.seed = *common.seed;
            return cmd_calibrate(cfg, data, models, method, mode, out);
        }
        if (abl->parsed()) {
            if (common.seed) cfg.training.seed = *common.seed;
            return cmd_ablate(cfg, data, out);
        }
        if (dim->parsed()) {
            if (common.seed) cfg.training.seed = *common.seed;
            return cmd_dim_sweep(cfg, data, out);
        }
    } catch (const std::exception& e) {
        std::cerr << "error " << error_code(e) << ": " << e.what() << "\n";
        return exit_code_for(e);
    }
    return kExitUsage;
}
