#include "ocuq/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ocuq {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt17(double v) {
    if (!std::isfinite(v)) return "null";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void dump_rec(const json& j, std::ostringstream& o, int indent) {
    const std::string pad(static_cast<std::size_t>(indent + 2), ' ');
    const std::string close(static_cast<std::size_t>(indent), ' ');
    switch (j.type()) {
        case json::value_t::object: {
            if (j.empty()) {
                o << "{}";
                return;
            }
            o << "{\n";
            bool first = true;
            for (auto it = j.begin(); it != j.end(); ++it) {
                if (!first) o << ",\n";
                first = false;
                o << pad << json(it.key()).dump() << ": ";
                dump_rec(it.value(), o, indent + 2);
            }
            o << "\n" << close << "}";
            return;
        }
        case json::value_t::array: {
            if (j.empty()) {
                o << "[]";
                return;
            }
            bool scalars = true;
            for (const auto& v : j) scalars = scalars && !v.is_structured();
            if (scalars) {
                o << "[";
                for (std::size_t i = 0; i < j.size(); ++i) {
                    if (i) o << ", ";
                    dump_rec(j[i], o, indent);
                }
                o << "]";
                return;
            }
            o << "[\n";
            for (std::size_t i = 0; i < j.size(); ++i) {
                if (i) o << ",\n";
                o << pad;
                dump_rec(j[i], o, indent + 2);
            }
            o << "\n" << close << "]";
            return;
        }
        case json::value_t::number_float:
            o << fmt17(j.get<double>());
            return;
        default:
            o << j.dump();
            return;
    }
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::string dump_json(const json& j) {
    std::ostringstream o;
    dump_rec(j, o, 0);
    o << "\n";
    return o.str();
}

void write_json_file(const fs::path& path, const json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << dump_json(j);
    if (!out) throw IoError("write failed for " + path.string());
}

json read_json_file(const fs::path& path, bool allow_missing) {
    if (!fs::exists(path)) {
        if (allow_missing) return json::object();
        throw IoError("missing file " + path.string());
    }
    std::ifstream in(path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

json metrics_header(const RunConfig& config) {
    json j;
    j["schema_version"] = kMetricsSchemaVersion;
    j["config_hash"] = config_hash(config);
    j["seed"] = config.benchmark.seed;
    j["config"] = to_text(config);
    j["methods"] = json::object();
    return j;
}

json to_json(const OodCell& c) {
    return {{"corruption", to_string(c.corruption)},
            {"severity", c.severity},
            {"auroc", c.auroc},
            {"fpr95", c.fpr95},
            {"n_id", c.n_id},
            {"n_ood", c.n_ood},
            {"histogram",
             {{"edges", c.histogram.edges}, {"count_id", c.histogram.count_id}, {"count_ood", c.histogram.count_ood}}}};
}

json to_json(const LevelReport& level) {
    json cells = json::array();
    for (const auto& c : level.cells) cells.push_back(to_json(c));
    return {{"cells", cells}, {"mAUROC", opt(level.mauroc)}, {"mFPR95", opt(level.mfpr95)}};
}

json to_json(const CalibrationResult& r, bool with_bins) {
    json j = {{"ece", r.ece}, {"nll", r.nll}};
    if (with_bins) {
        json bins = json::array();
        for (const auto& b : r.bins)
            bins.push_back({{"lower", b.lower},
                            {"upper", b.upper},
                            {"confidence", b.confidence},
                            {"accuracy", b.accuracy},
                            {"count", b.count}});
        j["bins"] = bins;
    }
    return j;
}

json to_json(const CalibrationReport& r) {
    json j;
    j["mode"] = r.ugts_enabled ? "ugts" : "ts";
    j["params"] = {{"t_train", r.params.t_train},
                   {"lambda", r.params.lambda},
                   {"u_bar_train", r.params.u_bar_train},
                   {"t_min", r.params.t_min},
                   {"t_max", r.params.t_max},
                   {"ugts_form", r.params.mode == UgtsMode::additive ? "additive" : "multiplicative"}};
    j["clean"] = {{"uncalibrated", to_json(r.clean_raw, false)}, {"ts", to_json(r.clean_ts, true)}};
    if (r.clean_ugts) j["clean"]["ugts"] = to_json(*r.clean_ugts, true);
    json cells = json::array();
    for (const auto& c : r.cells) {
        json cj = {{"corruption", to_string(c.corruption)}, {"severity", c.severity}, {"ts", to_json(c.ts, false)}};
        if (c.ugts) cj["ugts"] = to_json(*c.ugts, false);
        cells.push_back(cj);
    }
    j["corrupted"] = {{"cells", cells},
                      {"ts", {{"mECE", opt(r.mece_ts)}, {"mNLL", opt(r.mnll_ts)}}}};
    if (r.ugts_enabled) j["corrupted"]["ugts"] = {{"mECE", opt(r.mece_ugts)}, {"mNLL", opt(r.mnll_ugts)}};
    j["accuracy_clean"] = r.accuracy_clean;
    j["argmax_preserved"] = r.argmax_preserved;
    return j;
}

json to_json(const AblationReport& r) {
    json rows = json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"layers", row.layers},
                        {"skip", row.skip},
                        {"mAUROC", opt(row.mauroc)},
                        {"mFPR95", opt(row.mfpr95)},
                        {"parameters", row.parameters}});
    json j = {{"rows", rows}};
    j["deep_skip_wins"] = r.deep_skip_wins ? json(*r.deep_skip_wins) : json(nullptr);
    return j;
}

json to_json(const std::vector<DimSweepRow>& rows) {
    json out = json::array();
    for (const auto& r : rows)
        out.push_back({{"dim", r.dim}, {"mAUROC", opt(r.mauroc)}, {"mFPR95", opt(r.mfpr95)}, {"gmm_params", r.gmm_parameters}});
    return out;
}

json to_json(const std::vector<NullResult>& rows) {
    json out = json::object();
    for (const auto& r : rows)
        out[r.method] = {{"auroc", r.auroc}, {"fpr95", r.fpr95}, {"n_a", r.n_a}, {"n_b", r.n_b}};
    return out;
}

void merge_benchmark(json& metrics, const BenchmarkReport& report) {
    if (!metrics.contains("methods") || !metrics["methods"].is_object()) metrics["methods"] = json::object();
    for (const auto& m : report.methods) {
        json& block = metrics["methods"][m.method.label];
        block["parameters"] = m.parameters;
        block["scene"] = to_json(m.scene);
        if (m.region) block["region"] = to_json(*m.region);
        else block.erase("region");
    }
}

json timing_json(const BenchmarkReport& report) {
    json j = json::object();
    for (const auto& m : report.methods) j[m.method.label] = {{"inference_seconds", m.seconds}};
    return j;
}

void write_histograms_csv(const fs::path& path, const json& metrics) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "method,corruption,severity,bin_left,bin_right,count_id,count_ood\n";
    for (const auto& [label, block] : metrics.at("methods").items()) {
        if (!block.contains("scene")) continue;
        for (const auto& cell : block["scene"]["cells"]) {
            const auto& h = cell["histogram"];
            const auto& edges = h["edges"];
            for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
                out << '"' << label << "\"," << cell["corruption"].get<std::string>() << ',' << cell["severity"].get<int>()
                    << ',' << fmt17(edges[b].get<double>()) << ',' << fmt17(edges[b + 1].get<double>()) << ','
                    << h["count_id"][b].get<std::int64_t>() << ',' << h["count_ood"][b].get<std::int64_t>() << '\n';
            }
        }
    }
    if (!out) throw IoError("write failed for " + path.string());
}

void validate_metrics(const json& m) {
    auto fail = [](const std::string& what) { throw FormatError("metrics schema mismatch: " + what); };
    if (!m.is_object()) fail("document is not an object");
    if (!m.contains("schema_version") || !m["schema_version"].is_number_integer()) fail("schema_version missing");
    if (m["schema_version"].get<int>() != kMetricsSchemaVersion)
        fail("schema_version " + m["schema_version"].dump() + " (expected " + std::to_string(kMetricsSchemaVersion) + ")");
    if (!m.contains("config_hash") || !m["config_hash"].is_string()) fail("config_hash missing");
    if (!m.contains("methods") || !m["methods"].is_object()) fail("methods missing");
    for (const auto& [label, block] : m["methods"].items()) {
        if (!block.is_object()) fail("method block '" + label + "' is not an object");
        for (const char* level : {"scene", "region"}) {
            if (!block.contains(level)) continue;
            const auto& lv = block[level];
            if (!lv.contains("cells") || !lv["cells"].is_array()) fail(label + "." + level + ".cells missing");
            for (const auto& c : lv["cells"]) {
                for (const char* key : {"corruption", "severity", "auroc", "fpr95", "histogram"})
                    if (!c.contains(key)) fail(label + "." + level + " cell lacks '" + key + "'");
                const auto& h = c["histogram"];
                if (!h.contains("edges") || !h.contains("count_id") || !h.contains("count_ood") ||
                    h["edges"].size() != h["count_id"].size() + 1 || h["count_id"].size() != h["count_ood"].size())
                    fail(label + "." + level + " histogram is malformed");
            }
        }
    }
}

// ---------------------------------------------------------------------------

std::string slug(const std::string& text) {
    std::string s;
    for (char c : text) s += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' ? c : '_';
    return s;
}

namespace {

std::string cellf(const json& v, int digits = 4) {
    if (v.is_null()) return "n/a";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v.get<double>());
    return buf;
}

std::string pct(const json& v) {
    if (v.is_null()) return "n/a";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v.get<double>());
    return buf;
}

const json& get_or_null(const json& j, const char* key) {
    static const json null_value;
    return j.is_object() && j.contains(key) ? j[key] : null_value;
}

}  // namespace

std::string render_tables(const json& m) {
    std::ostringstream o;
    o << "# Benchmark report\n\n";
    o << "config hash `" << m.value("config_hash", "") << "`, seed " << get_or_null(m, "seed").dump() << "\n\n";

    const auto& methods = m["methods"];
    std::size_t cells = 0;
    for (const auto& [_, b] : methods.items())
        if (b.contains("scene")) cells += b["scene"]["cells"].size();

    o << "## OoD detection (AUROC and FPR95 in %)\n\n";
    if (cells == 0) {
        o << "no cells\n\n";
    } else {
        o << "| Method | Scene mAUROC | Scene mFPR95 | Region mAUROC | Region mFPR95 | Params |\n";
        o << "|---|---:|---:|---:|---:|---:|\n";
        for (const auto& [label, b] : methods.items()) {
            if (!b.contains("scene")) continue;
            const auto& region = get_or_null(b, "region");
            o << "| " << label << " | " << pct(b["scene"]["mAUROC"]) << " | " << pct(b["scene"]["mFPR95"]) << " | "
              << pct(get_or_null(region, "mAUROC")) << " | " << pct(get_or_null(region, "mFPR95")) << " | "
              << get_or_null(b, "parameters").dump() << " |\n";
        }
        o << "\n";
        for (const auto& [label, b] : methods.items()) {
            if (!b.contains("scene") || b["scene"]["cells"].empty()) continue;
            o << "### " << label << " per cell (scene level)\n\n";
            o << "| Corruption | Severity | AUROC | FPR95 | n_id | n_ood |\n|---|---:|---:|---:|---:|---:|\n";
            for (const auto& c : b["scene"]["cells"])
                o << "| " << c["corruption"].get<std::string>() << " | " << c["severity"].dump() << " | "
                  << pct(c["auroc"]) << " | " << pct(c["fpr95"]) << " | " << get_or_null(c, "n_id").dump() << " | "
                  << get_or_null(c, "n_ood").dump() << " |\n";
            o << "\n";
        }
    }

    bool any_calib = false;
    for (const auto& [_, b] : methods.items()) any_calib = any_calib || b.contains("calibration");
    if (any_calib) {
        o << "## Calibration\n\n";
        o << "| Method | Clean ECE (TS) | Clean NLL (TS) | Clean ECE (UGTS) | Clean NLL (UGTS) | mECE (TS) | mNLL (TS) | "
             "mECE (UGTS) | mNLL (UGTS) | t_train | lambda |\n";
        o << "|---|---:|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n";
        for (const auto& [label, b] : methods.items()) {
            if (!b.contains("calibration")) continue;
            const auto& c = b["calibration"];
            const auto& clean_u = get_or_null(c["clean"], "ugts");
            const auto& cor_u = get_or_null(c["corrupted"], "ugts");
            o << "| " << label << " | " << cellf(c["clean"]["ts"]["ece"]) << " | " << cellf(c["clean"]["ts"]["nll"])
              << " | " << cellf(get_or_null(clean_u, "ece")) << " | " << cellf(get_or_null(clean_u, "nll")) << " | "
              << cellf(c["corrupted"]["ts"]["mECE"]) << " | " << cellf(c["corrupted"]["ts"]["mNLL"]) << " | "
              << cellf(get_or_null(cor_u, "mECE")) << " | " << cellf(get_or_null(cor_u, "mNLL")) << " | "
              << cellf(c["params"]["t_train"]) << " | " << cellf(c["params"]["lambda"], 6) << " |\n";
        }
        o << "\n";
    }

    if (m.contains("null") && !m["null"].empty()) {
        o << "## Clean-vs-clean null experiment\n\n| Method | AUROC | FPR95 | n |\n|---|---:|---:|---:|\n";
        for (const auto& [label, r] : m["null"].items())
            o << "| " << label << " | " << pct(r["auroc"]) << " | " << pct(r["fpr95"]) << " | " << r["n_a"].dump()
              << "+" << r["n_b"].dump() << " |\n";
        o << "\n";
    }

    if (m.contains("ablation")) {
        o << "## Ablation: depth and skip connections\n\n| Layers | Skip | mAUROC | mFPR95 | Params |\n"
             "|---:|---|---:|---:|---:|\n";
        for (const auto& r : m["ablation"]["rows"])
            o << "| " << r["layers"].dump() << " | " << (r["skip"].get<bool>() ? "yes" : "no") << " | "
              << pct(r["mAUROC"]) << " | " << pct(r["mFPR95"]) << " | " << r["parameters"].dump() << " |\n";
        const auto& w = m["ablation"]["deep_skip_wins"];
        o << "\n5 layers with skip beats 5 layers without: "
          << (w.is_null() ? "not measured" : (w.get<bool>() ? "yes" : "no (warning)")) << "\n\n";
    }

    if (m.contains("feature_dim_sweep")) {
        o << "## Penultimate feature dimension\n\n| Dim | mAUROC | mFPR95 | GMM params |\n|---:|---:|---:|---:|\n";
        for (const auto& r : m["feature_dim_sweep"])
            o << "| " << r["dim"].dump() << " | " << pct(r["mAUROC"]) << " | " << pct(r["mFPR95"]) << " | "
              << r["gmm_params"].dump() << " |\n";
        o << "\n";
    }
    return o.str();
}

std::string render_histogram_svg(const std::string& method, const json& cell) {
    const auto& h = cell["histogram"];
    const auto edges = h["edges"].get<std::vector<double>>();
    const auto cid = h["count_id"].get<std::vector<std::int64_t>>();
    const auto cood = h["count_ood"].get<std::vector<std::int64_t>>();
    const double width = 640, height = 360, left = 50, right = 20, top = 40, bottom = 40;
    const double pw = width - left - right, ph = height - top - bottom;
    std::int64_t peak = 1;
    for (std::size_t i = 0; i < cid.size(); ++i) peak = std::max({peak, cid[i], cood[i]});
    const double bw = pw / static_cast<double>(cid.size());

    json meta = {{"method", method},
                 {"corruption", cell["corruption"]},
                 {"severity", cell["severity"]},
                 {"edges", h["edges"]},
                 {"count_id", h["count_id"]},
                 {"count_ood", h["count_ood"]}};
    std::string meta_text = dump_json(meta);
    meta_text.pop_back();

    std::ostringstream o;
    char buf[256];
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"360\" viewBox=\"0 0 640 360\">\n";
    o << "<metadata id=\"histogram\"><![CDATA[" << meta_text << "]]></metadata>\n";
    o << "<rect x=\"0\" y=\"0\" width=\"640\" height=\"360\" fill=\"white\"/>\n";
    o << "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" << method
      << " / " << cell["corruption"].get<std::string>() << " / severity " << cell["severity"].dump() << "</text>\n";
    auto bars = [&](const std::vector<std::int64_t>& counts, const char* color) {
        for (std::size_t i = 0; i < counts.size(); ++i) {
            if (counts[i] == 0) continue;
            const double bh = ph * static_cast<double>(counts[i]) / static_cast<double>(peak);
            std::snprintf(buf, sizeof buf,
                          "<rect x=\"%.3f\" y=\"%.3f\" width=\"%.3f\" height=\"%.3f\" fill=\"%s\" fill-opacity=\"0.55\"/>\n",
                          left + bw * static_cast<double>(i), top + ph - bh, bw, bh, color);
            o << buf;
        }
    };
    bars(cid, "#1f77b4");
    bars(cood, "#ff7f0e");
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.3f\" y1=\"%.3f\" x2=\"%.3f\" y2=\"%.3f\" stroke=\"black\"/>\n", left, top + ph,
                  left + pw, top + ph);
    o << buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.3f\" y=\"%.3f\" font-family=\"sans-serif\" font-size=\"11\">%.4g</text>\n"
                  "<text x=\"%.3f\" y=\"%.3f\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">%.4g</text>\n",
                  left, top + ph + 16, edges.front(), left + pw, top + ph + 16, edges.back());
    o << buf;
    o << "<text x=\"" << left + 8 << "\" y=\"" << top + 14
      << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#1f77b4\">clean (ID)</text>\n";
    o << "<text x=\"" << left + 8 << "\" y=\"" << top + 28
      << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#ff7f0e\">corrupted (OoD)</text>\n";
    o << "</svg>\n";
    return o.str();
}

RenderSummary render_report(const json& metrics, const fs::path& out_dir) {
    validate_metrics(metrics);
    fs::create_directories(out_dir / "histograms");
    RenderSummary summary;
    {
        std::ofstream out(out_dir / "tables.md", std::ios::trunc);
        if (!out) throw IoError("cannot write " + (out_dir / "tables.md").string());
        out << render_tables(metrics);
    }
    for (const auto& [label, block] : metrics["methods"].items()) {
        if (!block.contains("scene")) continue;
        for (const auto& cell : block["scene"]["cells"]) {
            const std::string name = slug(label) + "__" + cell["corruption"].get<std::string>() + "__s" +
                                     cell["severity"].dump() + ".svg";
            std::ofstream out(out_dir / "histograms" / name, std::ios::trunc);
            if (!out) throw IoError("cannot write " + (out_dir / "histograms" / name).string());
            out << render_histogram_svg(label, cell);
            ++summary.svg_files;
            ++summary.cells;
        }
    }
    return summary;
}

}  // namespace ocuq
