#pragma once

#include "ocuq/bench.hpp"
#include "ocuq/config.hpp"

#include <json.hpp>

#include <filesystem>
#include <ostream>
#include <string>

namespace ocuq {

inline constexpr int kMetricsSchemaVersion = 1;

/// Pretty JSON with sorted keys; floating-point values use %.17g, non-finite become null.
std::string dump_json(const nlohmann::json& j);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
/// Missing file -> empty object.
nlohmann::json read_json_file(const std::filesystem::path& path, bool allow_missing = false);

/// Skeleton with schema_version, config_hash, seed and the canonical config text.
nlohmann::json metrics_header(const RunConfig& config);

nlohmann::json to_json(const OodCell& cell);
nlohmann::json to_json(const LevelReport& level);
nlohmann::json to_json(const CalibrationResult& result, bool with_bins);
nlohmann::json to_json(const CalibrationReport& report);
nlohmann::json to_json(const AblationReport& report);
nlohmann::json to_json(const std::vector<DimSweepRow>& rows);
nlohmann::json to_json(const std::vector<NullResult>& rows);

/// Writes each method block into metrics["methods"][label], keeping blocks
/// (such as calibration) that other commands added.
void merge_benchmark(nlohmann::json& metrics, const BenchmarkReport& report);
nlohmann::json timing_json(const BenchmarkReport& report);

/// Columns: method, corruption, severity, bin_left, bin_right, count_id, count_ood (scene level).
void write_histograms_csv(const std::filesystem::path& path, const nlohmann::json& metrics);

/// Throws FormatError when the document does not follow the metrics schema.
void validate_metrics(const nlohmann::json& metrics);

struct RenderSummary {
    std::size_t svg_files = 0;
    std::size_t cells = 0;
};

/// tables.md plus one SVG histogram per (method, corruption, severity).
RenderSummary render_report(const nlohmann::json& metrics, const std::filesystem::path& out_dir);

std::string render_tables(const nlohmann::json& metrics);
std::string render_histogram_svg(const std::string& method, const nlohmann::json& cell);

/// File-system-safe form of a method label.
std::string slug(const std::string& text);

}  // namespace ocuq
