#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "idc/config.hpp"
#include "idc/coverage.hpp"
#include "idc/quantize.hpp"
#include "idc/relevance.hpp"

namespace idc {

inline constexpr int kReportSchemaVersion = 1;

struct IdcEntry {
  std::size_t m = 0;
  double value = 0.0;
  std::size_t covered = 0;
  InccSize total;
  std::vector<std::size_t> excluded;  // degenerate neurons among the first m
  bool operator==(const IdcEntry&) const = default;
};

enum class Status { Ok, Timeout, Failed, Skipped };
std::string_view to_string(Status status);
Status parse_status(std::string_view name);

struct SetResult {
  std::string label;
  std::vector<std::string> paths;
  std::size_t samples = 0;
  Status status = Status::Ok;
  std::vector<IdcEntry> idc;
  std::optional<BaselineValues> baselines;
  bool operator==(const SetResult&) const = default;
};

struct StageRecord {
  std::string name;
  Status status = Status::Ok;
  std::string message;
  double seconds = 0.0;  // timing; not part of the determinism contract
  bool operator==(const StageRecord&) const = default;
};

struct ModelSummary {
  std::size_t layer_count = 0;
  std::size_t parameter_count = 0;
  std::size_t subject_layer = 0;  // resolved, non-negative
  std::string subject_kind;
  std::size_t subject_neurons = 0;
  std::vector<std::size_t> baseline_layers;
  std::size_t baseline_neurons = 0;
  bool operator==(const ModelSummary&) const = default;
};

struct CoverageReport {
  int schema_version = kReportSchemaVersion;
  RunConfig config;
  ModelSummary model;
  std::optional<ImportanceProfile> importance;  // ranked at max m
  std::optional<ClusterModel> clusters;         // the max-m important neurons
  std::vector<SetResult> sets;
  std::vector<std::string> warnings;
  std::vector<StageRecord> stages;
  bool complete = true;
  double total_seconds = 0.0;  // timing

  const SetResult* find_set(const std::string& label) const;
  bool operator==(const CoverageReport&) const = default;
};

/// `with_timing = false` drops every timing field; the result is then a pure function of the
/// configuration and inputs.
nlohmann::ordered_json report_to_json(const CoverageReport& report, bool with_timing = true);
CoverageReport report_from_json(const nlohmann::json& j);

/// Serialised form: two-space indented JSON with a trailing newline.
std::string dump_report(const CoverageReport& report, bool with_timing = true);

void save_report(const std::filesystem::path& path, const CoverageReport& report);
/// Parses and validates: schema version, ratios in [0,1], covered <= total.
CoverageReport load_report(const std::filesystem::path& path);
void validate_report(const CoverageReport& report);

/// The JSON schema documents report_to_json; shipped in docs/report.schema.json.
const char* report_schema();

// ---------------------------------------------------------------------------
// Comparison of several reports

struct ComparisonCell {
  std::string criterion;
  std::string set;
  std::string report;
  std::optional<double> value;  // missing when the set timed out or the criterion is off
  std::optional<double> delta;  // value minus the row's first column
};

struct Comparison {
  std::vector<std::string> criteria;                         // matrix rows
  std::vector<std::pair<std::string, std::string>> columns;  // (report, set)
  std::vector<std::vector<std::optional<double>>> matrix;    // criteria x columns
  std::vector<ComparisonCell> cells;                         // long form, row-major
};

/// Throws ConfigError unless every report uses the same subject layer and m values.
Comparison compare_reports(const std::vector<std::pair<std::string, CoverageReport>>& reports);

/// Header "criterion,set,report,value,delta"; missing values are empty fields.
std::string comparison_csv(const Comparison& comparison);
nlohmann::ordered_json comparison_plot_data(const Comparison& comparison);

}  // namespace idc
