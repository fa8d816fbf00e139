#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "idc/config.hpp"
#include "idc/io.hpp"
#include "idc/model.hpp"
#include "idc/perturb.hpp"
#include "idc/report.hpp"

namespace idc {

/// Inputs of an analysis, loaded and checked before any computation.
struct PreparedRun {
  Model model;
  ModelInfo info;
  Dataset train;
  std::vector<Dataset> tests;  // aligned with config.tests
  std::size_t subject_layer = 0;
  std::vector<std::size_t> baseline_layers;
};

/// Checks files, shapes and parameters; throws ConfigError describing the first problem.
PreparedRun prepare_run(const RunConfig& config);

/// Runs importance, clustering and coverage for every test set. Stage failures and timeouts do
/// not throw: they are recorded in the report, which is then marked incomplete.
CoverageReport run_analyze(const RunConfig& config);
CoverageReport run_analyze(const RunConfig& config, const PreparedRun& prepared);

/// 0 complete, 3 a stage failed, 4 a stage ran out of time.
int exit_code(const CoverageReport& report);

/// The configuration echoed by a report, ready to rerun.
RunConfig config_from_report(const CoverageReport& report);

struct PerturbConfig {
  std::string model;
  std::string weights;  // empty: manifest path with a .bin extension
  std::string input;
  std::string out_dir;  // empty: next to the input
  std::vector<PerturbMode> modes{PerturbMode::RandomPixels, PerturbMode::RelevantPixels};
  PerturbationSpec spec;
  double timeout_seconds = 3 * 3600.0;
};

/// Short tag used in output file names: us, udi, rq1.
std::string_view file_tag(PerturbMode mode);

/// Writes `<stem>.<tag>.idcd` and `<stem>.<tag>.idcd.provenance.json` per mode and returns the
/// dataset paths.
std::vector<std::filesystem::path> run_perturb(const PerturbConfig& config);

/// Provenance written next to a perturbed dataset.
nlohmann::ordered_json perturbation_provenance(const PerturbConfig& config, PerturbMode mode, std::size_t budget,
                                               std::size_t count);

}  // namespace idc
