// idc: importance-driven coverage command line.

#include <omp.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>

#include "idc/errors.hpp"
#include "idc/io.hpp"
#include "idc/pipeline.hpp"
#include "idc/report.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

void set_threads(std::size_t threads) {
  if (threads > 0) omp_set_num_threads(static_cast<int>(threads));
}

struct AnalyzeArgs {
  idc::RunConfig config;
  std::vector<std::string> tests;
  std::string importance_mode = "signed";
  bool no_baselines = false;
  std::string out;
  std::string from_report;
  bool no_timing = false;
  std::map<std::string, CLI::Option*> options;
};

void add_analyze(CLI::App& app, AnalyzeArgs& a) {
  auto* cmd = app.add_subcommand("analyze", "Rank neurons, quantise them and measure coverage of test sets");
  auto& c = a.config;
  auto opt = [&](const std::string& key, CLI::Option* o) { a.options[key] = o; };
  opt("model", cmd->add_option("--model", c.model, "Model manifest (JSON)"));
  opt("weights", cmd->add_option("--weights", c.weights, "Weight file (default: manifest with .bin)"));
  opt("train", cmd->add_option("--train", c.train, "Training set (.idcd)"));
  opt("tests", cmd->add_option("--test", a.tests, "Test set as label=path[,path...]; repeatable"));
  opt("subject_layer", cmd->add_option("--subject-layer", c.subject_layer,
                                       "Layer index; negative counts back over neuron layers")
                           ->capture_default_str());
  opt("m", cmd->add_option("--m", c.m, "Important neurons; several values give one IDC row each")
               ->capture_default_str());
  opt("candidates",
      cmd->add_option("--candidates", c.candidates, "Cluster counts tried per neuron")->capture_default_str());
  opt("seed", cmd->add_option("--seed", c.seed)->capture_default_str());
  opt("silhouette_sample", cmd->add_option("--silhouette-sample", c.silhouette_sample,
                                           "Values scored per silhouette (0: all)")
                               ->capture_default_str());
  opt("importance_mode", cmd->add_option("--importance-mode", a.importance_mode)
                             ->check(CLI::IsMember({"signed", "absolute"}))
                             ->capture_default_str());
  opt("baselines", cmd->add_flag("--no-baselines", a.no_baselines, "Skip NC, KMNC, NBC, SNAC and TKNC"));
  opt("baseline_layers", cmd->add_option("--baseline-layers", c.baseline_layers,
                                         "Layers measured by the baselines (default: all neuron layers)"));
  opt("nc_raw", cmd->add_flag("--nc-raw", c.nc_raw, "Threshold raw activations for NC"));
  opt("nc_threshold", cmd->add_option("--nc-threshold", c.nc_threshold)->capture_default_str());
  opt("kmnc_sections", cmd->add_option("--kmnc-sections", c.kmnc_sections)->capture_default_str());
  opt("tknc_k", cmd->add_option("--tknc-k", c.tknc_k)->capture_default_str());
  opt("timeout_seconds", cmd->add_option("--timeout", c.timeout_seconds, "Time budget in seconds")
                             ->capture_default_str());
  opt("threads", cmd->add_option("--threads", c.threads, "Worker threads (0: all cores)")->capture_default_str());
  cmd->add_option("--out", a.out, "Report path")->required();
  cmd->add_option("--from-report", a.from_report, "Rerun the configuration echoed by a report; flags override");
  cmd->add_flag("--no-timing", a.no_timing, "Leave timing out of the report");
}

int run_analyze_cmd(AnalyzeArgs& a) {
  idc::RunConfig config = a.config;
  config.baselines = !a.no_baselines;
  config.importance_mode = idc::parse_importance_mode(a.importance_mode);
  config.tests.clear();
  for (const auto& t : a.tests) config.tests.push_back(idc::parse_test_set(t));

  if (!a.from_report.empty()) {
    idc::RunConfig merged;
    try {
      merged = idc::config_from_report(idc::load_report(a.from_report));
    } catch (const idc::Error& e) {
      throw idc::ConfigError(e.what());
    }
    const auto given = [&](const char* key) { return a.options.at(key)->count() > 0; };
    if (given("model")) merged.model = config.model;
    if (given("weights")) merged.weights = config.weights;
    if (given("train")) merged.train = config.train;
    if (given("tests")) merged.tests = config.tests;
    if (given("subject_layer")) merged.subject_layer = config.subject_layer;
    if (given("m")) merged.m = config.m;
    if (given("candidates")) merged.candidates = config.candidates;
    if (given("seed")) merged.seed = config.seed;
    if (given("silhouette_sample")) merged.silhouette_sample = config.silhouette_sample;
    if (given("importance_mode")) merged.importance_mode = config.importance_mode;
    if (given("baselines")) merged.baselines = config.baselines;
    if (given("baseline_layers")) merged.baseline_layers = config.baseline_layers;
    if (given("nc_raw")) merged.nc_raw = config.nc_raw;
    if (given("nc_threshold")) merged.nc_threshold = config.nc_threshold;
    if (given("kmnc_sections")) merged.kmnc_sections = config.kmnc_sections;
    if (given("tknc_k")) merged.tknc_k = config.tknc_k;
    if (given("timeout_seconds")) merged.timeout_seconds = config.timeout_seconds;
    if (given("threads")) merged.threads = config.threads;
    config = std::move(merged);
  }
  set_threads(config.threads);

  const idc::PreparedRun prepared = idc::prepare_run(config);
  const idc::CoverageReport report = idc::run_analyze(config, prepared);
  idc::write_text(a.out, idc::dump_report(report, !a.no_timing));

  for (const auto& s : report.sets) {
    std::cout << s.label << " (" << s.samples << " samples, " << idc::to_string(s.status) << ")";
    for (const auto& i : s.idc)
      std::cout << "  IDC_" << i.m << " = " << i.value << " (" << i.covered << "/" << i.total.to_string() << ")";
    if (s.baselines) {
      const auto& b = *s.baselines;
      std::cout << "  NC " << b.nc << "  KMNC " << b.kmnc << "  NBC " << b.nbc << "  SNAC " << b.snac << "  TKNC "
                << b.tknc;
    }
    std::cout << "\n";
  }
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  for (const auto& st : report.stages)
    if (st.status == idc::Status::Failed || st.status == idc::Status::Timeout)
      std::cerr << "error: " << st.message << "\n";
  return idc::exit_code(report);
}

struct PerturbArgs {
  idc::PerturbConfig config;
  std::vector<std::string> modes;
  std::size_t threads = 0;
};

void add_perturb(CLI::App& app, PerturbArgs& a) {
  auto* cmd = app.add_subcommand("perturb", "Build noise-perturbed copies of a dataset");
  auto& c = a.config;
  cmd->add_option("--input", c.input, "Source dataset (.idcd)")->required();
  cmd->add_option("--model", c.model, "Model manifest; needed for relevance-guided modes");
  cmd->add_option("--weights", c.weights, "Weight file (default: manifest with .bin)");
  cmd->add_option("--out-dir", c.out_dir, "Output directory (default: next to the input)");
  cmd->add_option("--mode", a.modes, "random_pixels, relevant_pixels, rq1_probe (default: the first two)")
      ->check(CLI::IsMember({"random_pixels", "relevant_pixels", "rq1_probe"}));
  cmd->add_option("--seed", c.spec.seed)->capture_default_str();
  cmd->add_option("--sigma", c.spec.noise_sigma, "Noise standard deviation")->capture_default_str();
  cmd->add_option("--budget", c.spec.pixel_budget, "Pixels per sample (0: by image size)")->capture_default_str();
  cmd->add_option("--percentile", c.spec.percentile)->capture_default_str();
  cmd->add_option("--threshold", c.spec.threshold)->capture_default_str();
  cmd->add_option("--max-fraction", c.spec.max_fraction)->capture_default_str();
  cmd->add_option("--timeout", c.timeout_seconds)->capture_default_str();
  cmd->add_option("--threads", a.threads)->capture_default_str();
}

int run_perturb_cmd(PerturbArgs& a) {
  set_threads(a.threads);
  if (!a.modes.empty()) {
    a.config.modes.clear();
    for (const auto& m : a.modes) a.config.modes.push_back(idc::parse_perturb_mode(m));
  }
  for (const auto& path : idc::run_perturb(a.config)) std::cout << path.string() << "\n";
  return 0;
}

struct CompareArgs {
  std::vector<std::string> reports;
  std::vector<std::string> names;
  std::string csv;
  std::string plot;
};

void add_compare(CLI::App& app, CompareArgs& a) {
  auto* cmd = app.add_subcommand("compare", "Tabulate criteria across reports and test sets");
  cmd->add_option("reports", a.reports, "Report files")->required()->expected(2, -1);
  cmd->add_option("--names", a.names, "Column names for the reports (default: file stems)");
  cmd->add_option("--csv", a.csv, "CSV output (default: stdout)");
  cmd->add_option("--plot", a.plot, "Plot-data JSON output");
}

int run_compare_cmd(const CompareArgs& a) {
  if (!a.names.empty() && a.names.size() != a.reports.size())
    throw idc::ConfigError(std::to_string(a.names.size()) + " names for " + std::to_string(a.reports.size()) +
                           " reports");
  std::vector<std::pair<std::string, idc::CoverageReport>> reports;
  for (std::size_t i = 0; i < a.reports.size(); ++i) {
    std::string name = a.names.empty() ? std::filesystem::path(a.reports[i]).stem().string() : a.names[i];
    for (const auto& [existing, r] : reports)
      if (existing == name) name = a.reports[i];
    idc::CoverageReport report;
    try {
      report = idc::load_report(a.reports[i]);
    } catch (const idc::ConfigError&) {
      throw;
    } catch (const idc::Error& e) {
      throw idc::ConfigError(e.what());
    }
    reports.emplace_back(std::move(name), std::move(report));
  }
  const idc::Comparison cmp = idc::compare_reports(reports);
  const std::string csv = idc::comparison_csv(cmp);
  if (a.csv.empty())
    std::cout << csv;
  else
    idc::write_text(a.csv, csv);
  if (!a.plot.empty()) idc::write_text(a.plot, idc::comparison_plot_data(cmp).dump(2) + "\n");
  return 0;
}

struct InspectArgs {
  std::string model;
  std::string weights;
  bool json = false;
};

void add_inspect(CLI::App& app, InspectArgs& a) {
  auto* cmd = app.add_subcommand("inspect-model", "Print layers, shapes and parameter counts");
  cmd->add_option("--model", a.model, "Model manifest")->required();
  cmd->add_option("--weights", a.weights, "Weight file (default: manifest with .bin)");
  cmd->add_flag("--json", a.json, "Machine-readable output");
}

int run_inspect_cmd(const InspectArgs& a) {
  const std::string weights =
      a.weights.empty() ? std::filesystem::path(a.model).replace_extension(".bin").string() : a.weights;
  idc::ModelInfo info;
  idc::Model model = [&] {
    try {
      return idc::load_model(a.model, weights, &info);
    } catch (const idc::Error& e) {
      throw idc::ConfigError(e.what());
    }
  }();
  const auto& neuron_layers = model.neuron_layers();
  const auto negative_index = [&](std::size_t layer) -> std::optional<long> {
    const auto it = std::find(neuron_layers.begin(), neuron_layers.end(), layer);
    if (it == neuron_layers.end()) return std::nullopt;
    return -static_cast<long>(neuron_layers.end() - it);
  };
  if (a.json) {
    nlohmann::ordered_json j;
    j["input_shape"] = model.input_shape();
    j["layers"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < model.layer_count(); ++i) {
      const auto neg = negative_index(i);
      j["layers"].push_back({{"index", i},
                             {"negative_index", neg ? nlohmann::ordered_json(*neg) : nlohmann::ordered_json(nullptr)},
                             {"kind", std::string(idc::to_string(model.layer(i).kind))},
                             {"output_shape", model.output_shape(i)},
                             {"neurons", model.neuron_count(i)},
                             {"parameters", model.layer(i).parameter_count()}});
    }
    j["total_neurons"] = model.total_neurons();
    j["parameter_count"] = model.parameter_count();
    j["decision_layer"] = model.decision_layer();
    j["weight_floats"] = info.weight_floats;
    j["used_floats"] = info.used_floats;
    std::cout << j.dump(2) << "\n";
    return 0;
  }
  std::cout << "input " << idc::to_string(model.input_shape()) << "\n";
  std::printf("%5s %5s  %-10s %-14s %8s %10s\n", "index", "neg", "kind", "output", "neurons", "params");
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    const auto neg = negative_index(i);
    std::printf("%5zu %5s  %-10s %-14s %8zu %10zu\n", i, neg ? std::to_string(*neg).c_str() : "",
                std::string(idc::to_string(model.layer(i).kind)).c_str(),
                idc::to_string(model.output_shape(i)).c_str(), model.neuron_count(i),
                model.layer(i).parameter_count());
  }
  std::cout << "total neurons " << model.total_neurons() << ", parameters " << model.parameter_count()
            << ", decision layer " << model.decision_layer() << "\n";
  if (info.used_floats < info.weight_floats)
    std::cout << (info.weight_floats - info.used_floats) << " trailing weight floats unused\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Importance-driven coverage for feed-forward classifiers"};
  app.set_config("--config", "", "TOML/INI file with [analyze], [perturb] ... sections; flags override it");
  app.require_subcommand(1);
  AnalyzeArgs analyze;
  PerturbArgs perturb;
  CompareArgs compare;
  InspectArgs inspect;
  add_analyze(app, analyze);
  add_perturb(app, perturb);
  add_compare(app, compare);
  add_inspect(app, inspect);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (app.got_subcommand("analyze")) return run_analyze_cmd(analyze);
    if (app.got_subcommand("perturb")) return run_perturb_cmd(perturb);
    if (app.got_subcommand("compare")) return run_compare_cmd(compare);
    if (app.got_subcommand("inspect-model")) return run_inspect_cmd(inspect);
  } catch (const idc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }
  return kExitConfig;
}
