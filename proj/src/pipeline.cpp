#include "idc/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <set>

#include "idc/coverage.hpp"
#include "idc/quantize.hpp"
#include "idc/relevance.hpp"

namespace idc {

namespace fs = std::filesystem;

namespace {

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string(what) + " path is missing");
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) throw ConfigError(std::string(what) + " file not found: " + path);
}

Dataset load_checked(const std::string& path, const Shape& input_shape) {
  Dataset d;
  try {
    d = load_dataset(path);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (d.sample_shape() != input_shape)
    throw ConfigError(path + ": samples are " + to_string(d.sample_shape()) + ", model expects " +
                      to_string(input_shape));
  return d;
}

class StageClock {
 public:
  StageClock() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace

PreparedRun prepare_run(const RunConfig& c) {
  require_file(c.model, "model manifest");
  require_file(c.weights_path(), "model weights");
  require_file(c.train, "training set");
  if (c.tests.empty()) throw ConfigError("no test sets given");
  std::set<std::string> labels;
  for (const auto& t : c.tests) {
    if (!labels.insert(t.label).second) throw ConfigError("duplicate test set label '" + t.label + "'");
    if (t.paths.empty()) throw ConfigError("test set '" + t.label + "' names no files");
    for (const auto& p : t.paths) require_file(p, "test set");
  }
  if (c.m.empty()) throw ConfigError("no m values given");
  for (auto m : c.m)
    if (m < 1) throw ConfigError("m must be >= 1");
  if (c.candidates.empty()) throw ConfigError("cluster candidate set is empty");
  for (auto k : c.candidates)
    if (k < 2) throw ConfigError("cluster candidates must be >= 2, got " + std::to_string(k));
  if (!(c.timeout_seconds > 0.0)) throw ConfigError("timeout must be positive");
  if (c.kmnc_sections < 1) throw ConfigError("kmnc sections must be >= 1");
  if (c.tknc_k < 1) throw ConfigError("tknc k must be >= 1");

  ModelInfo info;
  std::optional<Model> model;
  try {
    model.emplace(load_model(c.model, c.weights_path(), &info));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  const std::size_t subject = model->resolve_layer(c.subject_layer);
  const LayerKind subject_kind = model->layer(subject).kind;
  if (subject_kind == LayerKind::Flatten || subject_kind == LayerKind::Softmax)
    throw ConfigError("subject layer " + std::to_string(subject) + " is a " + std::string(to_string(subject_kind)) +
                      " layer and carries no neurons of its own");
  const std::size_t width = model->neuron_count(subject);
  const std::size_t max_m = *std::max_element(c.m.begin(), c.m.end());
  if (max_m > width)
    throw ConfigError("m = " + std::to_string(max_m) + " exceeds the " + std::to_string(width) +
                      " neurons of subject layer " + std::to_string(subject) + " (" +
                      std::string(to_string(subject_kind)) + ")");

  std::vector<std::size_t> baseline_layers;
  if (c.baselines) {
    if (c.baseline_layers.empty()) {
      baseline_layers = model->neuron_layers();
    } else {
      for (long l : c.baseline_layers) baseline_layers.push_back(model->resolve_layer(l));
      std::sort(baseline_layers.begin(), baseline_layers.end());
      baseline_layers.erase(std::unique(baseline_layers.begin(), baseline_layers.end()), baseline_layers.end());
    }
  }

  Dataset train = load_checked(c.train, model->input_shape());
  if (train.empty()) throw ConfigError(c.train + ": training set is empty");
  std::vector<Dataset> tests;
  for (const auto& t : c.tests) {
    std::vector<Dataset> parts;
    for (const auto& p : t.paths) parts.push_back(load_checked(p, model->input_shape()));
    tests.push_back(Dataset::concat(parts));
  }
  return PreparedRun{std::move(*model), std::move(info), std::move(train), std::move(tests), subject,
                     std::move(baseline_layers)};
}

CoverageReport run_analyze(const RunConfig& config) { return run_analyze(config, prepare_run(config)); }

CoverageReport run_analyze(const RunConfig& config, const PreparedRun& run) {
  const StageClock total;
  const Deadline deadline(std::chrono::duration<double>(config.timeout_seconds));
  const Model& model = run.model;
  const Execution exec = Execution::Parallel;

  CoverageReport report;
  report.config = config;
  report.model.layer_count = model.layer_count();
  report.model.parameter_count = model.parameter_count();
  report.model.subject_layer = run.subject_layer;
  report.model.subject_kind = std::string(to_string(model.layer(run.subject_layer).kind));
  report.model.subject_neurons = model.neuron_count(run.subject_layer);
  report.model.baseline_layers = run.baseline_layers;
  for (auto l : run.baseline_layers) report.model.baseline_neurons += model.neuron_count(l);
  for (std::size_t i = 0; i < config.tests.size(); ++i)
    report.sets.push_back({config.tests[i].label, config.tests[i].paths, run.tests[i].count(), Status::Skipped, {}, {}});

  std::vector<std::size_t> m_values = config.m;
  std::sort(m_values.begin(), m_values.end());
  m_values.erase(std::unique(m_values.begin(), m_values.end()), m_values.end());
  const std::size_t max_m = m_values.back();

  bool halted = false;
  // Runs one stage; on failure records it and halts the remaining ones.
  const auto stage = [&](const std::string& name, SetResult* outputs, auto&& body) {
    StageRecord rec{name, Status::Skipped, "", 0.0};
    if (!halted) {
      const StageClock clock;
      try {
        body();
        rec.status = Status::Ok;
      } catch (const TimeoutError& e) {
        rec.status = Status::Timeout;
        rec.message = e.what();
      } catch (const std::exception& e) {
        rec.status = Status::Failed;
        rec.message = name + ": " + e.what();
      }
      rec.seconds = clock.seconds();
      if (rec.status != Status::Ok) {
        halted = true;
        report.complete = false;
        if (outputs) outputs->status = rec.status;
      }
    } else {
      report.complete = false;
    }
    report.stages.push_back(std::move(rec));
  };

  ClusterModel clusters;
  std::vector<ClusterModel> prefixes;
  NeuronRanges ranges;
  const BaselineConfig baseline_config{config.nc_threshold, !config.nc_raw, config.kmnc_sections, config.tknc_k};
  const std::size_t subject = run.subject_layer;
  const auto subject_in_baselines =
      std::find(run.baseline_layers.begin(), run.baseline_layers.end(), subject) != run.baseline_layers.end();

  stage("importance", nullptr, [&] {
    report.importance = analyze_importance(model, run.train, subject, max_m, config.importance_mode, exec, &deadline);
  });

  stage("clustering", nullptr, [&] {
    const ActivationMatrix acts = collect_activations(model, run.train, std::span(&subject, 1), exec, &deadline);
    ClusterOptions options;
    options.candidates = config.candidates;
    options.seed = config.seed;
    options.silhouette_sample = config.silhouette_sample;
    clusters = cluster_columns(acts, subject, report.importance->important, options, exec, &deadline);
    report.clusters = clusters;
    for (const auto& n : clusters.neurons)
      if (n.degenerate)
        report.warnings.push_back("neuron " + std::to_string(n.neuron) + " of layer " + std::to_string(subject) +
                                  " is constant over the training set and is left out of the INCC");
    for (auto m : m_values) prefixes.push_back(clusters.prefix(m));
  });

  if (!run.baseline_layers.empty()) {
    stage("ranges", nullptr, [&] {
      const ActivationMatrix acts = collect_activations(model, run.train, run.baseline_layers, exec, &deadline);
      ranges = training_ranges(acts);
    });
  }

  for (std::size_t i = 0; i < run.tests.size(); ++i) {
    SetResult& set = report.sets[i];
    stage("coverage:" + set.label, &set, [&] {
      const Dataset& data = run.tests[i];
      CoverageAccumulation acc;
      const NeuronRanges* range_ptr = run.baseline_layers.empty() ? nullptr : &ranges;
      if (range_ptr && subject_in_baselines) {
        const ActivationMatrix acts = collect_activations(model, data, run.baseline_layers, exec, &deadline);
        const auto pos = static_cast<std::size_t>(
            std::find(run.baseline_layers.begin(), run.baseline_layers.end(), subject) - run.baseline_layers.begin());
        acc = accumulate_coverage(acts, acts.offsets[pos], prefixes, range_ptr, baseline_config, exec, &deadline);
      } else {
        const ActivationMatrix acts = collect_activations(model, data, std::span(&subject, 1), exec, &deadline);
        acc = accumulate_coverage(acts, 0, prefixes, nullptr, baseline_config, exec, &deadline);
        if (range_ptr) {
          const ActivationMatrix base = collect_activations(model, data, run.baseline_layers, exec, &deadline);
          acc.baselines = accumulate_coverage(base, 0, {}, range_ptr, baseline_config, exec, &deadline).baselines;
        }
      }
      for (std::size_t k = 0; k < m_values.size(); ++k) {
        const IdcState& state = acc.idc[k];
        set.idc.push_back({m_values[k], state.value(), state.covered(), state.total(), state.incc().excluded});
      }
      if (acc.baselines) set.baselines = acc.baselines->values();
      set.status = Status::Ok;
      if (data.empty()) report.warnings.push_back("test set '" + set.label + "' is empty");
    });
  }

  report.total_seconds = total.seconds();
  return report;
}

int exit_code(const CoverageReport& report) {
  if (report.complete) return 0;
  for (const auto& s : report.stages)
    if (s.status == Status::Timeout) return 4;
  return 3;
}

RunConfig config_from_report(const CoverageReport& report) { return report.config; }

// ---------------------------------------------------------------------------

std::string_view file_tag(PerturbMode mode) {
  switch (mode) {
    case PerturbMode::RandomPixels: return "us";
    case PerturbMode::RelevantPixels: return "udi";
    case PerturbMode::Rq1Probe: return "rq1";
  }
  return "out";
}

nlohmann::ordered_json perturbation_provenance(const PerturbConfig& c, PerturbMode mode, std::size_t budget,
                                               std::size_t count) {
  nlohmann::ordered_json j;
  j["source"] = c.input;
  j["mode"] = std::string(to_string(mode));
  j["seed"] = c.spec.seed;
  j["count"] = count;
  if (mode == PerturbMode::Rq1Probe) {
    j["percentile"] = c.spec.percentile;
    j["threshold"] = c.spec.threshold;
    j["max_fraction"] = c.spec.max_fraction;
  } else {
    j["sigma"] = c.spec.noise_sigma;
    j["pixel_budget"] = budget;
  }
  if (mode != PerturbMode::RandomPixels) {
    j["model"] = c.model;
    j["weights"] = c.weights.empty() ? fs::path(c.model).replace_extension(".bin").string() : c.weights;
  }
  return j;
}

std::vector<fs::path> run_perturb(const PerturbConfig& c) {
  require_file(c.input, "input dataset");
  if (c.modes.empty()) throw ConfigError("no perturbation modes given");
  const bool needs_model = std::any_of(c.modes.begin(), c.modes.end(),
                                       [](PerturbMode m) { return m != PerturbMode::RandomPixels; });
  std::optional<Model> model;
  Dataset data;
  try {
    data = load_dataset(c.input);
    if (needs_model) {
      require_file(c.model, "model manifest");
      const std::string weights = c.weights.empty() ? fs::path(c.model).replace_extension(".bin").string() : c.weights;
      require_file(weights, "model weights");
      model.emplace(load_model(c.model, weights));
      if (model->input_shape() != data.sample_shape())
        throw ConfigError(c.input + ": samples are " + to_string(data.sample_shape()) + ", model expects " +
                          to_string(model->input_shape()));
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  // Validate every mode up front so a bad budget fails before any file is written.
  std::vector<std::size_t> budgets;
  for (auto mode : c.modes) {
    PerturbationSpec spec = c.spec;
    spec.mode = mode;
    if (mode != PerturbMode::Rq1Probe) {
      budgets.push_back(resolve_pixel_budget(spec, data.sample_shape()));
      if (!(spec.noise_sigma > 0.0)) throw ConfigError("noise sigma must be positive");
    } else {
      budgets.push_back(0);
    }
  }

  const Deadline deadline(std::chrono::duration<double>(c.timeout_seconds));
  const fs::path dir = c.out_dir.empty() ? fs::path(c.input).parent_path() : fs::path(c.out_dir);
  if (!dir.empty()) fs::create_directories(dir);
  const std::string stem = fs::path(c.input).stem().string();
  std::vector<fs::path> written;
  for (std::size_t k = 0; k < c.modes.size(); ++k) {
    PerturbationSpec spec = c.spec;
    spec.mode = c.modes[k];
    const Dataset out = model ? perturb(*model, data, spec, Execution::Parallel, &deadline)
                              : make_us(data, spec, Execution::Parallel, &deadline);
    const fs::path path = dir / (stem + "." + std::string(file_tag(spec.mode)) + ".idcd");
    save_dataset(path, out);
    write_text(path.string() + ".provenance.json",
               perturbation_provenance(c, spec.mode, budgets[k], out.count()).dump(2) + "\n");
    written.push_back(path);
  }
  return written;
}

}  // namespace idc
