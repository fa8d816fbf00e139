#include "idc/config.hpp"

#include <filesystem>
#include <set>

#include "idc/errors.hpp"

namespace idc {

std::string RunConfig::weights_path() const {
  if (!weights.empty()) return weights;
  return std::filesystem::path(model).replace_extension(".bin").string();
}

TestSetSpec parse_test_set(const std::string& text) {
  TestSetSpec spec;
  std::string paths = text;
  if (const auto eq = text.find('='); eq != std::string::npos) {
    spec.label = text.substr(0, eq);
    paths = text.substr(eq + 1);
    if (spec.label.empty()) throw ConfigError("test set '" + text + "' has an empty label");
  }
  std::size_t start = 0;
  while (start <= paths.size()) {
    const auto comma = paths.find(',', start);
    const auto end = comma == std::string::npos ? paths.size() : comma;
    if (end > start) spec.paths.push_back(paths.substr(start, end - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (spec.paths.empty()) throw ConfigError("test set '" + text + "' names no files");
  if (spec.label.empty()) spec.label = std::filesystem::path(spec.paths.front()).stem().string();
  return spec;
}

nlohmann::ordered_json config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["model"] = c.model;
  j["weights"] = c.weights_path();
  j["train"] = c.train;
  j["tests"] = nlohmann::ordered_json::array();
  for (const auto& t : c.tests) j["tests"].push_back({{"label", t.label}, {"paths", t.paths}});
  j["subject_layer"] = c.subject_layer;
  j["m"] = c.m;
  j["candidates"] = c.candidates;
  j["seed"] = c.seed;
  j["silhouette_sample"] = c.silhouette_sample;
  j["importance_mode"] = std::string(to_string(c.importance_mode));
  j["baselines"] = c.baselines;
  j["baseline_layers"] = c.baseline_layers;
  j["nc_raw"] = c.nc_raw;
  j["nc_threshold"] = c.nc_threshold;
  j["kmnc_sections"] = c.kmnc_sections;
  j["tknc_k"] = c.tknc_k;
  j["timeout_seconds"] = c.timeout_seconds;
  j["threads"] = c.threads;
  return j;
}

RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known{
      "model", "weights", "train", "tests", "subject_layer", "m", "candidates", "seed", "silhouette_sample",
      "importance_mode", "baselines", "baseline_layers", "nc_raw", "nc_threshold", "kmnc_sections", "tknc_k",
      "timeout_seconds", "threads"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
  RunConfig c;
  try {
    const auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("model", c.model);
    get("weights", c.weights);
    get("train", c.train);
    if (j.contains("tests"))
      for (const auto& t : j.at("tests")) c.tests.push_back({t.at("label").get<std::string>(), t.at("paths")});
    get("subject_layer", c.subject_layer);
    get("m", c.m);
    get("candidates", c.candidates);
    get("seed", c.seed);
    get("silhouette_sample", c.silhouette_sample);
    if (j.contains("importance_mode"))
      c.importance_mode = parse_importance_mode(j.at("importance_mode").get<std::string>());
    get("baselines", c.baselines);
    get("baseline_layers", c.baseline_layers);
    get("nc_raw", c.nc_raw);
    get("nc_threshold", c.nc_threshold);
    get("kmnc_sections", c.kmnc_sections);
    get("tknc_k", c.tknc_k);
    get("timeout_seconds", c.timeout_seconds);
    get("threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  return c;
}

}  // namespace idc
