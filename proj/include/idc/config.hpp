#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "idc/relevance.hpp"

namespace idc {

/// A named test set made of one or more dataset files, concatenated in order.
struct TestSetSpec {
  std::string label;
  std::vector<std::string> paths;
  bool operator==(const TestSetSpec&) const = default;
};

struct RunConfig {
  std::string model;    // manifest path
  std::string weights;  // empty: manifest path with a .bin extension
  std::string train;
  std::vector<TestSetSpec> tests;

  long subject_layer = -2;
  std::vector<std::size_t> m{8};
  std::vector<std::size_t> candidates{2, 3, 4, 5};
  std::uint64_t seed = 0;
  std::size_t silhouette_sample = 2000;
  ImportanceMode importance_mode = ImportanceMode::Signed;

  bool baselines = true;
  std::vector<long> baseline_layers;  // empty: every layer except Flatten and Softmax
  bool nc_raw = false;
  double nc_threshold = 0.75;
  std::size_t kmnc_sections = 1000;
  std::size_t tknc_k = 3;

  double timeout_seconds = 3 * 3600.0;
  std::size_t threads = 0;  // 0: all available cores

  std::string weights_path() const;
  bool operator==(const RunConfig&) const = default;
};

/// Parses "label=path[,path...]" or a bare "path" (label = file stem).
TestSetSpec parse_test_set(const std::string& text);

nlohmann::ordered_json config_to_json(const RunConfig& config);
RunConfig config_from_json(const nlohmann::json& j);

}  // namespace idc
