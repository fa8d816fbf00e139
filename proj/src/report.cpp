#include "idc/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>

#include "idc/errors.hpp"
#include "idc/io.hpp"

namespace idc {

using ojson = nlohmann::ordered_json;

std::string_view to_string(Status status) {
  switch (status) {
    case Status::Ok: return "ok";
    case Status::Timeout: return "timeout";
    case Status::Failed: return "failed";
    case Status::Skipped: return "skipped";
  }
  return "unknown";
}

Status parse_status(std::string_view name) {
  if (name == "ok") return Status::Ok;
  if (name == "timeout") return Status::Timeout;
  if (name == "failed") return Status::Failed;
  if (name == "skipped") return Status::Skipped;
  throw FormatError("unknown status '" + std::string(name) + "'");
}

const SetResult* CoverageReport::find_set(const std::string& label) const {
  for (const auto& s : sets)
    if (s.label == label) return &s;
  return nullptr;
}

namespace {

ojson importance_json(const ImportanceProfile& p) {
  ojson j;
  j["subject_layer"] = p.subject_layer;
  j["mode"] = std::string(to_string(p.mode));
  j["input_count"] = p.input_count;
  j["m"] = p.m;
  j["important"] = p.important;
  j["ranking"] = p.ranking;
  j["totals"] = p.totals;
  return j;
}

ImportanceProfile importance_from(const nlohmann::json& j) {
  ImportanceProfile p;
  j.at("subject_layer").get_to(p.subject_layer);
  p.mode = parse_importance_mode(j.at("mode").get<std::string>());
  j.at("input_count").get_to(p.input_count);
  j.at("m").get_to(p.m);
  j.at("important").get_to(p.important);
  j.at("ranking").get_to(p.ranking);
  j.at("totals").get_to(p.totals);
  return p;
}

ojson clusters_json(const ClusterModel& c) {
  ojson j;
  j["subject_layer"] = c.subject_layer;
  j["training_count"] = c.training_count;
  j["options"] = {{"candidates", c.options.candidates},
                  {"seed", c.options.seed},
                  {"silhouette_sample", c.options.silhouette_sample},
                  {"max_iter", c.options.max_iter},
                  {"tol", c.options.tol},
                  {"restarts", c.options.restarts}};
  j["neurons"] = ojson::array();
  for (const auto& n : c.neurons) {
    ojson e;
    e["neuron"] = n.neuron;
    e["degenerate"] = n.degenerate;
    e["clusters"] = n.cluster_count();
    e["centroids"] = n.centroids;
    e["silhouette"] = n.silhouette;
    e["scores"] = ojson::array();
    for (const auto& s : n.scores) e["scores"].push_back({{"clusters", s.clusters}, {"silhouette", s.silhouette}});
    e["min_activation"] = n.min_activation;
    e["max_activation"] = n.max_activation;
    j["neurons"].push_back(std::move(e));
  }
  return j;
}

ClusterModel clusters_from(const nlohmann::json& j) {
  ClusterModel c;
  j.at("subject_layer").get_to(c.subject_layer);
  j.at("training_count").get_to(c.training_count);
  const auto& o = j.at("options");
  o.at("candidates").get_to(c.options.candidates);
  o.at("seed").get_to(c.options.seed);
  o.at("silhouette_sample").get_to(c.options.silhouette_sample);
  o.at("max_iter").get_to(c.options.max_iter);
  o.at("tol").get_to(c.options.tol);
  o.at("restarts").get_to(c.options.restarts);
  for (const auto& e : j.at("neurons")) {
    NeuronClusters n;
    e.at("neuron").get_to(n.neuron);
    e.at("degenerate").get_to(n.degenerate);
    e.at("centroids").get_to(n.centroids);
    e.at("silhouette").get_to(n.silhouette);
    for (const auto& s : e.at("scores")) n.scores.push_back({s.at("clusters"), s.at("silhouette")});
    e.at("min_activation").get_to(n.min_activation);
    e.at("max_activation").get_to(n.max_activation);
    if (e.at("clusters").get<std::size_t>() != n.cluster_count())
      throw FormatError("neuron " + std::to_string(n.neuron) + ": cluster count disagrees with centroids");
    c.neurons.push_back(std::move(n));
  }
  return c;
}

ojson baselines_json(const BaselineValues& b) {
  return {{"nc", b.nc}, {"kmnc", b.kmnc}, {"nbc", b.nbc}, {"snac", b.snac}, {"tknc", b.tknc}};
}

}  // namespace

ojson report_to_json(const CoverageReport& r, bool with_timing) {
  ojson j;
  j["schema_version"] = r.schema_version;
  j["complete"] = r.complete;
  j["config"] = config_to_json(r.config);
  j["model"] = {{"layer_count", r.model.layer_count},
                {"parameter_count", r.model.parameter_count},
                {"subject_layer", r.model.subject_layer},
                {"subject_kind", r.model.subject_kind},
                {"subject_neurons", r.model.subject_neurons},
                {"baseline_layers", r.model.baseline_layers},
                {"baseline_neurons", r.model.baseline_neurons}};
  j["importance"] = r.importance ? importance_json(*r.importance) : ojson(nullptr);
  j["clusters"] = r.clusters ? clusters_json(*r.clusters) : ojson(nullptr);
  j["sets"] = ojson::array();
  for (const auto& s : r.sets) {
    ojson e;
    e["label"] = s.label;
    e["paths"] = s.paths;
    e["samples"] = s.samples;
    e["status"] = std::string(to_string(s.status));
    e["idc"] = ojson::array();
    for (const auto& i : s.idc) {
      e["idc"].push_back({{"m", i.m},
                          {"value", i.value},
                          {"covered", i.covered},
                          {"incc_exact", i.total.exact ? ojson(*i.total.exact) : ojson(nullptr)},
                          {"incc_log10", i.total.log10},
                          {"excluded", i.excluded}});
    }
    e["baselines"] = s.baselines ? baselines_json(*s.baselines) : ojson(nullptr);
    j["sets"].push_back(std::move(e));
  }
  j["warnings"] = r.warnings;
  j["stages"] = ojson::array();
  for (const auto& st : r.stages)
    j["stages"].push_back({{"name", st.name}, {"status", std::string(to_string(st.status))}, {"message", st.message}});
  if (with_timing) {
    ojson t;
    t["total_seconds"] = r.total_seconds;
    t["stages"] = ojson::object();
    for (const auto& st : r.stages) t["stages"][st.name] = st.seconds;
    j["timing"] = std::move(t);
  }
  return j;
}

CoverageReport report_from_json(const nlohmann::json& j) {
  CoverageReport r;
  try {
    j.at("schema_version").get_to(r.schema_version);
    if (r.schema_version != kReportSchemaVersion)
      throw FormatError("unsupported report schema version " + std::to_string(r.schema_version));
    j.at("complete").get_to(r.complete);
    r.config = config_from_json(j.at("config"));
    const auto& m = j.at("model");
    m.at("layer_count").get_to(r.model.layer_count);
    m.at("parameter_count").get_to(r.model.parameter_count);
    m.at("subject_layer").get_to(r.model.subject_layer);
    m.at("subject_kind").get_to(r.model.subject_kind);
    m.at("subject_neurons").get_to(r.model.subject_neurons);
    m.at("baseline_layers").get_to(r.model.baseline_layers);
    m.at("baseline_neurons").get_to(r.model.baseline_neurons);
    if (!j.at("importance").is_null()) r.importance = importance_from(j.at("importance"));
    if (!j.at("clusters").is_null()) r.clusters = clusters_from(j.at("clusters"));
    for (const auto& e : j.at("sets")) {
      SetResult s;
      e.at("label").get_to(s.label);
      e.at("paths").get_to(s.paths);
      e.at("samples").get_to(s.samples);
      s.status = parse_status(e.at("status").get<std::string>());
      for (const auto& i : e.at("idc")) {
        IdcEntry entry;
        i.at("m").get_to(entry.m);
        i.at("value").get_to(entry.value);
        i.at("covered").get_to(entry.covered);
        if (!i.at("incc_exact").is_null()) entry.total.exact = i.at("incc_exact").get<std::uint64_t>();
        i.at("incc_log10").get_to(entry.total.log10);
        i.at("excluded").get_to(entry.excluded);
        s.idc.push_back(std::move(entry));
      }
      if (!e.at("baselines").is_null()) {
        const auto& b = e.at("baselines");
        s.baselines = BaselineValues{b.at("nc"), b.at("kmnc"), b.at("nbc"), b.at("snac"), b.at("tknc")};
      }
      r.sets.push_back(std::move(s));
    }
    j.at("warnings").get_to(r.warnings);
    std::map<std::string, double> seconds;
    if (j.contains("timing")) {
      j.at("timing").at("total_seconds").get_to(r.total_seconds);
      for (const auto& [name, value] : j.at("timing").at("stages").items()) seconds[name] = value.get<double>();
    }
    for (const auto& st : j.at("stages")) {
      StageRecord rec;
      st.at("name").get_to(rec.name);
      rec.status = parse_status(st.at("status").get<std::string>());
      st.at("message").get_to(rec.message);
      if (auto it = seconds.find(rec.name); it != seconds.end()) rec.seconds = it->second;
      r.stages.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
  return r;
}

std::string dump_report(const CoverageReport& report, bool with_timing) {
  return report_to_json(report, with_timing).dump(2) + "\n";
}

void validate_report(const CoverageReport& r) {
  const auto ratio = [](double v, const std::string& what) {
    if (!(v >= 0.0 && v <= 1.0)) throw FormatError(what + " = " + std::to_string(v) + " is outside [0, 1]");
  };
  for (const auto& s : r.sets) {
    for (const auto& i : s.idc) {
      const std::string what = "set '" + s.label + "' IDC_" + std::to_string(i.m);
      ratio(i.value, what);
      if (i.total.exact && i.covered > *i.total.exact)
        throw FormatError(what + ": covered " + std::to_string(i.covered) + " exceeds total " +
                          std::to_string(*i.total.exact));
      if (!i.total.exact && i.covered > 0 && std::log10(static_cast<double>(i.covered)) > i.total.log10 + 1e-9)
        throw FormatError(what + ": covered exceeds total");
    }
    if (s.baselines) {
      const auto& b = *s.baselines;
      const std::string p = "set '" + s.label + "' ";
      ratio(b.nc, p + "NC");
      ratio(b.kmnc, p + "KMNC");
      ratio(b.nbc, p + "NBC");
      ratio(b.snac, p + "SNAC");
      ratio(b.tknc, p + "TKNC");
    }
  }
}

void save_report(const std::filesystem::path& path, const CoverageReport& report) {
  write_text(path, dump_report(report));
}

CoverageReport load_report(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  try {
    CoverageReport r = report_from_json(j);
    validate_report(r);
    return r;
  } catch (const Error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

Comparison compare_reports(const std::vector<std::pair<std::string, CoverageReport>>& reports) {
  if (reports.size() < 2) throw ConfigError("compare needs at least two reports");
  const auto& first = reports.front().second;
  auto sorted_m = [](std::vector<std::size_t> m) {
    std::sort(m.begin(), m.end());
    return m;
  };
  const auto m_values = sorted_m(first.config.m);
  for (const auto& [name, r] : reports) {
    if (r.model.subject_layer != first.model.subject_layer)
      throw ConfigError("report '" + name + "' uses subject layer " + std::to_string(r.model.subject_layer) +
                        ", '" + reports.front().first + "' uses " + std::to_string(first.model.subject_layer));
    if (sorted_m(r.config.m) != m_values)
      throw ConfigError("report '" + name + "' measures different m values than '" + reports.front().first + "'");
  }

  Comparison c;
  for (auto m : m_values) c.criteria.push_back("IDC_" + std::to_string(m));
  const bool any_baselines = std::any_of(reports.begin(), reports.end(), [](const auto& p) {
    return std::any_of(p.second.sets.begin(), p.second.sets.end(), [](const SetResult& s) { return s.baselines; });
  });
  if (any_baselines)
    for (const char* name : {"NC", "KMNC", "NBC", "SNAC", "TKNC"}) c.criteria.emplace_back(name);

  std::vector<const SetResult*> column_sets;
  for (const auto& [name, r] : reports)
    for (const auto& s : r.sets) {
      c.columns.emplace_back(name, s.label);
      column_sets.push_back(&s);
    }

  const auto lookup = [&](std::size_t row, const SetResult& s) -> std::optional<double> {
    if (s.status != Status::Ok) return std::nullopt;
    if (row < m_values.size()) {
      for (const auto& i : s.idc)
        if (i.m == m_values[row]) return i.value;
      return std::nullopt;
    }
    if (!s.baselines) return std::nullopt;
    const auto& b = *s.baselines;
    const double values[] = {b.nc, b.kmnc, b.nbc, b.snac, b.tknc};
    return values[row - m_values.size()];
  };

  c.matrix.assign(c.criteria.size(), {});
  for (std::size_t row = 0; row < c.criteria.size(); ++row) {
    for (std::size_t col = 0; col < c.columns.size(); ++col) c.matrix[row].push_back(lookup(row, *column_sets[col]));
    const bool has_base = !c.matrix[row].empty() && c.matrix[row].front().has_value();
    const double base = has_base ? *c.matrix[row].front() : 0.0;
    for (std::size_t col = 0; col < c.columns.size(); ++col) {
      ComparisonCell cell{c.criteria[row], c.columns[col].second, c.columns[col].first, c.matrix[row][col], {}};
      if (cell.value && has_base) cell.delta = *cell.value - base;
      c.cells.push_back(std::move(cell));
    }
  }
  return c;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::string csv_number(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, *v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string comparison_csv(const Comparison& c) {
  std::string out = "criterion,set,report,value,delta\n";
  for (const auto& cell : c.cells) {
    out += csv_field(cell.criterion) + ',' + csv_field(cell.set) + ',' + csv_field(cell.report) + ',' +
           csv_number(cell.value) + ',' + csv_number(cell.delta) + '\n';
  }
  return out;
}

ojson comparison_plot_data(const Comparison& c) {
  ojson j;
  j["criteria"] = c.criteria;
  j["columns"] = ojson::array();
  for (const auto& [report, set] : c.columns) j["columns"].push_back({{"report", report}, {"set", set}});
  j["matrix"] = ojson::array();
  for (const auto& row : c.matrix) {
    ojson r = ojson::array();
    for (const auto& v : row) r.push_back(v ? ojson(*v) : ojson(nullptr));
    j["matrix"].push_back(std::move(r));
  }
  return j;
}

const char* report_schema() {
  return R"schema({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "Coverage report",
  "type": "object",
  "required": ["schema_version", "complete", "config", "model", "importance", "clusters", "sets", "warnings", "stages"],
  "additionalProperties": false,
  "properties": {
    "schema_version": {"const": 1},
    "complete": {"type": "boolean"},
    "config": {
      "type": "object",
      "required": ["model", "weights", "train", "tests", "subject_layer", "m", "candidates", "seed",
                   "silhouette_sample", "importance_mode", "baselines", "baseline_layers", "nc_raw",
                   "nc_threshold", "kmnc_sections", "tknc_k", "timeout_seconds", "threads"],
      "additionalProperties": false,
      "properties": {
        "model": {"type": "string"},
        "weights": {"type": "string"},
        "train": {"type": "string"},
        "tests": {
          "type": "array",
          "items": {
            "type": "object",
            "required": ["label", "paths"],
            "additionalProperties": false,
            "properties": {
              "label": {"type": "string"},
              "paths": {"type": "array", "items": {"type": "string"}, "minItems": 1}
            }
          }
        },
        "subject_layer": {"type": "integer"},
        "m": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "candidates": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1},
        "seed": {"type": "integer", "minimum": 0},
        "silhouette_sample": {"type": "integer", "minimum": 0},
        "importance_mode": {"enum": ["signed", "absolute"]},
        "baselines": {"type": "boolean"},
        "baseline_layers": {"type": "array", "items": {"type": "integer"}},
        "nc_raw": {"type": "boolean"},
        "nc_threshold": {"type": "number"},
        "kmnc_sections": {"type": "integer", "minimum": 1},
        "tknc_k": {"type": "integer", "minimum": 1},
        "timeout_seconds": {"type": "number", "exclusiveMinimum": 0},
        "threads": {"type": "integer", "minimum": 0}
      }
    },
    "model": {
      "type": "object",
      "required": ["layer_count", "parameter_count", "subject_layer", "subject_kind", "subject_neurons",
                   "baseline_layers", "baseline_neurons"],
      "additionalProperties": false,
      "properties": {
        "layer_count": {"type": "integer", "minimum": 0},
        "parameter_count": {"type": "integer", "minimum": 0},
        "subject_layer": {"type": "integer", "minimum": 0},
        "subject_kind": {"type": "string"},
        "subject_neurons": {"type": "integer", "minimum": 0},
        "baseline_layers": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "baseline_neurons": {"type": "integer", "minimum": 0}
      }
    },
    "importance": {
      "oneOf": [
        {"type": "null"},
        {
          "type": "object",
          "required": ["subject_layer", "mode", "input_count", "m", "important", "ranking", "totals"],
          "additionalProperties": false,
          "properties": {
            "subject_layer": {"type": "integer", "minimum": 0},
            "mode": {"enum": ["signed", "absolute"]},
            "input_count": {"type": "integer", "minimum": 0},
            "m": {"type": "integer", "minimum": 1},
            "important": {"type": "array", "items": {"type": "integer", "minimum": 0}},
            "ranking": {"type": "array", "items": {"type": "integer", "minimum": 0}},
            "totals": {"type": "array", "items": {"type": "number"}}
          }
        }
      ]
    },
    "clusters": {
      "oneOf": [
        {"type": "null"},
        {
          "type": "object",
          "required": ["subject_layer", "training_count", "options", "neurons"],
          "additionalProperties": false,
          "properties": {
            "subject_layer": {"type": "integer", "minimum": 0},
            "training_count": {"type": "integer", "minimum": 0},
            "options": {
              "type": "object",
              "required": ["candidates", "seed", "silhouette_sample", "max_iter", "tol", "restarts"],
              "additionalProperties": false,
              "properties": {
                "candidates": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1},
                "seed": {"type": "integer", "minimum": 0},
                "silhouette_sample": {"type": "integer", "minimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
                "tol": {"type": "number", "minimum": 0},
                "restarts": {"type": "integer", "minimum": 1}
              }
            },
            "neurons": {
              "type": "array",
              "items": {
                "type": "object",
                "required": ["neuron", "degenerate", "clusters", "centroids", "silhouette", "scores",
                             "min_activation", "max_activation"],
                "additionalProperties": false,
                "properties": {
                  "neuron": {"type": "integer", "minimum": 0},
                  "degenerate": {"type": "boolean"},
                  "clusters": {"type": "integer", "minimum": 1},
                  "centroids": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                  "silhouette": {"type": "number", "minimum": -1, "maximum": 1},
                  "scores": {
                    "type": "array",
                    "items": {
                      "type": "object",
                      "required": ["clusters", "silhouette"],
                      "properties": {
                        "clusters": {"type": "integer", "minimum": 2},
                        "silhouette": {"type": "number", "minimum": -1, "maximum": 1}
                      }
                    }
                  },
                  "min_activation": {"type": "number"},
                  "max_activation": {"type": "number"}
                }
              }
            }
          }
        }
      ]
    },
    "sets": {
      "type": "array",
      "items": {
        "type": "object",
        "required": ["label", "paths", "samples", "status", "idc", "baselines"],
        "additionalProperties": false,
        "properties": {
          "label": {"type": "string"},
          "paths": {"type": "array", "items": {"type": "string"}},
          "samples": {"type": "integer", "minimum": 0},
          "status": {"enum": ["ok", "timeout", "failed", "skipped"]},
          "idc": {
            "type": "array",
            "items": {
              "type": "object",
              "required": ["m", "value", "covered", "incc_exact", "incc_log10", "excluded"],
              "additionalProperties": false,
              "properties": {
                "m": {"type": "integer", "minimum": 1},
                "value": {"type": "number", "minimum": 0, "maximum": 1},
                "covered": {"type": "integer", "minimum": 0},
                "incc_exact": {"type": ["integer", "null"], "minimum": 1},
                "incc_log10": {"type": "number", "minimum": 0},
                "excluded": {"type": "array", "items": {"type": "integer", "minimum": 0}}
              }
            }
          },
          "baselines": {
            "oneOf": [
              {"type": "null"},
              {
                "type": "object",
                "required": ["nc", "kmnc", "nbc", "snac", "tknc"],
                "additionalProperties": false,
                "properties": {
                  "nc": {"type": "number", "minimum": 0, "maximum": 1},
                  "kmnc": {"type": "number", "minimum": 0, "maximum": 1},
                  "nbc": {"type": "number", "minimum": 0, "maximum": 1},
                  "snac": {"type": "number", "minimum": 0, "maximum": 1},
                  "tknc": {"type": "number", "minimum": 0, "maximum": 1}
                }
              }
            ]
          }
        }
      }
    },
    "warnings": {"type": "array", "items": {"type": "string"}},
    "stages": {
      "type": "array",
      "items": {
        "type": "object",
        "required": ["name", "status", "message"],
        "additionalProperties": false,
        "properties": {
          "name": {"type": "string"},
          "status": {"enum": ["ok", "timeout", "failed", "skipped"]},
          "message": {"type": "string"}
        }
      }
    },
    "timing": {
      "type": "object",
      "required": ["total_seconds", "stages"],
      "additionalProperties": false,
      "properties": {
        "total_seconds": {"type": "number", "minimum": 0},
        "stages": {"type": "object", "additionalProperties": {"type": "number", "minimum": 0}}
      }
    }
  }
}
)schema";
}

}  // namespace idc
