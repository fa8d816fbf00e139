#include "idc/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace idc {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

using nlohmann::json;

Dataset::Dataset(Shape sample_shape, std::vector<float> data,
                 std::optional<std::vector<std::uint32_t>> labels)
    : sample_shape_(std::move(sample_shape)),
      sample_size_(element_count(sample_shape_)),
      data_(std::move(data)),
      labels_(std::move(labels)) {
  if (sample_shape_.empty() || sample_size_ == 0)
    throw ShapeError("dataset sample shape must be non-empty with positive dimensions");
  if (data_.size() % sample_size_ != 0)
    throw ShapeError("dataset payload of " + std::to_string(data_.size()) +
                     " floats is not a multiple of sample size " + std::to_string(sample_size_));
  count_ = data_.size() / sample_size_;
  if (labels_ && labels_->size() != count_)
    throw ShapeError("dataset has " + std::to_string(labels_->size()) + " labels for " +
                     std::to_string(count_) + " samples");
}

std::span<const float> Dataset::sample(std::size_t i) const {
  if (i >= count_) throw ConfigError("sample " + std::to_string(i) + " out of range");
  return std::span<const float>(data_).subspan(i * sample_size_, sample_size_);
}

std::span<float> Dataset::sample(std::size_t i) {
  if (i >= count_) throw ConfigError("sample " + std::to_string(i) + " out of range");
  return std::span<float>(data_).subspan(i * sample_size_, sample_size_);
}

Tensor Dataset::sample_tensor(std::size_t i) const {
  const auto s = sample(i);
  return Tensor(sample_shape_, std::vector<float>(s.begin(), s.end()));
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  std::vector<float> data;
  data.reserve(indices.size() * sample_size_);
  std::optional<std::vector<std::uint32_t>> labels;
  if (labels_) labels.emplace();
  for (auto i : indices) {
    const auto s = sample(i);
    data.insert(data.end(), s.begin(), s.end());
    if (labels) labels->push_back((*labels_)[i]);
  }
  return Dataset(sample_shape_, std::move(data), std::move(labels));
}

Dataset Dataset::concat(std::span<const Dataset> parts) {
  if (parts.empty()) throw ShapeError("cannot concatenate zero datasets");
  std::vector<float> data;
  bool labelled = true;
  for (const auto& p : parts) {
    if (p.sample_shape() != parts.front().sample_shape())
      throw ShapeError("cannot concatenate datasets with sample shapes " +
                       to_string(parts.front().sample_shape()) + " and " + to_string(p.sample_shape()));
    data.insert(data.end(), p.data_.begin(), p.data_.end());
    labelled = labelled && p.has_labels();
  }
  std::optional<std::vector<std::uint32_t>> labels;
  if (labelled) {
    labels.emplace();
    for (const auto& p : parts) labels->insert(labels->end(), p.labels_->begin(), p.labels_->end());
  }
  return Dataset(parts.front().sample_shape(), std::move(data), std::move(labels));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + 4);
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v;
  std::memcpy(&v, bytes.data() + offset, 4);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_dataset(const Dataset& data) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + 4 * data.sample_shape().size() + 4 * data.data().size() +
              (data.has_labels() ? 4 * data.count() : 0));
  out.insert(out.end(), {'I', 'D', 'C', 'D'});
  put_u32(out, kDatasetVersion);
  put_u32(out, static_cast<std::uint32_t>(data.count()));
  put_u32(out, static_cast<std::uint32_t>(data.sample_shape().size()));
  for (auto d : data.sample_shape()) put_u32(out, static_cast<std::uint32_t>(d));
  if (data.has_labels())
    for (auto l : *data.labels()) put_u32(out, l);
  const auto* p = reinterpret_cast<const std::uint8_t*>(data.data().data());
  out.insert(out.end(), p, p + data.data().size() * sizeof(float));
  return out;
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes, const std::string& origin) {
  const auto fail = [&](const std::string& why) { return FormatError(origin + ": " + why); };
  if (bytes.size() < 16) throw fail("expected at least 16 header bytes, found " + std::to_string(bytes.size()));
  if (std::memcmp(bytes.data(), "IDCD", 4) != 0) throw fail("bad magic, not a dataset container");
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kDatasetVersion) throw fail("unsupported dataset version " + std::to_string(version));
  const std::size_t count = get_u32(bytes, 8);
  const std::size_t rank = get_u32(bytes, 12);
  if (rank == 0) throw fail("sample rank must be positive");
  const std::size_t header = 16 + 4 * rank;
  if (bytes.size() < header)
    throw fail("expected " + std::to_string(header) + " bytes, found " + std::to_string(bytes.size()));
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    shape[i] = get_u32(bytes, 16 + 4 * i);
    if (shape[i] == 0) throw fail("sample dimension " + std::to_string(i) + " is zero");
  }
  const std::size_t payload = count * element_count(shape) * sizeof(float);
  const std::size_t plain = header + payload;
  const std::size_t labelled = plain + 4 * count;
  bool has_labels = false;
  if (bytes.size() == labelled && count > 0) {
    has_labels = true;
  } else if (bytes.size() != plain) {
    const std::size_t expected = bytes.size() < plain ? plain : labelled;
    throw fail("expected " + std::to_string(expected) + " bytes, found " + std::to_string(bytes.size()) +
               " (count " + std::to_string(count) + ", sample shape " + to_string(shape) + ")");
  }
  std::size_t offset = header;
  std::optional<std::vector<std::uint32_t>> labels;
  if (has_labels) {
    labels.emplace(count);
    std::memcpy(labels->data(), bytes.data() + offset, 4 * count);
    offset += 4 * count;
  }
  std::vector<float> data(count * element_count(shape));
  std::memcpy(data.data(), bytes.data() + offset, payload);
  return Dataset(std::move(shape), std::move(data), std::move(labels));
}

Dataset load_dataset(const std::filesystem::path& path) {
  return decode_dataset(read_file(path), path.string());
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  write_file(path, encode_dataset(data));
}

// ---------------------------------------------------------------------------
// Model manifest

namespace {

std::size_t get_size(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || !j[key].is_number_unsigned())
    throw FormatError(where + ": missing or invalid \"" + key + "\"");
  return j[key].get<std::size_t>();
}

Shape get_shape(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || !j[key].is_array()) throw FormatError(where + ": missing \"" + key + "\"");
  Shape s;
  for (const auto& d : j[key]) {
    if (!d.is_number_unsigned() || d.get<std::size_t>() == 0)
      throw FormatError(where + ": \"" + key + "\" must hold positive integers");
    s.push_back(d.get<std::size_t>());
  }
  return s;
}

std::pair<std::size_t, std::size_t> get_pair(const json& j, const char* key, const std::string& where,
                                              std::pair<std::size_t, std::size_t> fallback) {
  if (!j.contains(key)) return fallback;
  const Shape s = get_shape(j, key, where);
  if (s.size() != 2) throw FormatError(where + ": \"" + key + "\" must have two entries");
  return {s[0], s[1]};
}

Padding get_padding(const json& j, const std::string& where) {
  if (!j.contains("padding")) return Padding::Valid;
  if (!j["padding"].is_string()) throw FormatError(where + ": padding must be a string");
  const auto p = parse_padding(j["padding"].get<std::string>());
  if (!p) throw FormatError(where + ": unknown padding \"" + j["padding"].get<std::string>() + "\"");
  return *p;
}

Tensor read_blob(const json& layer, const char* key, const Shape& expected, std::span<const float> weights,
                 const std::string& where, std::size_t& used) {
  if (!layer.contains(key)) throw FormatError(where + ": missing \"" + key + "\" blob");
  const json& blob = layer[key];
  const std::string bwhere = where + " " + key;
  const std::size_t offset = get_size(blob, "offset", bwhere);
  const std::size_t length = get_size(blob, "length", bwhere);
  if (blob.contains("shape") && get_shape(blob, "shape", bwhere) != expected)
    throw FormatError(bwhere + ": shape " + to_string(get_shape(blob, "shape", bwhere)) +
                      " disagrees with " + to_string(expected));
  if (length != element_count(expected))
    throw FormatError(bwhere + ": length " + std::to_string(length) + " but shape " + to_string(expected) +
                      " needs " + std::to_string(element_count(expected)));
  if (offset > weights.size() || length > weights.size() - offset)
    throw FormatError(bwhere + ": blob out of range (floats " + std::to_string(offset) + ".." +
                      std::to_string(offset + length) + " of " + std::to_string(weights.size()) + ")");
  used += length;
  const auto s = weights.subspan(offset, length);
  return Tensor(expected, std::vector<float>(s.begin(), s.end()));
}

}  // namespace

Model decode_model(const std::string& manifest_json, std::span<const float> weights, ModelInfo* info) {
  json doc;
  try {
    doc = json::parse(manifest_json);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw FormatError("manifest must be a JSON object");
  const std::size_t version = get_size(doc, "format_version", "manifest");
  if (version != kManifestVersion)
    throw FormatError("unsupported manifest format_version " + std::to_string(version) + " (expected " +
                      std::to_string(kManifestVersion) + ")");
  const Shape input = get_shape(doc, "input_shape", "manifest");
  if (!doc.contains("layers") || !doc["layers"].is_array() || doc["layers"].empty())
    throw FormatError("manifest: \"layers\" must be a non-empty array");

  ModelInfo local;
  local.weight_floats = weights.size();
  std::vector<Layer> layers;
  Shape current = input;
  for (std::size_t i = 0; i < doc["layers"].size(); ++i) {
    const json& l = doc["layers"][i];
    const std::string where = "manifest layer " + std::to_string(i);
    if (!l.is_object() || !l.contains("kind") || !l["kind"].is_string())
      throw FormatError(where + ": missing \"kind\"");
    const std::string kind_name = l["kind"].get<std::string>();
    const auto kind = parse_layer_kind(kind_name);
    if (!kind) throw FormatError(where + ": unknown layer kind \"" + kind_name + "\"");
    Layer layer;
    switch (*kind) {
      case LayerKind::Dense: {
        if (current.size() != 1)
          throw ShapeError(where + " (Dense): expects a vector input, got " + to_string(current));
        const std::size_t units = get_size(l, "units", where);
        Tensor w = read_blob(l, "weights", {current[0], units}, weights, where, local.used_floats);
        Tensor b = read_blob(l, "bias", {units}, weights, where, local.used_floats);
        layer = Layer::dense(std::move(w), std::move(b));
        break;
      }
      case LayerKind::Conv2D: {
        if (current.size() != 3)
          throw ShapeError(where + " (Conv2D): expects [H, W, C] input, got " + to_string(current));
        const std::size_t filters = get_size(l, "filters", where);
        const auto [kh, kw] = get_pair(l, "kernel", where, {0, 0});
        if (kh == 0) throw FormatError(where + ": missing \"kernel\"");
        const auto [sh, sw] = get_pair(l, "stride", where, {1, 1});
        Tensor w = read_blob(l, "weights", {kh, kw, current[2], filters}, weights, where, local.used_floats);
        Tensor b = read_blob(l, "bias", {filters}, weights, where, local.used_floats);
        layer = Layer::conv2d(std::move(w), std::move(b), sh, sw, get_padding(l, where));
        break;
      }
      case LayerKind::MaxPool2D: {
        const auto [ph, pw] = get_pair(l, "pool", where, {2, 2});
        const auto [sh, sw] = get_pair(l, "stride", where, {ph, pw});
        layer = Layer::max_pool(ph, pw, sh, sw, get_padding(l, where));
        break;
      }
      case LayerKind::Flatten: layer = Layer::flatten(); break;
      case LayerKind::ReLU: layer = Layer::relu(); break;
      case LayerKind::Softmax: layer = Layer::softmax(); break;
    }
    local.parameter_counts.push_back(layer.parameter_count());
    layers.push_back(std::move(layer));
    current = layer_output_shape(layers.back(), current, i);
  }
  Model model(input, std::move(layers));
  if (info) *info = std::move(local);
  return model;
}

Model load_model(const std::filesystem::path& manifest_path, const std::filesystem::path& weights_path,
                 ModelInfo* info) {
  const std::string manifest = read_text(manifest_path);
  const auto bytes = read_file(weights_path);
  if (bytes.size() % sizeof(float) != 0)
    throw FormatError(weights_path.string() + ": size " + std::to_string(bytes.size()) +
                      " is not a multiple of 4 bytes");
  std::vector<float> weights(bytes.size() / sizeof(float));
  std::memcpy(weights.data(), bytes.data(), bytes.size());
  try {
    return decode_model(manifest, weights, info);
  } catch (const Error& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
}

EncodedModel encode_model(const Model& model) {
  EncodedModel out;
  json doc;
  doc["format_version"] = kManifestVersion;
  doc["input_shape"] = model.input_shape();
  doc["layers"] = json::array();
  auto blob = [&](const Tensor& t) {
    json b = {{"offset", out.weights.size()}, {"length", t.size()}, {"shape", t.shape()}};
    out.weights.insert(out.weights.end(), t.data().begin(), t.data().end());
    return b;
  };
  for (const Layer& layer : model.layers()) {
    json l = {{"kind", to_string(layer.kind)}};
    switch (layer.kind) {
      case LayerKind::Dense:
        l["units"] = layer.weights.shape()[1];
        l["weights"] = blob(layer.weights);
        l["bias"] = blob(layer.bias);
        break;
      case LayerKind::Conv2D:
        l["filters"] = layer.weights.shape()[3];
        l["kernel"] = {layer.weights.shape()[0], layer.weights.shape()[1]};
        l["stride"] = {layer.stride_h, layer.stride_w};
        l["padding"] = to_string(layer.padding);
        l["weights"] = blob(layer.weights);
        l["bias"] = blob(layer.bias);
        break;
      case LayerKind::MaxPool2D:
        l["pool"] = {layer.pool_h, layer.pool_w};
        l["stride"] = {layer.stride_h, layer.stride_w};
        l["padding"] = to_string(layer.padding);
        break;
      default:
        break;
    }
    doc["layers"].push_back(std::move(l));
  }
  out.manifest = doc.dump(1) + "\n";
  return out;
}

void save_model(const std::filesystem::path& manifest_path, const std::filesystem::path& weights_path,
                const Model& model) {
  const EncodedModel enc = encode_model(model);
  write_text(manifest_path, enc.manifest);
  write_file(weights_path, std::span(reinterpret_cast<const std::uint8_t*>(enc.weights.data()),
                                     enc.weights.size() * sizeof(float)));
}

}  // namespace idc
