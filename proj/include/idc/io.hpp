#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "idc/model.hpp"
#include "idc/tensor.hpp"

namespace idc {

/// Contiguous batch of equally-shaped float samples with optional integer labels.
class Dataset {
 public:
  Dataset() = default;
  Dataset(Shape sample_shape, std::vector<float> data,
          std::optional<std::vector<std::uint32_t>> labels = std::nullopt);

  const Shape& sample_shape() const noexcept { return sample_shape_; }
  std::size_t sample_size() const noexcept { return sample_size_; }
  std::size_t count() const noexcept { return count_; }
  bool empty() const noexcept { return count_ == 0; }

  std::span<const float> sample(std::size_t i) const;
  std::span<float> sample(std::size_t i);
  Tensor sample_tensor(std::size_t i) const;
  std::span<const float> data() const noexcept { return data_; }

  bool has_labels() const noexcept { return labels_.has_value(); }
  const std::optional<std::vector<std::uint32_t>>& labels() const noexcept { return labels_; }

  /// Selected samples in the given order.
  Dataset subset(std::span<const std::size_t> indices) const;
  /// Samples of `parts` in order. Labels are kept only if every part has them.
  static Dataset concat(std::span<const Dataset> parts);

  bool operator==(const Dataset&) const = default;

 private:
  Shape sample_shape_;
  std::size_t sample_size_ = 0;
  std::size_t count_ = 0;
  std::vector<float> data_;
  std::optional<std::vector<std::uint32_t>> labels_;
};

// Dataset container layout (all little-endian):
//   "IDCD" | u32 version | u32 count | u32 rank | u32 dims[rank] | [u32 labels[count]] | f32 data
// The label block is present exactly when the file is count*4 bytes longer than the unlabelled
// layout.
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::uint32_t kManifestVersion = 1;

Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const std::filesystem::path& path, const Dataset& data);
std::vector<std::uint8_t> encode_dataset(const Dataset& data);
Dataset decode_dataset(std::span<const std::uint8_t> bytes, const std::string& origin = "dataset");

/// Parsed manifest together with the bookkeeping the loader checks.
struct ModelInfo {
  std::uint32_t format_version = kManifestVersion;
  std::size_t weight_floats = 0;   // floats in the weight file
  std::size_t used_floats = 0;     // floats referenced by blobs
  std::vector<std::size_t> parameter_counts;
};

Model load_model(const std::filesystem::path& manifest_path,
                 const std::filesystem::path& weights_path, ModelInfo* info = nullptr);

/// Manifest JSON text and weight floats for `model`; blobs are laid out in layer order.
struct EncodedModel {
  std::string manifest;
  std::vector<float> weights;
};
EncodedModel encode_model(const Model& model);
Model decode_model(const std::string& manifest_json, std::span<const float> weights,
                   ModelInfo* info = nullptr);
void save_model(const std::filesystem::path& manifest_path,
                const std::filesystem::path& weights_path, const Model& model);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace idc
