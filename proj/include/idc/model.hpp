#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "idc/parallel.hpp"
#include "idc/tensor.hpp"

namespace idc {

class Dataset;

enum class LayerKind { Dense, Conv2D, MaxPool2D, Flatten, ReLU, Softmax };
enum class Padding { Valid, Same };

std::string_view to_string(LayerKind kind);
std::optional<LayerKind> parse_layer_kind(std::string_view name);
std::string_view to_string(Padding padding);
std::optional<Padding> parse_padding(std::string_view name);

/// Output extent and leading pad of one spatial axis of a sliding window.
struct AxisGeometry {
  std::size_t output = 0;
  std::size_t pad_before = 0;
};

/// Same padding follows the usual framework convention: output = ceil(in / stride), with any
/// odd pad placed after the data.
AxisGeometry window_axis(std::size_t input, std::size_t window, std::size_t stride, Padding padding);

struct Layer {
  LayerKind kind = LayerKind::ReLU;
  Tensor weights;  // Dense: [in, out]; Conv2D: [kh, kw, in_ch, out_ch]
  Tensor bias;     // [out]
  // Conv2D uses stride/padding with the kernel taken from `weights`; MaxPool2D also uses pool.
  std::size_t pool_h = 0, pool_w = 0;
  std::size_t stride_h = 1, stride_w = 1;
  Padding padding = Padding::Valid;

  static Layer dense(Tensor weights, Tensor bias);
  static Layer conv2d(Tensor weights, Tensor bias, std::size_t stride_h = 1,
                      std::size_t stride_w = 1, Padding padding = Padding::Valid);
  static Layer max_pool(std::size_t pool_h, std::size_t pool_w, std::size_t stride_h,
                        std::size_t stride_w, Padding padding = Padding::Valid);
  static Layer flatten();
  static Layer relu();
  static Layer softmax();

  std::size_t parameter_count() const { return weights.size() + bias.size(); }
  bool operator==(const Layer&) const = default;
};

/// Output shape of `layer` applied to `input`; throws ShapeError naming layer `index`.
Shape layer_output_shape(const Layer& layer, const Shape& input, std::size_t index);

/// Number of neurons held by a layer output: channels for [H, W, C] feature maps,
/// elements otherwise.
std::size_t neuron_count(const Shape& output_shape);
bool is_feature_map(const Shape& output_shape);

/// Identifier of a neuron across the whole model (n_{i,j} flattened).
using NeuronId = std::size_t;

/// Immutable feed-forward network. Construction checks that layer shapes compose.
class Model {
 public:
  Model(Shape input_shape, std::vector<Layer> layers);

  const Shape& input_shape() const noexcept { return input_shape_; }
  std::span<const Layer> layers() const noexcept { return layers_; }
  std::size_t layer_count() const noexcept { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }

  const Shape& output_shape(std::size_t layer) const { return output_shapes_.at(layer); }
  const Shape& layer_input_shape(std::size_t layer) const {
    return layer == 0 ? input_shape_ : output_shapes_.at(layer - 1);
  }

  std::size_t neuron_count(std::size_t layer) const { return idc::neuron_count(output_shape(layer)); }
  std::size_t total_neurons() const noexcept { return neuron_offsets_.back(); }
  NeuronId neuron_id(std::size_t layer, std::size_t neuron) const;
  std::pair<std::size_t, std::size_t> locate(NeuronId id) const;

  /// Layer whose output is the pre-softmax decision vector.
  std::size_t decision_layer() const noexcept { return decision_layer_; }
  std::size_t class_count() const { return element_count(output_shape(decision_layer_)); }

  /// Layers that carry analysable neurons: everything except Flatten and Softmax.
  const std::vector<std::size_t>& neuron_layers() const noexcept { return neuron_layers_; }

  /// Non-negative indices count from the input over all layers; negative indices count back
  /// from the output over neuron_layers(), so -1 is the decision layer and -2 the
  /// penultimate one.
  std::size_t resolve_layer(long index) const;

  std::size_t parameter_count() const;
  bool operator==(const Model& other) const {
    return input_shape_ == other.input_shape_ && layers_ == other.layers_;
  }

 private:
  Shape input_shape_;
  std::vector<Layer> layers_;
  std::vector<Shape> output_shapes_;
  std::vector<std::size_t> neuron_offsets_;
  std::vector<std::size_t> neuron_layers_;
  std::size_t decision_layer_ = 0;
};

/// Every layer output for one input.
struct ActivationTrace {
  Tensor input;
  std::vector<Tensor> outputs;  // one per layer
  Tensor decision;              // pre-softmax scores f(x)

  std::size_t predicted_class() const;
  bool operator==(const ActivationTrace&) const = default;
};

ActivationTrace forward(const Model& model, const Tensor& input);

/// phi(x, n): the element value, or the spatial mean of channel `neuron` for feature maps.
float neuron_activation(const ActivationTrace& trace, std::size_t layer, std::size_t neuron);

/// All neuron activations of one layer output, in neuron order.
std::vector<float> neuron_activations(const Tensor& output);

/// samples x neurons matrix; columns are the concatenated neurons of `layers`.
struct ActivationMatrix {
  std::vector<std::size_t> layers;
  std::vector<std::size_t> offsets;  // column offset of each layer, plus the total
  std::size_t rows = 0;
  std::vector<float> values;

  std::size_t cols() const { return offsets.empty() ? 0 : offsets.back(); }
  std::span<const float> row(std::size_t r) const {
    return std::span<const float>(values).subspan(r * cols(), cols());
  }
  float at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
  std::vector<double> column(std::size_t c) const;
  bool operator==(const ActivationMatrix&) const = default;
};

/// Forward pass over every sample, keeping neuron activations of `layers`.
ActivationMatrix collect_activations(const Model& model, const Dataset& data,
                                     std::span<const std::size_t> layers,
                                     Execution exec = Execution::Parallel,
                                     const Deadline* deadline = nullptr);

}  // namespace idc
