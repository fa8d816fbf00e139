#include "idc/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "idc/io.hpp"

namespace idc {

namespace {

std::string layer_name(std::size_t index, LayerKind kind) {
  return "layer " + std::to_string(index) + " (" + std::string(to_string(kind)) + ")";
}

}  // namespace

Shape layer_output_shape(const Layer& layer, const Shape& in, std::size_t index) {
  const auto fail = [&](const std::string& why) {
    return ShapeError(layer_name(index, layer.kind) + ": " + why + "; input shape " + to_string(in));
  };
  switch (layer.kind) {
    case LayerKind::Dense: {
      if (layer.weights.rank() != 2) throw fail("weights must be [in, out]");
      if (in.size() != 1 || in[0] != layer.weights.shape()[0])
        throw fail("expects a vector of " + std::to_string(layer.weights.shape()[0]));
      const std::size_t out = layer.weights.shape()[1];
      if (layer.bias.size() != out) throw fail("bias length must be " + std::to_string(out));
      return {out};
    }
    case LayerKind::Conv2D: {
      if (layer.weights.rank() != 4) throw fail("weights must be [kh, kw, in_ch, out_ch]");
      const auto& w = layer.weights.shape();
      if (in.size() != 3 || in[2] != w[2])
        throw fail("expects [H, W, " + std::to_string(w[2]) + "]");
      if (layer.bias.size() != w[3]) throw fail("bias length must be " + std::to_string(w[3]));
      if (layer.stride_h == 0 || layer.stride_w == 0) throw fail("stride must be positive");
      if (layer.padding == Padding::Valid && (in[0] < w[0] || in[1] < w[1]))
        throw fail("kernel larger than input");
      const auto rows = window_axis(in[0], w[0], layer.stride_h, layer.padding);
      const auto cols = window_axis(in[1], w[1], layer.stride_w, layer.padding);
      return {rows.output, cols.output, w[3]};
    }
    case LayerKind::MaxPool2D: {
      if (in.size() != 3) throw fail("expects [H, W, C]");
      if (layer.pool_h == 0 || layer.pool_w == 0 || layer.stride_h == 0 || layer.stride_w == 0)
        throw fail("pool size and stride must be positive");
      if (layer.padding == Padding::Valid && (in[0] < layer.pool_h || in[1] < layer.pool_w))
        throw fail("pool window larger than input");
      const auto rows = window_axis(in[0], layer.pool_h, layer.stride_h, layer.padding);
      const auto cols = window_axis(in[1], layer.pool_w, layer.stride_w, layer.padding);
      return {rows.output, cols.output, in[2]};
    }
    case LayerKind::Flatten:
      return {element_count(in)};
    case LayerKind::ReLU:
      return in;
    case LayerKind::Softmax:
      if (in.size() != 1) throw fail("expects a vector");
      return in;
  }
  throw fail("unknown layer kind");
}

namespace {

Tensor dense_forward(const Layer& layer, const Tensor& x) {
  const std::size_t in = layer.weights.shape()[0];
  const std::size_t out = layer.weights.shape()[1];
  const auto w = layer.weights.data();
  std::vector<double> acc(out);
  for (std::size_t k = 0; k < out; ++k) acc[k] = layer.bias[k];
  for (std::size_t j = 0; j < in; ++j) {
    const double a = x[j];
    if (a == 0.0) continue;
    const float* row = w.data() + j * out;
    for (std::size_t k = 0; k < out; ++k) acc[k] += a * row[k];
  }
  Tensor y({out});
  for (std::size_t k = 0; k < out; ++k) y[k] = static_cast<float>(acc[k]);
  return y;
}

Tensor conv_forward(const Layer& layer, const Tensor& x, const Shape& out_shape) {
  const auto& ws = layer.weights.shape();
  const std::size_t kh = ws[0], kw = ws[1], cin = ws[2], cout = ws[3];
  const std::size_t ih = x.shape()[0], iw = x.shape()[1];
  const std::size_t oh = out_shape[0], ow = out_shape[1];
  const std::size_t pad_t = window_axis(ih, kh, layer.stride_h, layer.padding).pad_before;
  const std::size_t pad_l = window_axis(iw, kw, layer.stride_w, layer.padding).pad_before;
  const auto w = layer.weights.data();
  Tensor y(out_shape);
  std::vector<double> acc(cout);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t oc = 0; oc < cout; ++oc) acc[oc] = layer.bias[oc];
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const long iy = static_cast<long>(oy * layer.stride_h + ky) - static_cast<long>(pad_t);
        if (iy < 0 || iy >= static_cast<long>(ih)) continue;
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const long ix = static_cast<long>(ox * layer.stride_w + kx) - static_cast<long>(pad_l);
          if (ix < 0 || ix >= static_cast<long>(iw)) continue;
          const float* px = x.data().data() + (static_cast<std::size_t>(iy) * iw + ix) * cin;
          const float* wk = w.data() + (ky * kw + kx) * cin * cout;
          for (std::size_t ic = 0; ic < cin; ++ic) {
            const double a = px[ic];
            if (a == 0.0) continue;
            const float* wr = wk + ic * cout;
            for (std::size_t oc = 0; oc < cout; ++oc) acc[oc] += a * wr[oc];
          }
        }
      }
      float* py = y.data().data() + (oy * ow + ox) * cout;
      for (std::size_t oc = 0; oc < cout; ++oc) py[oc] = static_cast<float>(acc[oc]);
    }
  }
  return y;
}

Tensor pool_forward(const Layer& layer, const Tensor& x, const Shape& out_shape) {
  const std::size_t ih = x.shape()[0], iw = x.shape()[1], c = x.shape()[2];
  const std::size_t oh = out_shape[0], ow = out_shape[1];
  const std::size_t pad_t = window_axis(ih, layer.pool_h, layer.stride_h, layer.padding).pad_before;
  const std::size_t pad_l = window_axis(iw, layer.pool_w, layer.stride_w, layer.padding).pad_before;
  Tensor y(out_shape, -std::numeric_limits<float>::infinity());
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      float* py = y.data().data() + (oy * ow + ox) * c;
      for (std::size_t ky = 0; ky < layer.pool_h; ++ky) {
        const long iy = static_cast<long>(oy * layer.stride_h + ky) - static_cast<long>(pad_t);
        if (iy < 0 || iy >= static_cast<long>(ih)) continue;
        for (std::size_t kx = 0; kx < layer.pool_w; ++kx) {
          const long ix = static_cast<long>(ox * layer.stride_w + kx) - static_cast<long>(pad_l);
          if (ix < 0 || ix >= static_cast<long>(iw)) continue;
          const float* px = x.data().data() + (static_cast<std::size_t>(iy) * iw + ix) * c;
          for (std::size_t ch = 0; ch < c; ++ch) py[ch] = std::max(py[ch], px[ch]);
        }
      }
    }
  }
  return y;
}

Tensor softmax_forward(const Tensor& x) {
  const float peak = *std::max_element(x.data().begin(), x.data().end());
  std::vector<double> e(x.size());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    e[i] = std::exp(static_cast<double>(x[i]) - peak);
    total += e[i];
  }
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = static_cast<float>(e[i] / total);
  return y;
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Dense: return "Dense";
    case LayerKind::Conv2D: return "Conv2D";
    case LayerKind::MaxPool2D: return "MaxPool2D";
    case LayerKind::Flatten: return "Flatten";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::Softmax: return "Softmax";
  }
  return "?";
}

std::optional<LayerKind> parse_layer_kind(std::string_view name) {
  for (auto kind : {LayerKind::Dense, LayerKind::Conv2D, LayerKind::MaxPool2D, LayerKind::Flatten,
                    LayerKind::ReLU, LayerKind::Softmax}) {
    if (to_string(kind) == name) return kind;
  }
  return std::nullopt;
}

std::string_view to_string(Padding padding) { return padding == Padding::Same ? "same" : "valid"; }

std::optional<Padding> parse_padding(std::string_view name) {
  if (name == "valid") return Padding::Valid;
  if (name == "same") return Padding::Same;
  return std::nullopt;
}

AxisGeometry window_axis(std::size_t input, std::size_t window, std::size_t stride,
                         Padding padding) {
  if (padding == Padding::Valid) return {(input - window) / stride + 1, 0};
  const std::size_t out = (input + stride - 1) / stride;
  const std::size_t needed = (out - 1) * stride + window;
  const std::size_t pad_total = needed > input ? needed - input : 0;
  return {out, pad_total / 2};
}

Layer Layer::dense(Tensor weights, Tensor bias) {
  Layer l;
  l.kind = LayerKind::Dense;
  l.weights = std::move(weights);
  l.bias = std::move(bias);
  return l;
}

Layer Layer::conv2d(Tensor weights, Tensor bias, std::size_t stride_h, std::size_t stride_w,
                    Padding padding) {
  Layer l;
  l.kind = LayerKind::Conv2D;
  l.weights = std::move(weights);
  l.bias = std::move(bias);
  l.stride_h = stride_h;
  l.stride_w = stride_w;
  l.padding = padding;
  return l;
}

Layer Layer::max_pool(std::size_t pool_h, std::size_t pool_w, std::size_t stride_h,
                      std::size_t stride_w, Padding padding) {
  Layer l;
  l.kind = LayerKind::MaxPool2D;
  l.pool_h = pool_h;
  l.pool_w = pool_w;
  l.stride_h = stride_h;
  l.stride_w = stride_w;
  l.padding = padding;
  return l;
}

Layer Layer::flatten() {
  Layer l;
  l.kind = LayerKind::Flatten;
  return l;
}

Layer Layer::relu() {
  Layer l;
  l.kind = LayerKind::ReLU;
  return l;
}

Layer Layer::softmax() {
  Layer l;
  l.kind = LayerKind::Softmax;
  return l;
}

bool is_feature_map(const Shape& output_shape) { return output_shape.size() == 3; }

std::size_t neuron_count(const Shape& output_shape) {
  return is_feature_map(output_shape) ? output_shape[2] : element_count(output_shape);
}

Model::Model(Shape input_shape, std::vector<Layer> layers)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
  if (input_shape_.empty() || element_count(input_shape_) == 0)
    throw ShapeError("model input shape must be non-empty with positive dimensions");
  if (layers_.empty()) throw ShapeError("model has no layers");
  Shape current = input_shape_;
  neuron_offsets_.push_back(0);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& layer = layers_[i];
    const bool weighted = layer.kind == LayerKind::Dense || layer.kind == LayerKind::Conv2D;
    if (!weighted && (!layer.weights.empty() || !layer.bias.empty()))
      throw ShapeError(layer_name(i, layer.kind) + ": only Dense and Conv2D carry weights");
    if (layer.kind == LayerKind::Softmax && i + 1 != layers_.size())
      throw ShapeError(layer_name(i, layer.kind) + ": Softmax is only supported as the last layer");
    current = layer_output_shape(layer, current, i);
    output_shapes_.push_back(current);
    neuron_offsets_.push_back(neuron_offsets_.back() + idc::neuron_count(current));
    if (layer.kind != LayerKind::Flatten && layer.kind != LayerKind::Softmax)
      neuron_layers_.push_back(i);
  }
  decision_layer_ = layers_.back().kind == LayerKind::Softmax ? layers_.size() - 2 : layers_.size() - 1;
  if (layers_.size() == 1 && layers_.back().kind == LayerKind::Softmax)
    throw ShapeError("model consists only of a Softmax layer");
  if (neuron_layers_.empty()) throw ShapeError("model has no neuron-bearing layers");
}

NeuronId Model::neuron_id(std::size_t layer, std::size_t neuron) const {
  if (layer >= layers_.size() || neuron >= neuron_count(layer))
    throw ConfigError("neuron (" + std::to_string(layer) + ", " + std::to_string(neuron) +
                            ") out of range");
  return neuron_offsets_[layer] + neuron;
}

std::pair<std::size_t, std::size_t> Model::locate(NeuronId id) const {
  if (id >= total_neurons()) throw ConfigError("neuron id " + std::to_string(id) + " out of range");
  const auto it = std::upper_bound(neuron_offsets_.begin(), neuron_offsets_.end(), id);
  const auto layer = static_cast<std::size_t>(it - neuron_offsets_.begin()) - 1;
  return {layer, id - neuron_offsets_[layer]};
}

std::size_t Model::resolve_layer(long index) const {
  if (index >= 0) {
    if (static_cast<std::size_t>(index) >= layers_.size())
      throw ConfigError("layer index " + std::to_string(index) + " out of range (model has " +
                        std::to_string(layers_.size()) + " layers)");
    return static_cast<std::size_t>(index);
  }
  const auto back = static_cast<std::size_t>(-index);
  if (back > neuron_layers_.size())
    throw ConfigError("layer index " + std::to_string(index) + " out of range (model has " +
                      std::to_string(neuron_layers_.size()) + " neuron layers)");
  return neuron_layers_[neuron_layers_.size() - back];
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.parameter_count();
  return n;
}

std::size_t ActivationTrace::predicted_class() const {
  const auto d = decision.data();
  return static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
}

ActivationTrace forward(const Model& model, const Tensor& input) {
  if (input.shape() != model.input_shape())
    throw ShapeError("layer 0 (" + std::string(to_string(model.layer(0).kind)) +
                     "): input shape " + to_string(input.shape()) + " does not match model input " +
                     to_string(model.input_shape()));
  ActivationTrace trace;
  trace.input = input;
  trace.outputs.reserve(model.layer_count());
  const Tensor* x = &trace.input;
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    const Layer& layer = model.layer(i);
    const Shape& out_shape = model.output_shape(i);
    Tensor y;
    switch (layer.kind) {
      case LayerKind::Dense: y = dense_forward(layer, *x); break;
      case LayerKind::Conv2D: y = conv_forward(layer, *x, out_shape); break;
      case LayerKind::MaxPool2D: y = pool_forward(layer, *x, out_shape); break;
      case LayerKind::Flatten: y = x->reshaped(out_shape); break;
      case LayerKind::ReLU: {
        y = *x;
        for (auto& v : y.data()) v = std::max(v, 0.0f);
        break;
      }
      case LayerKind::Softmax: y = softmax_forward(*x); break;
    }
    trace.outputs.push_back(std::move(y));
    x = &trace.outputs.back();
  }
  trace.decision = trace.outputs[model.decision_layer()];
  return trace;
}

std::vector<float> neuron_activations(const Tensor& output) {
  if (!is_feature_map(output.shape())) return output.values();
  const std::size_t channels = output.shape()[2];
  const std::size_t positions = output.shape()[0] * output.shape()[1];
  std::vector<double> sums(channels, 0.0);
  const auto d = output.data();
  for (std::size_t p = 0; p < positions; ++p)
    for (std::size_t c = 0; c < channels; ++c) sums[c] += d[p * channels + c];
  std::vector<float> out(channels);
  for (std::size_t c = 0; c < channels; ++c) out[c] = static_cast<float>(sums[c] / positions);
  return out;
}

float neuron_activation(const ActivationTrace& trace, std::size_t layer, std::size_t neuron) {
  if (layer >= trace.outputs.size())
    throw ConfigError("layer " + std::to_string(layer) + " out of range");
  const Tensor& out = trace.outputs[layer];
  if (neuron >= neuron_count(out.shape()))
    throw ConfigError("neuron " + std::to_string(neuron) + " out of range for layer " +
                            std::to_string(layer));
  if (!is_feature_map(out.shape())) return out[neuron];
  const std::size_t channels = out.shape()[2];
  const std::size_t positions = out.shape()[0] * out.shape()[1];
  double sum = 0.0;
  for (std::size_t p = 0; p < positions; ++p) sum += out[p * channels + neuron];
  return static_cast<float>(sum / positions);
}

std::vector<double> ActivationMatrix::column(std::size_t c) const {
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = at(r, c);
  return out;
}

ActivationMatrix collect_activations(const Model& model, const Dataset& data,
                                     std::span<const std::size_t> layers, Execution exec,
                                     const Deadline* deadline) {
  ActivationMatrix m;
  m.layers.assign(layers.begin(), layers.end());
  m.offsets.push_back(0);
  for (auto l : m.layers) {
    if (l >= model.layer_count()) throw ConfigError("layer " + std::to_string(l) + " out of range");
    m.offsets.push_back(m.offsets.back() + model.neuron_count(l));
  }
  m.rows = data.count();
  m.values.assign(m.rows * m.cols(), 0.0f);
  parallel_for(
      m.rows, exec,
      [&](std::size_t r) {
        const ActivationTrace trace = forward(model, data.sample_tensor(r));
        float* dst = m.values.data() + r * m.cols();
        for (std::size_t li = 0; li < m.layers.size(); ++li) {
          const auto acts = neuron_activations(trace.outputs[m.layers[li]]);
          std::copy(acts.begin(), acts.end(), dst + m.offsets[li]);
        }
      },
      deadline, "forward");
  return m;
}

}  // namespace idc
