#include "idc/relevance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "idc/io.hpp"

namespace idc {

namespace {

double stabilize(double z, double epsilon) { return z + (z >= 0.0 ? epsilon : -epsilon); }

RelevanceTensor dense_backward(const Layer& layer, const Tensor& a, const RelevanceTensor& r_out,
                               double epsilon) {
  const std::size_t in = layer.weights.shape()[0];
  const std::size_t out = layer.weights.shape()[1];
  const auto w = layer.weights.data();
  std::vector<double> z(out, 0.0);
  for (std::size_t j = 0; j < in; ++j) {
    const double aj = a[j];
    if (aj == 0.0) continue;
    const float* row = w.data() + j * out;
    for (std::size_t k = 0; k < out; ++k) z[k] += aj * row[k];
  }
  std::vector<double> s(out);
  for (std::size_t k = 0; k < out; ++k) s[k] = r_out[k] / stabilize(z[k], epsilon);
  RelevanceTensor r_in(a.shape());
  for (std::size_t j = 0; j < in; ++j) {
    const double aj = a[j];
    if (aj == 0.0) continue;
    const float* row = w.data() + j * out;
    double acc = 0.0;
    for (std::size_t k = 0; k < out; ++k) acc += row[k] * s[k];
    r_in[j] = aj * acc;
  }
  return r_in;
}

// Visits every (output position, kernel tap) pair that touches a real input element.
template <typename Visit>
void for_each_tap(const Layer& layer, const Shape& in_shape, const Shape& out_shape, std::size_t kh,
                  std::size_t kw, Visit&& visit) {
  const std::size_t ih = in_shape[0], iw = in_shape[1];
  const std::size_t pad_t = window_axis(ih, kh, layer.stride_h, layer.padding).pad_before;
  const std::size_t pad_l = window_axis(iw, kw, layer.stride_w, layer.padding).pad_before;
  for (std::size_t oy = 0; oy < out_shape[0]; ++oy) {
    for (std::size_t ox = 0; ox < out_shape[1]; ++ox) {
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const long iy = static_cast<long>(oy * layer.stride_h + ky) - static_cast<long>(pad_t);
        if (iy < 0 || iy >= static_cast<long>(ih)) continue;
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const long ix = static_cast<long>(ox * layer.stride_w + kx) - static_cast<long>(pad_l);
          if (ix < 0 || ix >= static_cast<long>(iw)) continue;
          visit(oy * out_shape[1] + ox, static_cast<std::size_t>(iy) * iw + static_cast<std::size_t>(ix),
                ky * kw + kx);
        }
      }
    }
  }
}

RelevanceTensor conv_backward(const Layer& layer, const Tensor& a, const Shape& out_shape,
                              const RelevanceTensor& r_out, double epsilon) {
  const auto& ws = layer.weights.shape();
  const std::size_t kh = ws[0], kw = ws[1], cin = ws[2], cout = ws[3];
  const float* w = layer.weights.data().data();
  const float* x = a.data().data();
  std::vector<double> z(r_out.size(), 0.0);
  for_each_tap(layer, a.shape(), out_shape, kh, kw, [&](std::size_t op, std::size_t ip, std::size_t tap) {
    const float* px = x + ip * cin;
    const float* wk = w + tap * cin * cout;
    double* pz = z.data() + op * cout;
    for (std::size_t ic = 0; ic < cin; ++ic) {
      const double v = px[ic];
      if (v == 0.0) continue;
      const float* wr = wk + ic * cout;
      for (std::size_t oc = 0; oc < cout; ++oc) pz[oc] += v * wr[oc];
    }
  });
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = r_out[i] / stabilize(z[i], epsilon);
  RelevanceTensor r_in(a.shape());
  for_each_tap(layer, a.shape(), out_shape, kh, kw, [&](std::size_t op, std::size_t ip, std::size_t tap) {
    const float* px = x + ip * cin;
    const float* wk = w + tap * cin * cout;
    const double* ps = z.data() + op * cout;
    for (std::size_t ic = 0; ic < cin; ++ic) {
      const double v = px[ic];
      if (v == 0.0) continue;
      const float* wr = wk + ic * cout;
      double acc = 0.0;
      for (std::size_t oc = 0; oc < cout; ++oc) acc += wr[oc] * ps[oc];
      r_in[ip * cin + ic] += v * acc;
    }
  });
  return r_in;
}

RelevanceTensor pool_backward(const Layer& layer, const Tensor& a, const Tensor& pooled,
                              const RelevanceTensor& r_out) {
  const std::size_t c = a.shape()[2];
  const Shape& out_shape = pooled.shape();
  const std::size_t positions = out_shape[0] * out_shape[1];
  // First maximal input position per (output position, channel).
  std::vector<std::size_t> winner(positions * c, static_cast<std::size_t>(-1));
  for_each_tap(layer, a.shape(), out_shape, layer.pool_h, layer.pool_w,
               [&](std::size_t op, std::size_t ip, std::size_t) {
                 for (std::size_t ch = 0; ch < c; ++ch) {
                   auto& best = winner[op * c + ch];
                   if (best == static_cast<std::size_t>(-1) && a[ip * c + ch] == pooled[op * c + ch])
                     best = ip * c + ch;
                 }
               });
  RelevanceTensor r_in(a.shape());
  for (std::size_t i = 0; i < winner.size(); ++i) r_in[winner[i]] += r_out[i];
  return r_in;
}

void check_finite(const RelevanceTensor& r, std::size_t layer, LayerKind kind) {
  for (double v : r.data()) {
    if (!std::isfinite(v))
      throw NumericError("relevance: non-finite value propagating through layer " + std::to_string(layer) +
                         " (" + std::string(to_string(kind)) + ")");
  }
}

}  // namespace

RelevanceMap propagate_relevance(const Model& model, const ActivationTrace& trace, RelevanceTensor seed,
                                 double epsilon) {
  const std::size_t top = model.decision_layer();
  if (trace.outputs.size() != model.layer_count())
    throw ShapeError("relevance: trace has " + std::to_string(trace.outputs.size()) + " layers, model has " +
                     std::to_string(model.layer_count()));
  if (seed.shape() != model.output_shape(top))
    throw ShapeError("relevance: seed shape " + to_string(seed.shape()) + " does not match decision layer " +
                     to_string(model.output_shape(top)));
  RelevanceMap map;
  map.epsilon = epsilon;
  map.layers.resize(model.layer_count());
  for (std::size_t i = top + 1; i < model.layer_count(); ++i) map.layers[i] = seed;
  map.layers[top] = std::move(seed);
  for (std::size_t i = top + 1; i-- > 0;) {
    const Layer& layer = model.layer(i);
    const Tensor& a = i == 0 ? trace.input : trace.outputs[i - 1];
    const RelevanceTensor& r_out = map.layers[i];
    RelevanceTensor r_in;
    switch (layer.kind) {
      case LayerKind::Dense: r_in = dense_backward(layer, a, r_out, epsilon); break;
      case LayerKind::Conv2D: r_in = conv_backward(layer, a, model.output_shape(i), r_out, epsilon); break;
      case LayerKind::MaxPool2D: r_in = pool_backward(layer, a, trace.outputs[i], r_out); break;
      case LayerKind::Flatten:
      case LayerKind::ReLU:
      case LayerKind::Softmax: r_in = r_out.reshaped(a.shape()); break;
    }
    check_finite(r_in, i, layer.kind);
    if (i == 0)
      map.input = std::move(r_in);
    else
      map.layers[i - 1] = std::move(r_in);
  }
  return map;
}

RelevanceMap backpropagate_relevance(const Model& model, const ActivationTrace& trace,
                                     std::size_t target_class, double epsilon) {
  if (target_class >= trace.decision.size())
    throw ConfigError("target class " + std::to_string(target_class) + " out of range (" +
                            std::to_string(trace.decision.size()) + " classes)");
  RelevanceTensor seed(trace.decision.shape(), 0.0);
  seed[target_class] = trace.decision[target_class];
  RelevanceMap map = propagate_relevance(model, trace, std::move(seed), epsilon);
  map.target_class = target_class;
  map.decision_value = trace.decision[target_class];
  return map;
}

Tensor input_relevance_map(const Model& model, const Tensor& input, std::size_t target_class, double epsilon) {
  const ActivationTrace trace = forward(model, input);
  const RelevanceMap map = backpropagate_relevance(model, trace, target_class, epsilon);
  Tensor out(input.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(map.input[i]);
  return out;
}

Tensor predicted_relevance_map(const Model& model, const Tensor& input, double epsilon) {
  return input_relevance_map(model, input, forward(model, input).predicted_class(), epsilon);
}

std::vector<double> neuron_relevance(const RelevanceTensor& r) {
  if (!is_feature_map(r.shape())) return r.values();
  const std::size_t channels = r.shape()[2];
  std::vector<double> out(channels, 0.0);
  for (std::size_t i = 0; i < r.size(); ++i) out[i % channels] += r[i];
  return out;
}

std::string_view to_string(ImportanceMode mode) {
  return mode == ImportanceMode::Absolute ? "absolute" : "signed";
}

ImportanceMode parse_importance_mode(std::string_view name) {
  if (name == "signed") return ImportanceMode::Signed;
  if (name == "absolute") return ImportanceMode::Absolute;
  throw ConfigError("unknown importance mode \"" + std::string(name) + "\" (expected signed|absolute)");
}

RelevanceMatrix collect_relevance(const Model& model, const Dataset& data, std::size_t subject_layer,
                                  Execution exec, const Deadline* deadline, double epsilon) {
  if (subject_layer >= model.layer_count())
    throw ConfigError("subject layer " + std::to_string(subject_layer) + " out of range");
  RelevanceMatrix m;
  m.rows = data.count();
  m.cols = model.neuron_count(subject_layer);
  m.values.assign(m.rows * m.cols, 0.0);
  parallel_for(
      m.rows, exec,
      [&](std::size_t r) {
        const ActivationTrace trace = forward(model, data.sample_tensor(r));
        const RelevanceMap map = backpropagate_relevance(model, trace, trace.predicted_class(), epsilon);
        const auto per_neuron = neuron_relevance(map.layers[subject_layer]);
        std::copy(per_neuron.begin(), per_neuron.end(), m.values.begin() + static_cast<std::ptrdiff_t>(r * m.cols));
      },
      deadline, "importance");
  return m;
}

ImportanceProfile ImportanceProfile::top(std::size_t count) const {
  if (count < 1 || count > ranking.size())
    throw ConfigError("m = " + std::to_string(count) + " outside [1, " + std::to_string(ranking.size()) + "]");
  ImportanceProfile p = *this;
  p.m = count;
  p.important.assign(ranking.begin(), ranking.begin() + static_cast<std::ptrdiff_t>(count));
  return p;
}

ImportanceProfile rank_importance(const RelevanceMatrix& relevance, std::size_t subject_layer, std::size_t m,
                                  ImportanceMode mode) {
  if (relevance.rows == 0) throw ConfigError("importance analysis needs at least one input");
  if (m < 1 || m > relevance.cols)
    throw ConfigError("m = " + std::to_string(m) + " outside [1, " + std::to_string(relevance.cols) + "]");
  ImportanceProfile p;
  p.subject_layer = subject_layer;
  p.mode = mode;
  p.input_count = relevance.rows;
  p.totals.resize(relevance.cols);
  std::vector<double> column(relevance.rows);
  for (std::size_t c = 0; c < relevance.cols; ++c) {
    for (std::size_t r = 0; r < relevance.rows; ++r) {
      const double v = relevance.values[r * relevance.cols + c];
      column[r] = mode == ImportanceMode::Absolute ? std::abs(v) : v;
    }
    std::sort(column.begin(), column.end());
    p.totals[c] = std::accumulate(column.begin(), column.end(), 0.0);
  }
  p.ranking.resize(relevance.cols);
  std::iota(p.ranking.begin(), p.ranking.end(), std::size_t{0});
  std::stable_sort(p.ranking.begin(), p.ranking.end(),
                   [&](std::size_t a, std::size_t b) { return p.totals[a] > p.totals[b]; });
  return p.top(m);
}

ImportanceProfile analyze_importance(const Model& model, const Dataset& inputs, std::size_t subject_layer,
                                     std::size_t m, ImportanceMode mode, Execution exec,
                                     const Deadline* deadline) {
  if (inputs.empty()) throw ConfigError("importance analysis needs a non-empty dataset");
  if (subject_layer >= model.layer_count())
    throw ConfigError("subject layer " + std::to_string(subject_layer) + " out of range");
  if (m < 1 || m > model.neuron_count(subject_layer))
    throw ConfigError("m = " + std::to_string(m) + " outside [1, " +
                      std::to_string(model.neuron_count(subject_layer)) + "]");
  return rank_importance(collect_relevance(model, inputs, subject_layer, exec, deadline), subject_layer, m, mode);
}

}  // namespace idc
