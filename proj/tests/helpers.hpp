#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "idc/io.hpp"
#include "idc/model.hpp"

namespace idc::test {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(IDC_FIXTURE_DIR) / name;
}

inline Model load_fixture_model(const std::string& stem, ModelInfo* info = nullptr) {
  return load_model(fixture(stem + ".json"), fixture(stem + ".bin"), info);
}

inline nlohmann::json load_sidecar(const std::string& stem) {
  return nlohmann::json::parse(read_text(fixture(stem + ".sidecar.json")));
}

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(u(rng));
  return t;
}

inline Dataset random_dataset(std::mt19937_64& rng, const Shape& sample_shape, std::size_t count, double lo = 0.0,
                              double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<float> data(element_count(sample_shape) * count);
  for (auto& v : data) v = static_cast<float>(u(rng));
  return Dataset(sample_shape, std::move(data));
}

/// Dense/ReLU stack ending in Softmax.
inline Model random_mlp(std::mt19937_64& rng, std::size_t inputs, const std::vector<std::size_t>& hidden,
                        std::size_t classes) {
  std::vector<Layer> layers;
  std::size_t width = inputs;
  for (auto h : hidden) {
    layers.push_back(Layer::dense(random_tensor(rng, {width, h}), random_tensor(rng, {h}, -0.2, 0.2)));
    layers.push_back(Layer::relu());
    width = h;
  }
  layers.push_back(Layer::dense(random_tensor(rng, {width, classes}), random_tensor(rng, {classes}, -0.2, 0.2)));
  layers.push_back(Layer::softmax());
  return Model({inputs}, std::move(layers));
}

/// Conv/ReLU/MaxPool, Flatten, Dense, Softmax on an [h, w, c] input.
inline Model random_convnet(std::mt19937_64& rng, std::size_t h, std::size_t w, std::size_t c, Padding padding,
                            std::size_t filters = 3, std::size_t classes = 4) {
  std::vector<Layer> layers;
  layers.push_back(Layer::conv2d(random_tensor(rng, {3, 3, c, filters}), random_tensor(rng, {filters}, -0.2, 0.2), 1,
                                 1, padding));
  layers.push_back(Layer::relu());
  layers.push_back(Layer::max_pool(2, 2, 2, 2, padding));
  Shape shape{h, w, c};
  for (std::size_t i = 0; i < layers.size(); ++i) shape = layer_output_shape(layers[i], shape, i);
  layers.push_back(Layer::flatten());
  const std::size_t flat = element_count(shape);
  layers.push_back(Layer::dense(random_tensor(rng, {flat, classes}), random_tensor(rng, {classes}, -0.2, 0.2)));
  layers.push_back(Layer::softmax());
  return Model({h, w, c}, std::move(layers));
}

}  // namespace idc::test
