#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "helpers.hpp"
#include "idc/errors.hpp"
#include "idc/io.hpp"
#include "idc/model.hpp"

using namespace idc;

namespace {

// Straightforward reference convolution with framework-style same padding.
Tensor naive_conv(const Tensor& in, const Tensor& w, const Tensor& b, std::size_t s, bool same) {
  const std::size_t H = in.shape()[0], W = in.shape()[1], C = in.shape()[2];
  const std::size_t kh = w.shape()[0], kw = w.shape()[1], O = w.shape()[3];
  std::size_t oh, ow;
  long pt = 0, pl = 0;
  if (same) {
    oh = (H + s - 1) / s;
    ow = (W + s - 1) / s;
    pt = std::max<long>(0, static_cast<long>((oh - 1) * s + kh) - static_cast<long>(H)) / 2;
    pl = std::max<long>(0, static_cast<long>((ow - 1) * s + kw) - static_cast<long>(W)) / 2;
  } else {
    oh = (H - kh) / s + 1;
    ow = (W - kw) / s + 1;
  }
  Tensor out({oh, ow, O});
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x)
      for (std::size_t o = 0; o < O; ++o) {
        double acc = b[o];
        for (std::size_t i = 0; i < kh; ++i)
          for (std::size_t j = 0; j < kw; ++j) {
            const long iy = static_cast<long>(y * s + i) - pt, ix = static_cast<long>(x * s + j) - pl;
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
            for (std::size_t c = 0; c < C; ++c)
              acc += static_cast<double>(in[(iy * W + ix) * C + c]) * w[((i * kw + j) * C + c) * O + o];
          }
        out[(y * ow + x) * O + o] = static_cast<float>(acc);
      }
  return out;
}

Tensor naive_pool(const Tensor& in, std::size_t k, std::size_t s, bool same) {
  const std::size_t H = in.shape()[0], W = in.shape()[1], C = in.shape()[2];
  std::size_t oh, ow;
  long pt = 0, pl = 0;
  if (same) {
    oh = (H + s - 1) / s;
    ow = (W + s - 1) / s;
    pt = std::max<long>(0, static_cast<long>((oh - 1) * s + k) - static_cast<long>(H)) / 2;
    pl = std::max<long>(0, static_cast<long>((ow - 1) * s + k) - static_cast<long>(W)) / 2;
  } else {
    oh = (H - k) / s + 1;
    ow = (W - k) / s + 1;
  }
  Tensor out({oh, ow, C});
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x)
      for (std::size_t c = 0; c < C; ++c) {
        float best = -std::numeric_limits<float>::infinity();
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < k; ++j) {
            const long iy = static_cast<long>(y * s + i) - pt, ix = static_cast<long>(x * s + j) - pl;
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
            best = std::max(best, in[(iy * W + ix) * C + c]);
          }
        out[(y * ow + x) * C + c] = best;
      }
  return out;
}

}  // namespace

TEST(Forward, IdentityDense) {
  Model m({1}, {Layer::dense(Tensor({1, 1}, {1.0f}), Tensor({1}, {0.0f}))});
  const auto t = forward(m, Tensor({1}, {2.0f}));
  EXPECT_FLOAT_EQ(t.outputs[0][0], 2.0f);
  EXPECT_FLOAT_EQ(t.decision[0], 2.0f);
}

TEST(Forward, ReluClampsNegative) {
  Model m({1}, {Layer::dense(Tensor({1, 2}, {1.0f, -1.0f}), Tensor({2}, {0.0f, 1.0f})), Layer::relu()});
  const auto t = forward(m, Tensor({1}, {3.0f}));
  EXPECT_FLOAT_EQ(t.outputs[1][0], 3.0f);
  EXPECT_FLOAT_EQ(t.outputs[1][1], 0.0f);
}

TEST(Forward, SoftmaxSumsToOne) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Model m = test::random_mlp(rng, 6, {5}, 4);
    const auto t = forward(m, test::random_tensor(rng, {6}, -5, 5));
    double sum = 0;
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_GE(t.outputs.back()[i], 0.0f);
      sum += t.outputs.back()[i];
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Forward, SoftmaxStableForLargeLogits) {
  Model m({2}, {Layer::dense(Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, {0, 0})), Layer::softmax()});
  const auto t = forward(m, Tensor({2}, {1000.0f, 999.0f}));
  EXPECT_NEAR(t.outputs[1][0], 1.0 / (1.0 + std::exp(-1.0)), 1e-6);
  EXPECT_TRUE(std::isfinite(t.outputs[1][1]));
}

TEST(Forward, OneByOneConvIdentity) {
  std::mt19937_64 rng(5);
  Tensor w({1, 1, 3, 3}, 0.0f);
  for (std::size_t c = 0; c < 3; ++c) w[c * 3 + c] = 1.0f;
  Model m({4, 5, 3}, {Layer::conv2d(w, Tensor({3}, 0.0f))});
  const Tensor x = test::random_tensor(rng, {4, 5, 3});
  EXPECT_EQ(forward(m, x).outputs[0].values(), x.values());
}

TEST(Forward, ConvMatchesNaiveReference) {
  std::mt19937_64 rng(11);
  for (bool same : {false, true})
    for (std::size_t stride : {1u, 2u})
      for (int trial = 0; trial < 5; ++trial) {
        const Tensor w = test::random_tensor(rng, {3, 2, 2, 3});
        const Tensor b = test::random_tensor(rng, {3});
        const Tensor x = test::random_tensor(rng, {7, 6, 2});
        Model m({7, 6, 2}, {Layer::conv2d(w, b, stride, stride, same ? Padding::Same : Padding::Valid)});
        const Tensor got = forward(m, x).outputs[0];
        const Tensor want = naive_conv(x, w, b, stride, same);
        ASSERT_EQ(got.shape(), want.shape());
        for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-5);
      }
}

TEST(Forward, MaxPoolMatchesNaiveReference) {
  std::mt19937_64 rng(12);
  for (bool same : {false, true})
    for (std::size_t k : {2u, 3u}) {
      const Tensor x = test::random_tensor(rng, {7, 5, 2}, -3, -1);  // all negative: padding must not win
      Model m({7, 5, 2}, {Layer::max_pool(k, k, 2, 2, same ? Padding::Same : Padding::Valid)});
      const Tensor got = forward(m, x).outputs[0];
      const Tensor want = naive_pool(x, k, 2, same);
      ASSERT_EQ(got.shape(), want.shape());
      EXPECT_EQ(got.values(), want.values());
    }
}

TEST(Forward, MaxPoolWindowMax) {
  Model m({2, 2, 1}, {Layer::max_pool(2, 2, 2, 2)});
  const auto t = forward(m, Tensor({2, 2, 1}, {1, 5, 3, 2}));
  EXPECT_EQ(t.outputs[0].shape(), (Shape{1, 1, 1}));
  EXPECT_FLOAT_EQ(t.outputs[0][0], 5.0f);
}

TEST(Forward, ShapeMismatchNamesLayer) {
  Model m({3}, {Layer::dense(Tensor({3, 2}, 0.0f), Tensor({2}, 0.0f))});
  try {
    forward(m, Tensor({4}, 0.0f));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 0"), std::string::npos) << e.what();
  }
}

TEST(Model, CompositionFailureNamesLayer) {
  try {
    Model({3}, {Layer::dense(Tensor({3, 2}, 0.0f), Tensor({2}, 0.0f)),
                Layer::dense(Tensor({4, 2}, 0.0f), Tensor({2}, 0.0f))});
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos) << e.what();
  }
}

TEST(Model, SoftmaxOnlyLast) {
  EXPECT_THROW(Model({2}, {Layer::softmax(), Layer::relu()}), Error);
}

TEST(Model, ResolveLayerAndDecision) {
  std::mt19937_64 rng(1);
  const Model m = test::random_convnet(rng, 8, 8, 1, Padding::Valid);
  // conv, relu, pool, flatten, dense, softmax
  EXPECT_EQ(m.decision_layer(), 4u);
  EXPECT_EQ(m.resolve_layer(-1), 4u);
  EXPECT_EQ(m.resolve_layer(-2), 2u);
  EXPECT_EQ(m.resolve_layer(0), 0u);
  EXPECT_THROW(m.resolve_layer(6), ConfigError);
  EXPECT_THROW(m.resolve_layer(-5), ConfigError);
  EXPECT_EQ(m.neuron_count(0), 3u);  // feature maps count once
}

TEST(Model, NeuronIdRoundTrip) {
  std::mt19937_64 rng(2);
  const Model m = test::random_mlp(rng, 5, {4, 3}, 2);
  std::size_t expected = 0;
  for (std::size_t l = 0; l < m.layer_count(); ++l)
    for (std::size_t n = 0; n < m.neuron_count(l); ++n) {
      const auto id = m.neuron_id(l, n);
      EXPECT_EQ(id, expected++);
      EXPECT_EQ(m.locate(id), std::make_pair(l, n));
    }
  EXPECT_EQ(m.total_neurons(), expected);
}

TEST(NeuronActivation, DenseElement) {
  Model m({2}, {Layer::dense(Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, 0.0f))});
  const auto t = forward(m, Tensor({2}, {1.0f, 5.0f}));
  EXPECT_FLOAT_EQ(neuron_activation(t, 0, 1), 5.0f);
  EXPECT_THROW(neuron_activation(t, 0, 2), Error);
  EXPECT_THROW(neuron_activation(t, 1, 0), Error);
}

TEST(NeuronActivation, FeatureMapMean) {
  EXPECT_FLOAT_EQ(neuron_activations(Tensor({2, 2, 1}, {1, 2, 3, 4}))[0], 2.5f);
}

TEST(NeuronActivation, FlattenPreservesValues) {
  std::mt19937_64 rng(4);
  Model m({2, 3, 2}, {Layer::relu(), Layer::flatten()});
  const auto t = forward(m, test::random_tensor(rng, {2, 3, 2}));
  for (std::size_t k = 0; k < 12; ++k) EXPECT_EQ(neuron_activation(t, 1, k), t.outputs[0][k]);
}

TEST(CollectActivations, SerialEqualsParallel) {
  std::mt19937_64 rng(6);
  const Model m = test::random_convnet(rng, 9, 9, 2, Padding::Same);
  const Dataset d = test::random_dataset(rng, {9, 9, 2}, 37);
  const auto layers = m.neuron_layers();
  const auto a = collect_activations(m, d, layers, Execution::Serial);
  const auto b = collect_activations(m, d, layers, Execution::Parallel);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.rows, 37u);
  // Row 5 agrees with a direct forward pass.
  const auto t = forward(m, d.sample_tensor(5));
  for (std::size_t li = 0; li < layers.size(); ++li)
    for (std::size_t n = 0; n < m.neuron_count(layers[li]); ++n)
      EXPECT_EQ(a.at(5, a.offsets[li] + n), neuron_activation(t, layers[li], n));
}

TEST(Deadline, ExpiredBudgetTimesOut) {
  std::mt19937_64 rng(7);
  const Model m = test::random_mlp(rng, 4, {3}, 2);
  const Dataset d = test::random_dataset(rng, {4}, 10);
  const Deadline gone(std::chrono::duration<double>(0.0));
  const std::size_t layer = 0;
  EXPECT_THROW(collect_activations(m, d, std::span(&layer, 1), Execution::Parallel, &gone), TimeoutError);
}
