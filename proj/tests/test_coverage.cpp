#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "helpers.hpp"
#include "idc/coverage.hpp"
#include "idc/errors.hpp"

using namespace idc;

namespace {

ClusterModel toy_clusters(const std::vector<std::vector<double>>& centroids, std::size_t layer = 0) {
  ClusterModel c;
  c.subject_layer = layer;
  for (std::size_t i = 0; i < centroids.size(); ++i) {
    NeuronClusters n;
    n.neuron = i;
    n.centroids = centroids[i];
    n.degenerate = centroids[i].size() < 2;
    c.neurons.push_back(n);
  }
  return c;
}

ClusterModel counts_model(const std::vector<std::size_t>& counts) {
  std::vector<std::vector<double>> cs;
  for (auto k : counts) {
    std::vector<double> v;
    for (std::size_t i = 0; i < k; ++i) v.push_back(static_cast<double>(i));
    cs.push_back(v);
  }
  return toy_clusters(cs);
}

ActivationMatrix matrix(std::size_t rows, std::size_t cols, std::vector<float> values) {
  return ActivationMatrix{{0}, {0, cols}, rows, std::move(values)};
}

// Nearest centroid by scanning all of them, lower centroid on ties.
std::size_t scan_nearest(double v, const std::vector<double>& c) {
  std::size_t best = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double d = std::abs(v - c[i]), bd = std::abs(v - c[best]);
    if (d < bd || (d == bd && c[i] < c[best])) best = i;
  }
  return best;
}

// Materialises the INCC and marks each element hit by some row.
double materialized_idc(const ClusterModel& clusters, const ActivationMatrix& acts) {
  std::vector<const NeuronClusters*> live;
  for (const auto& n : clusters.neurons)
    if (!n.degenerate) live.push_back(&n);
  std::size_t total = 1;
  for (auto* n : live) total *= n->cluster_count();
  std::vector<bool> hit(total, false);
  for (std::size_t r = 0; r < acts.rows; ++r) {
    std::size_t index = 0;
    for (auto* n : live) index = index * n->cluster_count() + scan_nearest(acts.at(r, n->neuron), n->centroids);
    hit[index] = true;
  }
  const auto covered = static_cast<std::size_t>(std::count(hit.begin(), hit.end(), true));
  return static_cast<double>(covered) / static_cast<double>(total);
}

struct NaiveBaselines {
  double nc, kmnc, nbc, snac, tknc;
};

NaiveBaselines naive_baselines(const NeuronRanges& r, const ActivationMatrix& a, const BaselineConfig& cfg) {
  const std::size_t S = r.low.size();
  std::set<std::size_t> nc, tk, lo, hi;
  std::set<std::pair<std::size_t, std::size_t>> sec;
  for (std::size_t row = 0; row < a.rows; ++row) {
    for (std::size_t l = 0; l + 1 < r.offsets.size(); ++l) {
      const std::size_t b = r.offsets[l], e = r.offsets[l + 1];
      double mn = std::numeric_limits<double>::infinity(), mx = -mn;
      for (std::size_t n = b; n < e; ++n) {
        mn = std::min(mn, static_cast<double>(a.at(row, n)));
        mx = std::max(mx, static_cast<double>(a.at(row, n)));
      }
      std::vector<std::pair<double, std::size_t>> order;
      for (std::size_t n = b; n < e; ++n) {
        double v = a.at(row, n);
        if (cfg.nc_normalize) v = mx > mn ? (v - mn) / (mx - mn) : 0.0;
        if (v > cfg.nc_threshold) nc.insert(n);
        order.push_back({-static_cast<double>(a.at(row, n)), n});
      }
      std::sort(order.begin(), order.end());
      for (std::size_t i = 0; i < std::min(cfg.tknc_k, order.size()); ++i) tk.insert(order[i].second);
    }
    for (std::size_t n = 0; n < S; ++n) {
      const double v = a.at(row, n);
      if (v < r.low[n]) lo.insert(n);
      if (v > r.high[n]) hi.insert(n);
      if (r.low[n] == r.high[n]) {
        if (v == r.low[n])
          for (std::size_t k = 0; k < cfg.kmnc_sections; ++k) sec.insert({n, k});
        continue;
      }
      const double width = (r.high[n] - r.low[n]) / static_cast<double>(cfg.kmnc_sections);
      for (std::size_t k = 0; k < cfg.kmnc_sections; ++k) {
        const double s0 = r.low[n] + static_cast<double>(k) * width;
        const bool last = k + 1 == cfg.kmnc_sections;
        if (v >= s0 && (last ? v <= r.high[n] : v < s0 + width)) {
          sec.insert({n, k});
          break;
        }
      }
    }
  }
  const double s = static_cast<double>(S);
  return {nc.size() / s, sec.size() / (s * cfg.kmnc_sections), (lo.size() + hi.size()) / (2 * s), hi.size() / s,
          tk.size() / s};
}

}  // namespace

TEST(Incc, PaperSizes) {
  EXPECT_EQ(build_incc(counts_model({2, 2, 2, 2, 2, 2})).size.exact, 64u);
  EXPECT_EQ(build_incc(counts_model({2, 3, 3, 3, 3, 3})).size.exact, 486u);
  EXPECT_EQ(build_incc(counts_model(std::vector<std::size_t>(12, 2))).size.exact, 4096u);
  EXPECT_EQ(build_incc(counts_model({2, 2, 2, 2, 2, 3, 3, 3, 3, 3, 3, 3})).size.exact, 69984u);
}

TEST(Incc, HugeSpaceInLogScale) {
  const auto size = build_incc(counts_model(std::vector<std::size_t>(84, 2))).size;
  EXPECT_FALSE(size.exact.has_value());
  EXPECT_NEAR(size.log10, 84 * std::log10(2.0), 1e-9);
  EXPECT_NEAR(size.log10, 25.28, 0.01);
  EXPECT_NEAR(size.approx() / 1.934e25, 1.0, 1e-3);
}

TEST(Incc, ExactUpToInt63) {
  const auto size = incc_size(std::vector<std::size_t>(62, 2));
  ASSERT_TRUE(size.exact.has_value());
  EXPECT_EQ(*size.exact, 1ULL << 62);
  EXPECT_FALSE(incc_size(std::vector<std::size_t>(64, 2)).exact.has_value());
}

TEST(Incc, DegenerateNeuronsExcluded) {
  const auto incc = build_incc(toy_clusters({{0, 1}, {5}, {0, 1, 2}}));
  EXPECT_EQ(incc.neurons, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(incc.excluded, (std::vector<std::size_t>{1}));
  EXPECT_EQ(incc.size.exact, 6u);
  EXPECT_THROW(build_incc(ClusterModel{}), ConfigError);
}

TEST(Incc, EnumeratorVisitsEveryCombinationOnce) {
  const auto incc = build_incc(counts_model({2, 3, 4}));
  auto it = incc.enumerate();
  CombinationKey key;
  std::vector<CombinationKey> seen;
  while (it.next(key)) seen.push_back(key);
  ASSERT_EQ(seen.size(), 24u);
  EXPECT_TRUE(std::is_sorted(seen.begin(), seen.end()));
  EXPECT_EQ(std::set<CombinationKey>(seen.begin(), seen.end()).size(), 24u);
  EXPECT_EQ(seen.back(), (CombinationKey{1, 2, 3}));
}

TEST(MapInput, NearestCentroid) {
  const std::vector<double> c{0, 10};
  EXPECT_EQ(nearest_centroid(2, c), 0u);
  EXPECT_EQ(nearest_centroid(6, c), 1u);
  EXPECT_EQ(nearest_centroid(5, c), 0u);
}

TEST(MapInput, MatchesScanOracle) {
  std::mt19937_64 rng(41);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> c(2 + rng() % 4);
    for (auto& x : c) x = static_cast<double>(rng() % 20);
    std::sort(c.begin(), c.end());
    c.erase(std::unique(c.begin(), c.end()), c.end());
    const double v = static_cast<double>(rng() % 41) / 2.0;
    EXPECT_EQ(nearest_centroid(v, c), scan_nearest(v, c));
  }
}

TEST(Idc, OneNeuronHalfCovered) {
  Model m({1}, {Layer::dense(Tensor({1, 1}, {1}), Tensor({1}, {0}))});
  const ClusterModel c = toy_clusters({{0, 10}});
  const Dataset test({1}, {1.0f, 2.0f, 0.5f});
  EXPECT_DOUBLE_EQ(idc::idc(m, c, test), 0.5);
}

TEST(Idc, ToyFullyCovered) {
  Model m({2}, {Layer::dense(Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, {0, 0}))});
  const ClusterModel c = toy_clusters({{0, 1}, {0, 1}});
  const Dataset train({2}, {0, 0, 0, 1, 1, 0, 1, 1});
  EXPECT_DOUBLE_EQ(idc::idc(m, c, train), 1.0);
}

TEST(Idc, EmptyTestSetIsZero) {
  Model m({1}, {Layer::dense(Tensor({1, 1}, {1}), Tensor({1}, {0}))});
  EXPECT_EQ(idc::idc(m, toy_clusters({{0, 10}}), Dataset({1}, {})), 0.0);
}

TEST(Idc, StreamingEqualsMaterialized) {
  std::mt19937_64 rng(42);
  for (int t = 0; t < 50; ++t) {
    const std::size_t width = 3 + rng() % 5;
    std::vector<std::vector<double>> cs;
    for (std::size_t n = 0; n < width; ++n) {
      std::vector<double> c(rng() % 5 == 0 ? 1 : 2 + rng() % 3);
      for (auto& x : c) x = std::uniform_real_distribution<double>(-1, 1)(rng);
      std::sort(c.begin(), c.end());
      cs.push_back(c);
    }
    const ClusterModel clusters = toy_clusters(cs);
    const std::size_t rows = rng() % 200;
    std::vector<float> v(rows * width);
    for (auto& x : v) x = static_cast<float>(std::uniform_real_distribution<double>(-1.2, 1.2)(rng));
    const ActivationMatrix acts = matrix(rows, width, v);
    const auto acc = accumulate_coverage(acts, 0, std::span(&clusters, 1), nullptr, {}, Execution::Parallel);
    EXPECT_EQ(acc.idc[0].value(), materialized_idc(clusters, acts));
  }
}

TEST(Idc, MonotoneAndMergeable) {
  std::mt19937_64 rng(43);
  const ClusterModel clusters = toy_clusters({{0, 0.5, 1}, {0, 1}, {-1, 0, 1, 2}});
  std::vector<float> v(300 * 3);
  for (auto& x : v) x = static_cast<float>(std::uniform_real_distribution<double>(-1, 2)(rng));
  IdcState whole(clusters), a(clusters), b(clusters);
  double previous = 0;
  for (std::size_t r = 0; r < 300; ++r) {
    const std::span<const float> row(v.data() + 3 * r, 3);
    whole.add(row);
    (r % 3 ? a : b).add(row);
    EXPECT_GE(whole.value(), previous);
    previous = whole.value();
  }
  a.merge(b);
  EXPECT_EQ(a.keys(), whole.keys());
  EXPECT_THROW(a.merge(IdcState(toy_clusters({{0, 1}}))), ConfigError);
}

TEST(Idc, AllDegenerateHasSingleElement) {
  IdcState s(toy_clusters({{1}, {2}}));
  EXPECT_EQ(s.total().exact, 1u);
  EXPECT_EQ(s.value(), 0.0);
  s.add(std::vector<float>{1, 2});
  EXPECT_EQ(s.value(), 1.0);
}

// ---------------------------------------------------------------------------

TEST(Baselines, KmncHandBinning) {
  const NeuronRanges r{{0}, {0, 1}, {0.0}, {1.0}};
  const BaselineConfig cfg{0.75, true, 4, 3};
  BaselineState s(r, cfg);
  s.add(std::vector<float>{0.25f});
  s.add(std::vector<float>{0.75f});
  EXPECT_DOUBLE_EQ(s.values().kmnc, 0.5);
}

TEST(Baselines, UpperCornerHit) {
  const NeuronRanges r{{0}, {0, 2}, {0.0, 0.0}, {1.0, 1.0}};
  BaselineState s(r, {});
  s.add(std::vector<float>{1.5f, 0.5f});
  const auto v = s.values();
  EXPECT_DOUBLE_EQ(v.snac, 0.5);
  EXPECT_DOUBLE_EQ(v.nbc, 0.25);
  s.add(std::vector<float>{-1.0f, 0.5f});
  EXPECT_DOUBLE_EQ(s.values().nbc, 0.5);
  EXPECT_DOUBLE_EQ(s.values().snac, 0.5);
}

TEST(Baselines, TopThreeOfThree) {
  const NeuronRanges r{{0}, {0, 3}, {0, 0, 0}, {1, 1, 1}};
  BaselineState s(r, {});
  s.add(std::vector<float>{0.1f, 0.9f, 0.4f});
  EXPECT_DOUBLE_EQ(s.values().tknc, 1.0);
}

TEST(Baselines, TopKTieByIndex) {
  const NeuronRanges r{{0}, {0, 4}, {0, 0, 0, 0}, {1, 1, 1, 1}};
  BaselineState s(r, {0.75, true, 10, 2});
  s.add(std::vector<float>{0.5f, 0.5f, 0.5f, 0.1f});
  EXPECT_DOUBLE_EQ(s.values().tknc, 0.5);
}

TEST(Baselines, NcNormalisedAndRaw) {
  const NeuronRanges r{{0}, {0, 3}, {0, 0, 0}, {2, 2, 2}};
  BaselineState normalised(r, {});
  normalised.add(std::vector<float>{0.2f, 1.0f, 1.8f});  // scaled: 0, 0.5, 1
  EXPECT_DOUBLE_EQ(normalised.values().nc, 1.0 / 3.0);
  BaselineState raw(r, {0.75, false, 1000, 3});
  raw.add(std::vector<float>{0.2f, 1.0f, 1.8f});
  EXPECT_DOUBLE_EQ(raw.values().nc, 2.0 / 3.0);
}

TEST(Baselines, CollapsedRange) {
  const NeuronRanges r{{0}, {0, 1}, {2.0}, {2.0}};
  BaselineState s(r, {0.75, true, 10, 3});
  s.add(std::vector<float>{3.0f});
  EXPECT_DOUBLE_EQ(s.values().kmnc, 0.0);
  EXPECT_DOUBLE_EQ(s.values().snac, 1.0);
  s.add(std::vector<float>{2.0f});
  EXPECT_DOUBLE_EQ(s.values().kmnc, 1.0);
}

TEST(Baselines, MatchNaiveOracle) {
  std::mt19937_64 rng(44);
  for (int t = 0; t < 30; ++t) {
    const std::size_t l1 = 1 + rng() % 6, l2 = 1 + rng() % 6, S = l1 + l2;
    NeuronRanges r{{0, 1}, {0, l1, S}, {}, {}};
    for (std::size_t n = 0; n < S; ++n) {
      const double a = std::uniform_real_distribution<double>(-1, 1)(rng);
      const double b = n % 5 == 0 ? a : a + std::uniform_real_distribution<double>(0.1, 2)(rng);
      r.low.push_back(static_cast<float>(a));
      r.high.push_back(static_cast<float>(b));
    }
    const std::size_t rows = 1 + rng() % 40;
    std::vector<float> v(rows * S);
    for (auto& x : v) x = static_cast<float>(std::uniform_real_distribution<double>(-1.5, 3.5)(rng));
    ActivationMatrix acts{{0, 1}, {0, l1, S}, rows, v};
    const BaselineConfig cfg{0.75, t % 2 == 0, 1 + rng() % 20, 1 + rng() % 3};
    const auto got = baseline_criteria(r, acts, cfg);
    const auto want = naive_baselines(r, acts, cfg);
    EXPECT_DOUBLE_EQ(got.nc, want.nc);
    EXPECT_DOUBLE_EQ(got.kmnc, want.kmnc);
    EXPECT_DOUBLE_EQ(got.nbc, want.nbc);
    EXPECT_DOUBLE_EQ(got.snac, want.snac);
    EXPECT_DOUBLE_EQ(got.tknc, want.tknc);
  }
}

TEST(Baselines, MergeEqualsWhole) {
  std::mt19937_64 rng(45);
  const NeuronRanges r{{0}, {0, 5}, {0, 0, 0, 0, 0}, {1, 1, 1, 1, 1}};
  BaselineState whole(r, {0.75, true, 50, 2}), a(r, {0.75, true, 50, 2}), b(r, {0.75, true, 50, 2});
  for (int i = 0; i < 100; ++i) {
    std::vector<float> row(5);
    for (auto& x : row) x = static_cast<float>(std::uniform_real_distribution<double>(-0.5, 1.5)(rng));
    whole.add(row);
    (i < 37 ? a : b).add(row);
  }
  a.merge(b);
  EXPECT_EQ(a.values(), whole.values());
}

TEST(Accumulate, SerialEqualsParallelOnFixture) {
  const Model m = test::load_fixture_model("mlp");
  const Dataset test = load_dataset(test::fixture("mnist_test.idcd"));
  const auto layers = m.neuron_layers();
  const auto acts = collect_activations(m, test, layers);
  const auto ranges = training_ranges(acts);
  const std::size_t subject = m.resolve_layer(-2);
  const auto pos = static_cast<std::size_t>(std::find(layers.begin(), layers.end(), subject) - layers.begin());
  const ClusterModel clusters = toy_clusters({{0, 1, 3}, {0, 2}, {0, 5}, {0, 1}});
  const auto a = accumulate_coverage(acts, acts.offsets[pos], std::span(&clusters, 1), &ranges, {}, Execution::Serial);
  const auto b =
      accumulate_coverage(acts, acts.offsets[pos], std::span(&clusters, 1), &ranges, {}, Execution::Parallel);
  EXPECT_EQ(a.idc[0].keys(), b.idc[0].keys());
  EXPECT_EQ(a.baselines->values(), b.baselines->values());
  EXPECT_EQ(a.baselines->values(), baseline_criteria(ranges, acts));
}
