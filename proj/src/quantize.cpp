#include "idc/quantize.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>
#include <numeric>
#include <optional>
#include <random>

#include "idc/io.hpp"
#include "idc/random.hpp"

namespace idc {

namespace {

std::size_t nearest(double v, std::span<const double> centres) {
  std::size_t best = 0;
  double best_d = std::abs(v - centres[0]);
  for (std::size_t c = 1; c < centres.size(); ++c) {
    const double d = std::abs(v - centres[c]);
    if (d < best_d) {
      best = c;
      best_d = d;
    }
  }
  return best;
}

std::size_t count_distinct(std::span<const double> values) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  return static_cast<std::size_t>(std::unique(sorted.begin(), sorted.end()) - sorted.begin());
}

void update_means(std::span<const double> values, std::span<const std::size_t> assignments,
                  std::vector<double>& centres, std::vector<std::size_t>& sizes) {
  std::vector<double> sums(centres.size(), 0.0);
  std::fill(sizes.begin(), sizes.end(), 0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    sums[assignments[i]] += values[i];
    ++sizes[assignments[i]];
  }
  for (std::size_t c = 0; c < centres.size(); ++c)
    if (sizes[c] > 0) centres[c] = sums[c] / static_cast<double>(sizes[c]);
}

}  // namespace

double within_cluster_ss(std::span<const double> values, std::span<const std::size_t> assignments,
                         std::size_t cluster_count) {
  std::vector<double> centres(cluster_count, 0.0);
  std::vector<std::size_t> sizes(cluster_count, 0);
  update_means(values, assignments, centres, sizes);
  double wcss = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double d = values[i] - centres[assignments[i]];
    wcss += d * d;
  }
  return wcss;
}

namespace {

// First centre drawn from the rng, then repeatedly the value farthest from the chosen ones.
std::vector<double> farthest_point_seeds(std::span<const double> values, std::size_t k, std::mt19937_64& rng) {
  const std::size_t n = values.size();
  std::vector<double> centres{values[rng() % n]};
  std::vector<double> gap(n);
  for (std::size_t i = 0; i < n; ++i) gap[i] = std::abs(values[i] - centres[0]);
  while (centres.size() < k) {
    const auto far = static_cast<std::size_t>(std::max_element(gap.begin(), gap.end()) - gap.begin());
    centres.push_back(values[far]);
    for (std::size_t i = 0; i < n; ++i) gap[i] = std::min(gap[i], std::abs(values[i] - values[far]));
  }
  return centres;
}

// k-means++: each next centre drawn with probability proportional to squared distance.
std::vector<double> d2_seeds(std::span<const double> values, std::size_t k, std::mt19937_64& rng) {
  const std::size_t n = values.size();
  std::vector<double> centres{values[rng() % n]};
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = (values[i] - centres[0]) * (values[i] - centres[0]);
  while (centres.size() < k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    double u = std::uniform_real_distribution<double>(0.0, total)(rng);
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] > 0.0 && u < d2[i]) {
        pick = i;
        break;
      }
      u -= d2[i];
    }
    if (d2[pick] == 0.0)  // rounding ran past the end; take the farthest instead
      pick = static_cast<std::size_t>(std::max_element(d2.begin(), d2.end()) - d2.begin());
    centres.push_back(values[pick]);
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], (values[i] - values[pick]) * (values[i] - values[pick]));
  }
  return centres;
}

struct LloydRun {
  std::vector<std::size_t> assign;
  std::vector<double> centres;
  std::vector<double> history;
  std::size_t iterations = 0;
  double wcss = 0.0;
};

LloydRun lloyd(std::span<const double> values, std::vector<double> centres, std::size_t max_iter, double tol) {
  const std::size_t n = values.size(), k = centres.size();
  LloydRun run;
  std::vector<std::size_t>& assign = run.assign;
  assign.assign(n, 0);
  std::vector<std::size_t> sizes(k, 0);
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    std::fill(sizes.begin(), sizes.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      assign[i] = nearest(values[i], centres);
      ++sizes[assign[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (sizes[c] > 0) continue;
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (sizes[assign[i]] < 2) continue;
        const double d = std::abs(values[i] - centres[assign[i]]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      --sizes[assign[far]];
      assign[far] = c;
      sizes[c] = 1;
      centres[c] = values[far];
    }
    double wcss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = values[i] - centres[assign[i]];
      wcss += d * d;
    }
    run.history.push_back(wcss);
    const std::vector<double> previous = centres;
    update_means(values, assign, centres, sizes);
    run.iterations = iter + 1;
    double moved = 0.0;
    for (std::size_t c = 0; c < k; ++c) moved = std::max(moved, std::abs(centres[c] - previous[c]));
    if (moved < tol) break;
  }

  std::vector<std::size_t> final_sizes(k, 0);
  for (auto a : assign) ++final_sizes[a];
  update_means(values, assign, centres, final_sizes);
  run.wcss = within_cluster_ss(values, assign, k);
  run.centres = std::move(centres);
  return run;
}

}  // namespace

KMeansResult kmeans_1d(std::span<const double> values, std::size_t k, std::uint64_t seed, std::size_t max_iter,
                       double tol, std::size_t restarts) {
  if (k < 2) throw ConfigError("k-means needs k >= 2, got " + std::to_string(k));
  if (values.size() < k)
    throw DegenerateDataError("degenerate data: " + std::to_string(values.size()) + " values for k = " +
                              std::to_string(k));
  for (double v : values)
    if (!std::isfinite(v)) throw NumericError("k-means: non-finite input value");
  if (count_distinct(values) < k)
    throw DegenerateDataError("degenerate data: fewer than " + std::to_string(k) + " distinct values");

  const std::size_t n = values.size();
  std::mt19937_64 rng(seed);
  KMeansResult result;
  std::vector<std::size_t> assign;
  std::vector<double> centres;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t attempt = 0; attempt < std::max<std::size_t>(restarts, 1); ++attempt) {
    const auto seeds = attempt == 0 ? farthest_point_seeds(values, k, rng) : d2_seeds(values, k, rng);
    auto run = lloyd(values, seeds, max_iter, tol);
    if (run.wcss < best) {  // earlier attempts win ties
      best = run.wcss;
      result.iterations = run.iterations;
      result.wcss_history = std::move(run.history);
      assign = std::move(run.assign);
      centres = std::move(run.centres);
    }
  }
  std::vector<std::size_t> sizes(k, 0);

  // Order clusters by centroid and report centres of mass of the final assignment.
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return centres[a] < centres[b]; });
  std::vector<std::size_t> rank(k);
  for (std::size_t r = 0; r < k; ++r) rank[order[r]] = r;
  result.assignments.resize(n);
  for (std::size_t i = 0; i < n; ++i) result.assignments[i] = rank[assign[i]];
  result.centroids.assign(k, 0.0);
  update_means(values, result.assignments, result.centroids, sizes);
  result.wcss = within_cluster_ss(values, result.assignments, k);
  return result;
}

double silhouette(std::span<const double> values, std::span<const std::size_t> assignments,
                  std::size_t cluster_count) {
  if (cluster_count < 2) throw ConfigError("silhouette needs at least two clusters");
  if (assignments.size() != values.size())
    throw ShapeError("silhouette: " + std::to_string(assignments.size()) + " assignments for " +
                     std::to_string(values.size()) + " values");
  std::vector<std::vector<double>> members(cluster_count);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (assignments[i] >= cluster_count)
      throw ConfigError("silhouette: assignment " + std::to_string(assignments[i]) + " out of range");
    members[assignments[i]].push_back(values[i]);
  }
  std::vector<std::vector<double>> prefix(cluster_count);
  for (std::size_t c = 0; c < cluster_count; ++c) {
    if (members[c].empty()) throw ConfigError("silhouette: cluster " + std::to_string(c) + " is empty");
    std::sort(members[c].begin(), members[c].end());
    prefix[c].resize(members[c].size() + 1, 0.0);
    for (std::size_t i = 0; i < members[c].size(); ++i) prefix[c][i + 1] = prefix[c][i] + members[c][i];
  }
  // Sum of |x - u| over u in cluster c.
  const auto l1_sum = [&](std::size_t c, double x) {
    const auto& m = members[c];
    const auto below = static_cast<std::size_t>(std::lower_bound(m.begin(), m.end(), x) - m.begin());
    const double sum_below = prefix[c][below];
    const double sum_above = prefix[c].back() - sum_below;
    return (x * static_cast<double>(below) - sum_below) + (sum_above - x * static_cast<double>(m.size() - below));
  };
  double total = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::size_t own = assignments[i];
    if (members[own].size() == 1) continue;
    const double a = l1_sum(own, values[i]) / static_cast<double>(members[own].size() - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cluster_count; ++c)
      if (c != own) b = std::min(b, l1_sum(c, values[i]) / static_cast<double>(members[c].size()));
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(values.size());
}

NeuronClusters cluster_neuron(std::span<const double> activations, std::size_t neuron, const ClusterOptions& options,
                              std::uint64_t stream) {
  if (activations.empty()) throw ConfigError("clustering needs a non-empty training set");
  std::vector<double> values(activations.begin(), activations.end());
  std::sort(values.begin(), values.end());
  NeuronClusters out;
  out.neuron = neuron;
  out.min_activation = values.front();
  out.max_activation = values.back();
  const std::size_t distinct = count_distinct(values);

  std::vector<std::size_t> sample;
  if (options.silhouette_sample > 0 && values.size() > options.silhouette_sample) {
    std::vector<std::size_t> all(values.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(options.seed, {stream, 0x5a3dULL}));
    std::sample(all.begin(), all.end(), std::back_inserter(sample), options.silhouette_sample, rng);
  }

  std::vector<std::size_t> candidates = options.candidates;
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  std::optional<KMeansResult> best;
  for (std::size_t c : candidates) {
    if (c < 2 || c > distinct) continue;
    KMeansResult km = kmeans_1d(values, c, derive_seed(options.seed, {stream, c}), options.max_iter, options.tol,
                                 options.restarts);
    double score;
    if (sample.empty()) {
      score = silhouette(values, km.assignments, c);
    } else {
      std::vector<double> sv;
      std::vector<std::size_t> sa;
      std::vector<std::size_t> present(c, 0);
      for (auto i : sample) {
        sv.push_back(values[i]);
        sa.push_back(km.assignments[i]);
        present[km.assignments[i]] = 1;
      }
      // Relabel so the clusters absent from the subsample drop out.
      std::vector<std::size_t> relabel(c);
      std::size_t used = 0;
      for (std::size_t j = 0; j < c; ++j) relabel[j] = present[j] ? used++ : 0;
      for (auto& a : sa) a = relabel[a];
      score = used >= 2 ? silhouette(sv, sa, used) : -1.0;
    }
    out.scores.push_back({c, score});
    if (!best || score > out.silhouette) {
      best = std::move(km);
      out.silhouette = score;
    }
  }
  if (!best) {
    out.degenerate = true;
    out.centroids = {values.front()};
    out.silhouette = 0.0;
    return out;
  }
  out.centroids = std::move(best->centroids);
  return out;
}

ClusterModel ClusterModel::prefix(std::size_t m) const {
  if (m > neurons.size())
    throw ConfigError("cluster model holds " + std::to_string(neurons.size()) + " neurons, asked for " +
                      std::to_string(m));
  ClusterModel p = *this;
  p.neurons.resize(m);
  return p;
}

ClusterModel cluster_columns(const ActivationMatrix& acts, std::size_t subject_layer,
                             std::span<const std::size_t> neurons, const ClusterOptions& options, Execution exec,
                             const Deadline* deadline) {
  if (options.candidates.empty()) throw ConfigError("cluster candidate set is empty");
  for (auto c : options.candidates)
    if (c < 2) throw ConfigError("cluster candidates must be >= 2, got " + std::to_string(c));
  if (acts.rows == 0) throw ConfigError("clustering needs a non-empty training set");
  ClusterModel model;
  model.subject_layer = subject_layer;
  model.options = options;
  model.training_count = acts.rows;
  model.neurons.resize(neurons.size());
  parallel_for(
      neurons.size(), exec,
      [&](std::size_t i) {
        if (neurons[i] >= acts.cols())
          throw ConfigError("neuron " + std::to_string(neurons[i]) + " outside subject layer");
        model.neurons[i] = cluster_neuron(acts.column(neurons[i]), neurons[i], options, neurons[i]);
      },
      deadline, "clustering");
  return model;
}

ClusterModel cluster_important_neurons(const Model& model, const Dataset& train, const ImportanceProfile& profile,
                                       const ClusterOptions& options, Execution exec, const Deadline* deadline) {
  if (train.empty()) throw ConfigError("clustering needs a non-empty training set");
  const std::size_t layer = profile.subject_layer;
  const ActivationMatrix acts = collect_activations(model, train, std::span(&layer, 1), exec, deadline);
  return cluster_columns(acts, layer, profile.important, options, exec, deadline);
}

}  // namespace idc
