#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "idc/parallel.hpp"
#include "idc/relevance.hpp"

namespace idc {

class Dataset;
class Model;

struct KMeansResult {
  std::vector<std::size_t> assignments;  // cluster of each value, clusters ordered by centroid
  std::vector<double> centroids;         // ascending
  double wcss = 0.0;                     // within-cluster sum of squares
  std::size_t iterations = 0;
  std::vector<double> wcss_history;      // after each assignment step
};

inline constexpr std::size_t kDefaultKMeansIterations = 300;
inline constexpr double kDefaultKMeansTolerance = 1e-9;
inline constexpr std::size_t kDefaultKMeansRestarts = 10;

/// Lloyd's algorithm on scalars, keeping the lowest-WCSS of `restarts` seeded starts. The first
/// start uses farthest-point seeding (first centre drawn from `seed`, then the value farthest from
/// the chosen centres); later ones use k-means++ sampling from the same generator.
/// An empty cluster is re-seeded with the value farthest from its current centroid.
/// Throws DegenerateDataError when fewer than k distinct values exist.
KMeansResult kmeans_1d(std::span<const double> values, std::size_t k, std::uint64_t seed,
                       std::size_t max_iter = kDefaultKMeansIterations,
                       double tol = kDefaultKMeansTolerance,
                       std::size_t restarts = kDefaultKMeansRestarts);

/// Within-cluster sum of squares of an assignment.
double within_cluster_ss(std::span<const double> values, std::span<const std::size_t> assignments,
                         std::size_t cluster_count);

/// Mean silhouette using L1 distance; a point alone in its cluster scores 0.
/// Requires at least two clusters, each non-empty. O(n log n) via per-cluster prefix sums.
double silhouette(std::span<const double> values, std::span<const std::size_t> assignments,
                  std::size_t cluster_count);

struct ClusterOptions {
  std::vector<std::size_t> candidates{2, 3, 4, 5};
  std::uint64_t seed = 0;
  std::size_t silhouette_sample = 2000;  // 0 scores every value
  std::size_t max_iter = kDefaultKMeansIterations;
  double tol = kDefaultKMeansTolerance;
  std::size_t restarts = kDefaultKMeansRestarts;

  bool operator==(const ClusterOptions&) const = default;
};

struct CandidateScore {
  std::size_t clusters = 0;
  double silhouette = 0.0;
  bool operator==(const CandidateScore&) const = default;
};

/// Quantisation of one important neuron's training activations.
struct NeuronClusters {
  std::size_t neuron = 0;          // index within the subject layer
  bool degenerate = false;         // constant over the training set; excluded from coverage
  std::vector<double> centroids;   // ascending; one value when degenerate
  double silhouette = 0.0;         // score of the chosen cluster count
  std::vector<CandidateScore> scores;
  double min_activation = 0.0;
  double max_activation = 0.0;

  std::size_t cluster_count() const { return centroids.size(); }
  bool operator==(const NeuronClusters&) const = default;
};

struct ClusterModel {
  std::size_t subject_layer = 0;
  std::vector<NeuronClusters> neurons;  // importance-rank order
  ClusterOptions options;
  std::size_t training_count = 0;

  /// First `m` neurons in rank order.
  ClusterModel prefix(std::size_t m) const;
  bool operator==(const ClusterModel&) const = default;
};

/// Clusters one neuron's activation vector over the candidate counts and keeps the silhouette
/// maximiser (ties: fewest clusters). Values are sorted first, so the result does not depend on
/// their order. `stream` decorrelates the seeds of different neurons.
NeuronClusters cluster_neuron(std::span<const double> activations, std::size_t neuron,
                              const ClusterOptions& options, std::uint64_t stream);

/// Quantises every important neuron of `profile` using its activations over `train`.
ClusterModel cluster_important_neurons(const Model& model, const Dataset& train,
                                       const ImportanceProfile& profile, const ClusterOptions& options,
                                       Execution exec = Execution::Parallel,
                                       const Deadline* deadline = nullptr);

/// Same, from precomputed subject-layer activations (rows = training inputs).
ClusterModel cluster_columns(const ActivationMatrix& subject_activations, std::size_t subject_layer,
                             std::span<const std::size_t> neurons, const ClusterOptions& options,
                             Execution exec = Execution::Parallel, const Deadline* deadline = nullptr);

}  // namespace idc
