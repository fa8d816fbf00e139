#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "idc/model.hpp"
#include "idc/parallel.hpp"
#include "idc/quantize.hpp"

namespace idc {

class Dataset;

/// |INCC|: exact while it fits in 63 bits, always available as log10.
struct InccSize {
  std::optional<std::uint64_t> exact;
  double log10 = 0.0;

  /// Floating value (may be inexact or overflow to inf for huge products).
  double approx() const;
  std::string to_string() const;
  bool operator==(const InccSize&) const = default;
};

InccSize incc_size(std::span<const std::size_t> cluster_counts);

/// One INCC element: a cluster index per non-degenerate important neuron, in rank order.
using CombinationKey = std::vector<std::uint16_t>;

struct CombinationKeyHash {
  std::size_t operator()(const CombinationKey& key) const noexcept;
};

/// Lazily enumerates every combination in mixed-radix order (last neuron fastest).
class InccEnumerator {
 public:
  explicit InccEnumerator(std::vector<std::size_t> radices);
  /// Writes the next combination into `key`; false once exhausted.
  bool next(CombinationKey& key);

 private:
  std::vector<std::size_t> radices_;
  CombinationKey current_;
  bool started_ = false;
  bool done_ = false;
};

/// The combination space of a ClusterModel. Degenerate neurons are excluded.
struct Incc {
  std::vector<std::size_t> neurons;   // subject-layer indices of the key positions
  std::vector<std::size_t> radices;   // cluster count per key position
  std::vector<std::vector<double>> centroids;  // per key position
  std::vector<std::size_t> excluded;  // degenerate neurons left out
  InccSize size;

  InccEnumerator enumerate() const { return InccEnumerator(radices); }
};

Incc build_incc(const ClusterModel& clusters);

/// Index of the centroid closest to `value`; ties go to the lower centroid.
std::size_t nearest_centroid(double value, std::span<const double> centroids);

/// Maps subject-layer neuron activations to their INCC element.
CombinationKey map_input(std::span<const float> subject_activations, const Incc& incc);
CombinationKey map_input(std::span<const float> subject_activations, const ClusterModel& clusters);
CombinationKey map_input(const ActivationTrace& trace, const ClusterModel& clusters);

/// Set of covered INCC elements; supports partition-and-merge.
class IdcState {
 public:
  explicit IdcState(const ClusterModel& clusters);

  void add(std::span<const float> subject_activations);
  void add_key(CombinationKey key);
  void merge(const IdcState& other);

  std::size_t covered() const noexcept { return covered_.size(); }
  const InccSize& total() const noexcept { return incc_.size; }
  const Incc& incc() const noexcept { return incc_; }
  double value() const;
  bool contains(const CombinationKey& key) const { return covered_.count(key) > 0; }
  const std::unordered_set<CombinationKey, CombinationKeyHash>& keys() const noexcept { return covered_; }

 private:
  Incc incc_;
  std::unordered_set<CombinationKey, CombinationKeyHash> covered_;
};

/// IDC of `test` in one streaming pass. An empty test set yields 0.
double idc(const Model& model, const ClusterModel& clusters, const Dataset& test,
           Execution exec = Execution::Parallel);

// ---------------------------------------------------------------------------
// Baseline criteria

struct BaselineConfig {
  double nc_threshold = 0.75;
  bool nc_normalize = true;  // per-input, per-layer min-max scaling before thresholding
  std::size_t kmnc_sections = 1000;
  std::size_t tknc_k = 3;
  bool operator==(const BaselineConfig&) const = default;
};

/// Training-set activation range of every neuron of the measured layers.
struct NeuronRanges {
  std::vector<std::size_t> layers;
  std::vector<std::size_t> offsets;  // per layer plus total, as in ActivationMatrix
  std::vector<double> low;
  std::vector<double> high;

  std::size_t neuron_count() const { return low.size(); }
};

NeuronRanges training_ranges(const ActivationMatrix& train_activations);

struct BaselineValues {
  double nc = 0.0;
  double kmnc = 0.0;
  double nbc = 0.0;
  double snac = 0.0;
  double tknc = 0.0;
  bool operator==(const BaselineValues&) const = default;
};

/// Accumulators for NC, KMNC, NBC, SNAC and TKNC; only ever grow.
class BaselineState {
 public:
  BaselineState(const NeuronRanges& ranges, const BaselineConfig& config);

  /// One input's activations over the measured layers (a row of an ActivationMatrix).
  void add(std::span<const float> activations);
  void merge(const BaselineState& other);
  BaselineValues values() const;

 private:
  NeuronRanges ranges_;
  BaselineConfig config_;
  std::vector<std::uint8_t> nc_;
  std::vector<std::uint8_t> tknc_;
  std::vector<std::uint8_t> lower_;
  std::vector<std::uint8_t> upper_;
  std::vector<std::uint64_t> sections_;  // bitset, kmnc_sections bits per neuron
};

/// Serial reference: one state fed row by row.
BaselineValues baseline_criteria(const NeuronRanges& ranges, const ActivationMatrix& test,
                                 const BaselineConfig& config = {});

/// Partition-and-merge evaluation of both IDC (for each cluster model) and the baselines over
/// the rows of precomputed activations. Serial and parallel runs give identical states.
struct CoverageAccumulation {
  std::vector<IdcState> idc;
  std::optional<BaselineState> baselines;
};

/// `subject_column` is the column offset of the subject layer within `acts`.
CoverageAccumulation accumulate_coverage(const ActivationMatrix& acts, std::size_t subject_column,
                                         std::span<const ClusterModel> clusters, const NeuronRanges* ranges,
                                         const BaselineConfig& config, Execution exec = Execution::Parallel,
                                         const Deadline* deadline = nullptr);

}  // namespace idc
