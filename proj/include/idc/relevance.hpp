#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "idc/model.hpp"
#include "idc/parallel.hpp"
#include "idc/tensor.hpp"

namespace idc {

class Dataset;

inline constexpr double kDefaultEpsilon = 1e-9;

/// Relevance scores for one input, aligned with the activation shapes of its trace.
///
/// Dense and Conv2D layers redistribute with the epsilon rule
///   R_j = sum_k a_j w_jk / (z_k + eps * sign(z_k)) * R_k,   z_k = sum_j a_j w_jk,
/// so each output's relevance (bias share included) is split over its inputs in proportion to
/// their contributions. MaxPool2D routes a window's relevance to its first maximal position;
/// ReLU, Flatten and Softmax pass relevance through unchanged.
struct RelevanceMap {
  RelevanceTensor input;                // relevance of the model input
  std::vector<RelevanceTensor> layers;  // relevance of each layer output
  std::size_t target_class = 0;
  double decision_value = 0.0;          // f(x)[target_class]
  double epsilon = kDefaultEpsilon;
};

/// Seeds the decision layer with f(x)[target_class] on the target and zero elsewhere.
RelevanceMap backpropagate_relevance(const Model& model, const ActivationTrace& trace,
                                     std::size_t target_class, double epsilon = kDefaultEpsilon);

/// General form: `seed` is the relevance placed on the decision layer output.
RelevanceMap propagate_relevance(const Model& model, const ActivationTrace& trace,
                                 RelevanceTensor seed, double epsilon = kDefaultEpsilon);

/// Pixel relevance for `input` explained towards `target_class`; same shape as the input.
Tensor input_relevance_map(const Model& model, const Tensor& input, std::size_t target_class,
                           double epsilon = kDefaultEpsilon);
/// As above, explaining the predicted class.
Tensor predicted_relevance_map(const Model& model, const Tensor& input, double epsilon = kDefaultEpsilon);

/// Per-neuron relevance of one layer: element values, or channel sums for feature maps.
std::vector<double> neuron_relevance(const RelevanceTensor& layer_relevance);

enum class ImportanceMode { Signed, Absolute };
std::string_view to_string(ImportanceMode mode);
ImportanceMode parse_importance_mode(std::string_view name);

/// inputs x subject-layer neurons relevance matrix.
struct RelevanceMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(values).subspan(r * cols, cols);
  }
  bool operator==(const RelevanceMatrix&) const = default;
};

/// Relevance at `subject_layer` for every sample, each explained towards its predicted class.
RelevanceMatrix collect_relevance(const Model& model, const Dataset& data, std::size_t subject_layer,
                                  Execution exec = Execution::Parallel, const Deadline* deadline = nullptr,
                                  double epsilon = kDefaultEpsilon);

struct ImportanceProfile {
  std::size_t subject_layer = 0;
  ImportanceMode mode = ImportanceMode::Signed;
  std::size_t input_count = 0;
  std::vector<double> totals;          // cumulative relevance per subject-layer neuron
  std::vector<std::size_t> ranking;    // neurons by descending total, ties by index
  std::size_t m = 0;
  std::vector<std::size_t> important;  // first m of ranking

  /// Same profile with a different selection size.
  ImportanceProfile top(std::size_t m) const;
  bool operator==(const ImportanceProfile&) const = default;
};

/// Sums each column and ranks. Columns are summed in sorted order so the totals do not depend
/// on the order of the rows.
ImportanceProfile rank_importance(const RelevanceMatrix& relevance, std::size_t subject_layer,
                                  std::size_t m, ImportanceMode mode = ImportanceMode::Signed);

ImportanceProfile analyze_importance(const Model& model, const Dataset& inputs, std::size_t subject_layer,
                                     std::size_t m, ImportanceMode mode = ImportanceMode::Signed,
                                     Execution exec = Execution::Parallel,
                                     const Deadline* deadline = nullptr);

}  // namespace idc
