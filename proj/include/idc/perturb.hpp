#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "idc/io.hpp"
#include "idc/model.hpp"
#include "idc/parallel.hpp"

namespace idc {

enum class PerturbMode { RandomPixels, RelevantPixels, Rq1Probe };
std::string_view to_string(PerturbMode mode);
PerturbMode parse_perturb_mode(std::string_view name);

struct PerturbationSpec {
  PerturbMode mode = PerturbMode::RandomPixels;
  std::size_t pixel_budget = 0;  // 0 picks the default for the image size
  double noise_sigma = 0.3;
  std::uint64_t seed = 0;
  double percentile = 90.0;      // rq1 band
  double threshold = 0.5;        // rq1 split on min-max normalised relevance
  double max_fraction = 0.10;    // rq1 cap

  bool operator==(const PerturbationSpec&) const = default;
};

/// A pixel is one spatial position: rank-3 samples are HWC with all channels of a position
/// perturbed together; other ranks treat every element as a pixel.
struct PixelLayout {
  std::size_t pixels = 0;
  std::size_t channels = 1;
};
PixelLayout pixel_layout(const Shape& sample_shape);

/// 15 up to 28x28, 20 up to 32x32, 200 beyond.
std::size_t default_pixel_budget(const Shape& sample_shape);
/// The budget `spec` resolves to for `sample_shape`; throws ConfigError if it exceeds the pixels.
std::size_t resolve_pixel_budget(const PerturbationSpec& spec, const Shape& sample_shape);

/// Gaussian noise on `budget` uniformly chosen pixels per sample, clamped to [0,1].
Dataset make_us(const Dataset& data, const PerturbationSpec& spec, Execution exec = Execution::Parallel,
                const Deadline* deadline = nullptr);

/// Gaussian noise on the `budget` most relevant pixels of each sample (relevance towards the
/// predicted class, ties by lower index), clamped to [0,1].
Dataset make_udi(const Model& model, const Dataset& data, const PerturbationSpec& spec,
                 Execution exec = Execution::Parallel, const Deadline* deadline = nullptr);

/// Per-pixel relevance (channel sums) of a relevance map shaped like the sample.
std::vector<double> pixel_relevance(std::span<const float> relevance, const Shape& sample_shape);

/// Pixels the probe touches, highest relevance first: those at or above the percentile of the
/// pixel relevance (linear interpolation), capped at floor(max_fraction * pixels).
std::vector<std::size_t> rq1_selection(std::span<const double> pixel_scores, const PerturbationSpec& spec);

/// Applies the probe given a precomputed relevance map: a selected pixel becomes 0 when its
/// min-max normalised relevance exceeds the threshold and 1 otherwise.
Tensor rq1_probe(const Tensor& input, std::span<const float> relevance, const PerturbationSpec& spec = {});
/// As above, computing the relevance map of the predicted class.
Tensor rq1_probe(const Model& model, const Tensor& input, const PerturbationSpec& spec = {});
Dataset rq1_probe(const Model& model, const Dataset& data, const PerturbationSpec& spec = {},
                  Execution exec = Execution::Parallel, const Deadline* deadline = nullptr);

/// Dispatches on spec.mode.
Dataset perturb(const Model& model, const Dataset& data, const PerturbationSpec& spec,
                Execution exec = Execution::Parallel, const Deadline* deadline = nullptr);

/// Mean over samples of the L2 distance between the activations of `neurons` at `layer` for
/// `original` and `perturbed` (same sample count).
double activation_shift(const Model& model, const Dataset& original, const Dataset& perturbed, std::size_t layer,
                        std::span<const std::size_t> neurons, Execution exec = Execution::Parallel);

}  // namespace idc
