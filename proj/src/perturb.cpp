#include "idc/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <numeric>
#include <random>

#include "idc/random.hpp"
#include "idc/relevance.hpp"

namespace idc {

std::string_view to_string(PerturbMode mode) {
  switch (mode) {
    case PerturbMode::RandomPixels: return "random_pixels";
    case PerturbMode::RelevantPixels: return "relevant_pixels";
    case PerturbMode::Rq1Probe: return "rq1_probe";
  }
  return "unknown";
}

PerturbMode parse_perturb_mode(std::string_view name) {
  if (name == "random_pixels") return PerturbMode::RandomPixels;
  if (name == "relevant_pixels") return PerturbMode::RelevantPixels;
  if (name == "rq1_probe") return PerturbMode::Rq1Probe;
  throw ConfigError("unknown perturbation mode '" + std::string(name) +
                    "' (expected random_pixels, relevant_pixels or rq1_probe)");
}

PixelLayout pixel_layout(const Shape& shape) {
  if (shape.size() == 3) return {shape[0] * shape[1], shape[2]};
  return {element_count(shape), 1};
}

std::size_t default_pixel_budget(const Shape& shape) {
  const std::size_t pixels = pixel_layout(shape).pixels;
  if (pixels <= 28 * 28) return 15;
  if (pixels <= 32 * 32) return 20;
  return 200;
}

std::size_t resolve_pixel_budget(const PerturbationSpec& spec, const Shape& shape) {
  const std::size_t pixels = pixel_layout(shape).pixels;
  const std::size_t budget = spec.pixel_budget ? spec.pixel_budget : std::min(default_pixel_budget(shape), pixels);
  if (budget > pixels)
    throw ConfigError("pixel budget " + std::to_string(budget) + " exceeds the " + std::to_string(pixels) +
                      " pixels of a " + to_string(shape) + " sample");
  return budget;
}

namespace {

void check_noise(const PerturbationSpec& spec) {
  if (!(spec.noise_sigma > 0.0) || !std::isfinite(spec.noise_sigma))
    throw ConfigError("noise sigma must be positive, got " + std::to_string(spec.noise_sigma));
}

void add_noise(std::span<float> sample, std::span<const std::size_t> pixels, std::size_t channels, double sigma,
               std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto p : pixels)
    for (std::size_t c = 0; c < channels; ++c) {
      float& v = sample[p * channels + c];
      v = static_cast<float>(std::clamp(static_cast<double>(v) + noise(rng), 0.0, 1.0));
    }
}

// Indices of the `count` largest scores, ties by lower index.
std::vector<std::size_t> top_indices(std::span<const double> scores, std::size_t count) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto by_score = [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  count = std::min(count, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count), order.end(), by_score);
  order.resize(count);
  return order;
}

}  // namespace

Dataset make_us(const Dataset& data, const PerturbationSpec& spec, Execution exec, const Deadline* deadline) {
  check_noise(spec);
  const std::size_t budget = resolve_pixel_budget(spec, data.sample_shape());
  const PixelLayout layout = pixel_layout(data.sample_shape());
  Dataset out = data;
  parallel_for(
      data.count(), exec,
      [&](std::size_t i) {
        std::mt19937_64 rng(derive_seed(spec.seed, {i}));
        std::vector<std::size_t> all(layout.pixels);
        std::iota(all.begin(), all.end(), std::size_t{0});
        std::vector<std::size_t> chosen;
        chosen.reserve(budget);
        std::sample(all.begin(), all.end(), std::back_inserter(chosen), budget, rng);
        add_noise(out.sample(i), chosen, layout.channels, spec.noise_sigma, rng);
      },
      deadline, "perturb");
  return out;
}

std::vector<double> pixel_relevance(std::span<const float> relevance, const Shape& shape) {
  const PixelLayout layout = pixel_layout(shape);
  if (relevance.size() != layout.pixels * layout.channels)
    throw ShapeError("relevance map has " + std::to_string(relevance.size()) + " values, sample shape " +
                     to_string(shape));
  std::vector<double> scores(layout.pixels, 0.0);
  for (std::size_t p = 0; p < layout.pixels; ++p)
    for (std::size_t c = 0; c < layout.channels; ++c) scores[p] += relevance[p * layout.channels + c];
  return scores;
}

Dataset make_udi(const Model& model, const Dataset& data, const PerturbationSpec& spec, Execution exec,
                 const Deadline* deadline) {
  check_noise(spec);
  const std::size_t budget = resolve_pixel_budget(spec, data.sample_shape());
  const PixelLayout layout = pixel_layout(data.sample_shape());
  Dataset out = data;
  parallel_for(
      data.count(), exec,
      [&](std::size_t i) {
        const Tensor input = data.sample_tensor(i);
        const Tensor relevance = predicted_relevance_map(model, input);
        const auto scores = pixel_relevance(relevance.data(), data.sample_shape());
        const auto chosen = top_indices(scores, budget);
        std::mt19937_64 rng(derive_seed(spec.seed, {i}));
        add_noise(out.sample(i), chosen, layout.channels, spec.noise_sigma, rng);
      },
      deadline, "perturb");
  return out;
}

std::vector<std::size_t> rq1_selection(std::span<const double> scores, const PerturbationSpec& spec) {
  if (scores.empty()) return {};
  if (!(spec.percentile >= 0.0 && spec.percentile <= 100.0))
    throw ConfigError("percentile must lie in [0, 100]");
  if (!(spec.max_fraction >= 0.0 && spec.max_fraction <= 1.0))
    throw ConfigError("max fraction must lie in [0, 1]");
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  const double pos = spec.percentile / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double cut = sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  const std::size_t band = static_cast<std::size_t>(std::count_if(
      scores.begin(), scores.end(), [&](double s) { return s >= cut; }));
  const auto cap = static_cast<std::size_t>(std::floor(spec.max_fraction * static_cast<double>(scores.size())));
  // The band is the top of the descending order, so its first min(band, cap) entries are the selection.
  return top_indices(scores, std::min(band, cap));
}

Tensor rq1_probe(const Tensor& input, std::span<const float> relevance, const PerturbationSpec& spec) {
  const auto scores = pixel_relevance(relevance, input.shape());
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  const PixelLayout layout = pixel_layout(input.shape());
  Tensor out = input;
  for (auto p : rq1_selection(scores, spec)) {
    const double normalized = *hi > *lo ? (scores[p] - *lo) / (*hi - *lo) : 0.0;
    const float value = normalized > spec.threshold ? 0.0f : 1.0f;
    for (std::size_t c = 0; c < layout.channels; ++c) out[p * layout.channels + c] = value;
  }
  return out;
}

Tensor rq1_probe(const Model& model, const Tensor& input, const PerturbationSpec& spec) {
  const Tensor relevance = predicted_relevance_map(model, input);
  return rq1_probe(input, relevance.data(), spec);
}

Dataset rq1_probe(const Model& model, const Dataset& data, const PerturbationSpec& spec, Execution exec,
                  const Deadline* deadline) {
  Dataset out = data;
  parallel_for(
      data.count(), exec,
      [&](std::size_t i) {
        const Tensor probed = rq1_probe(model, data.sample_tensor(i), spec);
        std::copy(probed.data().begin(), probed.data().end(), out.sample(i).begin());
      },
      deadline, "perturb");
  return out;
}

Dataset perturb(const Model& model, const Dataset& data, const PerturbationSpec& spec, Execution exec,
                const Deadline* deadline) {
  switch (spec.mode) {
    case PerturbMode::RandomPixels: return make_us(data, spec, exec, deadline);
    case PerturbMode::RelevantPixels: return make_udi(model, data, spec, exec, deadline);
    case PerturbMode::Rq1Probe: return rq1_probe(model, data, spec, exec, deadline);
  }
  throw ConfigError("unknown perturbation mode");
}

double activation_shift(const Model& model, const Dataset& original, const Dataset& perturbed, std::size_t layer,
                        std::span<const std::size_t> neurons, Execution exec) {
  if (original.count() != perturbed.count())
    throw ShapeError("activation shift needs equal sample counts, got " + std::to_string(original.count()) +
                     " and " + std::to_string(perturbed.count()));
  if (original.empty()) return 0.0;
  const ActivationMatrix a = collect_activations(model, original, std::span(&layer, 1), exec);
  const ActivationMatrix b = collect_activations(model, perturbed, std::span(&layer, 1), exec);
  double total = 0.0;
  for (std::size_t r = 0; r < a.rows; ++r) {
    double sq = 0.0;
    for (auto n : neurons) {
      if (n >= a.cols()) throw ConfigError("neuron " + std::to_string(n) + " outside layer " + std::to_string(layer));
      const double d = static_cast<double>(a.at(r, n)) - static_cast<double>(b.at(r, n));
      sq += d * d;
    }
    total += std::sqrt(sq);
  }
  return total / static_cast<double>(a.rows);
}

}  // namespace idc
