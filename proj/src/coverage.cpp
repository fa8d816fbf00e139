#include "idc/coverage.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "idc/io.hpp"

namespace idc {

double InccSize::approx() const {
  if (exact) return static_cast<double>(*exact);
  return std::pow(10.0, log10);
}

std::string InccSize::to_string() const {
  if (exact) return std::to_string(*exact);
  std::ostringstream out;
  const double exponent = std::floor(log10);
  out.precision(3);
  out << std::pow(10.0, log10 - exponent) << "e+" << static_cast<long>(exponent);
  return out.str();
}

InccSize incc_size(std::span<const std::size_t> cluster_counts) {
  InccSize size;
  std::uint64_t product = 1;
  bool fits = true;
  constexpr std::uint64_t limit = std::numeric_limits<std::int64_t>::max();
  for (std::size_t c : cluster_counts) {
    size.log10 += std::log10(static_cast<double>(c));
    if (fits && c != 0 && product > limit / c) fits = false;
    if (fits) product *= c;
  }
  if (fits) size.exact = product;
  return size;
}

std::size_t CombinationKeyHash::operator()(const CombinationKey& key) const noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto v : key) {
    h ^= v;
    h *= 0x100000001b3ULL;
  }
  return static_cast<std::size_t>(h);
}

InccEnumerator::InccEnumerator(std::vector<std::size_t> radices) : radices_(std::move(radices)) {
  for (auto r : radices_)
    if (r == 0) done_ = true;
  current_.assign(radices_.size(), 0);
}

bool InccEnumerator::next(CombinationKey& key) {
  if (done_) return false;
  if (!started_) {
    started_ = true;
    key = current_;
    return true;
  }
  for (std::size_t i = radices_.size(); i-- > 0;) {
    if (++current_[i] < radices_[i]) {
      key = current_;
      return true;
    }
    current_[i] = 0;
  }
  done_ = true;
  return false;
}

Incc build_incc(const ClusterModel& clusters) {
  if (clusters.neurons.empty()) throw ConfigError("cannot build INCC from an empty cluster model");
  Incc incc;
  for (const auto& n : clusters.neurons) {
    if (n.degenerate) {
      incc.excluded.push_back(n.neuron);
      continue;
    }
    if (n.cluster_count() > std::numeric_limits<std::uint16_t>::max())
      throw ConfigError("neuron " + std::to_string(n.neuron) + " has too many clusters");
    incc.neurons.push_back(n.neuron);
    incc.radices.push_back(n.cluster_count());
    incc.centroids.push_back(n.centroids);
  }
  incc.size = incc_size(incc.radices);
  return incc;
}

std::size_t nearest_centroid(double value, std::span<const double> centroids) {
  std::size_t best = 0;
  double best_d = std::abs(value - centroids[0]);
  for (std::size_t i = 1; i < centroids.size(); ++i) {
    const double d = std::abs(value - centroids[i]);
    if (d < best_d || (d == best_d && centroids[i] < centroids[best])) {
      best = i;
      best_d = d;
    }
  }
  return best;
}

CombinationKey map_input(std::span<const float> subject_activations, const Incc& incc) {
  CombinationKey key(incc.neurons.size());
  for (std::size_t i = 0; i < incc.neurons.size(); ++i) {
    const std::size_t n = incc.neurons[i];
    if (n >= subject_activations.size())
      throw ShapeError("subject layer has " + std::to_string(subject_activations.size()) +
                       " neurons, clusters reference neuron " + std::to_string(n));
    key[i] = static_cast<std::uint16_t>(nearest_centroid(subject_activations[n], incc.centroids[i]));
  }
  return key;
}

CombinationKey map_input(std::span<const float> subject_activations, const ClusterModel& clusters) {
  return map_input(subject_activations, build_incc(clusters));
}

CombinationKey map_input(const ActivationTrace& trace, const ClusterModel& clusters) {
  if (clusters.subject_layer >= trace.outputs.size())
    throw ShapeError("trace does not contain subject layer " + std::to_string(clusters.subject_layer));
  const auto acts = neuron_activations(trace.outputs[clusters.subject_layer]);
  return map_input(acts, clusters);
}

IdcState::IdcState(const ClusterModel& clusters) : incc_(build_incc(clusters)) {}

void IdcState::add(std::span<const float> subject_activations) {
  covered_.insert(map_input(subject_activations, incc_));
}

void IdcState::add_key(CombinationKey key) { covered_.insert(std::move(key)); }

void IdcState::merge(const IdcState& other) {
  if (other.incc_.radices != incc_.radices || other.incc_.neurons != incc_.neurons)
    throw ConfigError("cannot merge coverage states over different INCC spaces");
  covered_.insert(other.covered_.begin(), other.covered_.end());
}

double IdcState::value() const {
  if (covered_.empty()) return 0.0;
  if (incc_.size.exact) return static_cast<double>(covered_.size()) / static_cast<double>(*incc_.size.exact);
  return std::pow(10.0, std::log10(static_cast<double>(covered_.size())) - incc_.size.log10);
}

double idc(const Model& model, const ClusterModel& clusters, const Dataset& test, Execution exec) {
  if (test.empty()) return 0.0;
  const std::size_t layer = clusters.subject_layer;
  const ActivationMatrix acts = collect_activations(model, test, std::span(&layer, 1), exec);
  const auto result = accumulate_coverage(acts, 0, std::span(&clusters, 1), nullptr, {}, exec);
  return result.idc.front().value();
}

// ---------------------------------------------------------------------------

NeuronRanges training_ranges(const ActivationMatrix& train) {
  if (train.rows == 0) throw ConfigError("training ranges need a non-empty training set");
  NeuronRanges r;
  r.layers = train.layers;
  r.offsets = train.offsets;
  r.low.assign(train.cols(), std::numeric_limits<double>::infinity());
  r.high.assign(train.cols(), -std::numeric_limits<double>::infinity());
  for (std::size_t row = 0; row < train.rows; ++row) {
    const auto v = train.row(row);
    for (std::size_t c = 0; c < v.size(); ++c) {
      r.low[c] = std::min(r.low[c], static_cast<double>(v[c]));
      r.high[c] = std::max(r.high[c], static_cast<double>(v[c]));
    }
  }
  return r;
}

BaselineState::BaselineState(const NeuronRanges& ranges, const BaselineConfig& config)
    : ranges_(ranges), config_(config) {
  if (config_.kmnc_sections == 0) throw ConfigError("KMNC needs at least one section");
  if (config_.tknc_k == 0) throw ConfigError("TKNC needs k >= 1");
  const std::size_t s = ranges_.neuron_count();
  nc_.assign(s, 0);
  tknc_.assign(s, 0);
  lower_.assign(s, 0);
  upper_.assign(s, 0);
  sections_.assign((s * config_.kmnc_sections + 63) / 64, 0);
}

void BaselineState::add(std::span<const float> a) {
  const std::size_t s = ranges_.neuron_count();
  if (a.size() != s)
    throw ShapeError("baseline criteria expect " + std::to_string(s) + " activations, got " +
                     std::to_string(a.size()));
  const std::size_t k = config_.kmnc_sections;
  for (std::size_t n = 0; n < s; ++n) {
    const double v = a[n];
    const double lo = ranges_.low[n];
    const double hi = ranges_.high[n];
    if (v < lo) lower_[n] = 1;
    if (v > hi) upper_[n] = 1;
    if (lo == hi) {
      // Collapsed range: every section counts as hit once the bound itself is reached.
      if (v == lo)
        for (std::size_t b = 0; b < k; ++b) sections_[(n * k + b) / 64] |= 1ULL << ((n * k + b) % 64);
    } else if (v >= lo && v <= hi) {
      const auto b = std::min(static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(k)), k - 1);
      sections_[(n * k + b) / 64] |= 1ULL << ((n * k + b) % 64);
    }
  }
  std::vector<std::size_t> order;
  for (std::size_t l = 0; l + 1 < ranges_.offsets.size(); ++l) {
    const std::size_t begin = ranges_.offsets[l];
    const std::size_t end = ranges_.offsets[l + 1];
    if (begin == end) continue;
    double lo = a[begin], hi = a[begin];
    for (std::size_t n = begin; n < end; ++n) {
      lo = std::min(lo, static_cast<double>(a[n]));
      hi = std::max(hi, static_cast<double>(a[n]));
    }
    for (std::size_t n = begin; n < end; ++n) {
      double v = a[n];
      if (config_.nc_normalize) v = hi > lo ? (v - lo) / (hi - lo) : 0.0;
      if (v > config_.nc_threshold) nc_[n] = 1;
    }
    order.resize(end - begin);
    std::iota(order.begin(), order.end(), begin);
    const std::size_t top = std::min(config_.tknc_k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                      [&](std::size_t x, std::size_t y) { return a[x] > a[y] || (a[x] == a[y] && x < y); });
    for (std::size_t i = 0; i < top; ++i) tknc_[order[i]] = 1;
  }
}

void BaselineState::merge(const BaselineState& other) {
  if (other.nc_.size() != nc_.size() || other.config_ != config_)
    throw ConfigError("cannot merge baseline states with different layouts");
  for (std::size_t i = 0; i < nc_.size(); ++i) {
    nc_[i] |= other.nc_[i];
    tknc_[i] |= other.tknc_[i];
    lower_[i] |= other.lower_[i];
    upper_[i] |= other.upper_[i];
  }
  for (std::size_t i = 0; i < sections_.size(); ++i) sections_[i] |= other.sections_[i];
}

BaselineValues BaselineState::values() const {
  const double s = static_cast<double>(nc_.size());
  if (s == 0) return {};
  const auto count = [](const std::vector<std::uint8_t>& v) {
    return static_cast<double>(std::count(v.begin(), v.end(), std::uint8_t{1}));
  };
  double sections = 0;
  for (auto word : sections_) sections += std::popcount(word);
  BaselineValues out;
  out.nc = count(nc_) / s;
  out.kmnc = sections / (s * static_cast<double>(config_.kmnc_sections));
  out.nbc = (count(lower_) + count(upper_)) / (2.0 * s);
  out.snac = count(upper_) / s;
  out.tknc = count(tknc_) / s;
  return out;
}

BaselineValues baseline_criteria(const NeuronRanges& ranges, const ActivationMatrix& test,
                                 const BaselineConfig& config) {
  BaselineState state(ranges, config);
  for (std::size_t r = 0; r < test.rows; ++r) state.add(test.row(r));
  return state.values();
}

CoverageAccumulation accumulate_coverage(const ActivationMatrix& acts, std::size_t subject_column,
                                         std::span<const ClusterModel> clusters, const NeuronRanges* ranges,
                                         const BaselineConfig& config, Execution exec, const Deadline* deadline) {
  const std::size_t parts = std::max<std::size_t>(1, std::min(partition_count(exec), acts.rows));
  const auto fresh = [&] {
    CoverageAccumulation acc;
    for (const auto& c : clusters) acc.idc.emplace_back(c);
    if (ranges) acc.baselines.emplace(*ranges, config);
    return acc;
  };
  std::vector<CoverageAccumulation> partial;
  partial.reserve(parts);
  for (std::size_t p = 0; p < parts; ++p) partial.push_back(fresh());
  if (ranges && ranges->neuron_count() != acts.cols())
    throw ShapeError("activation matrix has " + std::to_string(acts.cols()) + " columns, ranges cover " +
                     std::to_string(ranges->neuron_count()));

  parallel_for(
      parts, exec,
      [&](std::size_t p) {
        const std::size_t begin = acts.rows * p / parts;
        const std::size_t end = acts.rows * (p + 1) / parts;
        for (std::size_t r = begin; r < end; ++r) {
          if (deadline && deadline->expired()) throw TimeoutError("coverage: time budget exceeded");
          const auto row = acts.row(r);
          for (std::size_t m = 0; m < clusters.size(); ++m) {
            const std::size_t width = acts.cols() - subject_column;
            partial[p].idc[m].add(row.subspan(subject_column, std::min(width, row.size() - subject_column)));
          }
          if (partial[p].baselines) partial[p].baselines->add(row);
        }
      },
      deadline, "coverage");

  CoverageAccumulation total = std::move(partial.front());
  for (std::size_t p = 1; p < parts; ++p) {
    for (std::size_t m = 0; m < clusters.size(); ++m) total.idc[m].merge(partial[p].idc[m]);
    if (total.baselines) total.baselines->merge(*partial[p].baselines);
  }
  return total;
}

}  // namespace idc
