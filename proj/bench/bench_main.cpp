// Serial reference against the OpenMP path for the per-input kernels.
#include <benchmark/benchmark.h>

#include <filesystem>
#include <numeric>

#include "idc/coverage.hpp"
#include "idc/io.hpp"
#include "idc/perturb.hpp"
#include "idc/quantize.hpp"
#include "idc/relevance.hpp"

using namespace idc;

namespace {

std::filesystem::path fixture(const char* name) { return std::filesystem::path(IDC_FIXTURE_DIR) / name; }

struct Fixture {
  Model model;
  Dataset test;
  std::size_t subject;
  ClusterModel clusters;
  NeuronRanges ranges;
  ActivationMatrix acts;
  std::size_t subject_column = 0;

  explicit Fixture(const char* stem)
      : model(load_model(fixture((std::string(stem) + ".json").c_str()), fixture((std::string(stem) + ".bin").c_str()))),
        test(load_dataset(fixture("mnist_test.idcd"))),
        subject(model.resolve_layer(-2)) {
    const Dataset train = load_dataset(fixture("mnist_train.idcd"));
    clusters = cluster_important_neurons(model, train, analyze_importance(model, train, subject, 8), {});
    const auto& layers = model.neuron_layers();
    ranges = training_ranges(collect_activations(model, train, layers));
    acts = collect_activations(model, test, layers);
    const auto pos = static_cast<std::size_t>(std::find(layers.begin(), layers.end(), subject) - layers.begin());
    subject_column = acts.offsets[pos];
  }
};

const Fixture& get(int which) {
  static const Fixture mlp("mlp");
  static const Fixture convnet("convnet");
  return which == 0 ? mlp : convnet;
}

Execution exec_of(const benchmark::State& state) {
  return state.range(1) ? Execution::Parallel : Execution::Serial;
}

void label(benchmark::State& state) {
  state.SetLabel(std::string(state.range(0) ? "convnet" : "mlp") + (state.range(1) ? "/parallel" : "/serial"));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(get(static_cast<int>(state.range(0))).test.count()));
}

void BM_Forward(benchmark::State& state) {
  const auto& f = get(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(collect_activations(f.model, f.test, f.model.neuron_layers(), exec_of(state)));
  label(state);
}

void BM_Relevance(benchmark::State& state) {
  const auto& f = get(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(collect_relevance(f.model, f.test, f.subject, exec_of(state)));
  label(state);
}

void BM_Coverage(benchmark::State& state) {
  const auto& f = get(static_cast<int>(state.range(0)));
  for (auto _ : state)
    benchmark::DoNotOptimize(accumulate_coverage(f.acts, f.subject_column, std::span(&f.clusters, 1), &f.ranges, {},
                                                 exec_of(state)));
  label(state);
}

void BM_PerturbRelevant(benchmark::State& state) {
  const auto& f = get(static_cast<int>(state.range(0)));
  PerturbationSpec spec;
  spec.mode = PerturbMode::RelevantPixels;
  for (auto _ : state) benchmark::DoNotOptimize(make_udi(f.model, f.test, spec, exec_of(state)));
  label(state);
}

#define IDC_BENCH(fn) BENCHMARK(fn)->ArgsProduct({{0, 1}, {0, 1}})->Unit(benchmark::kMillisecond)->UseRealTime()

IDC_BENCH(BM_Forward);
IDC_BENCH(BM_Relevance);
IDC_BENCH(BM_Coverage);
IDC_BENCH(BM_PerturbRelevant);

}  // namespace

BENCHMARK_MAIN();
