// OpenMP kernels against their serial references.
// Run with OMP_NUM_THREADS set to compare thread counts.

#include <benchmark/benchmark.h>
#include <omp.h>

#include "passync/experiments.hpp"

using namespace passync;

namespace {

ExperimentConfig mc_config(Scenario s) {
  ExperimentConfig c = default_config(s);
  c.trials = 32;
  c.epochs = 100;
  c.hcrb_samples = 100;
  return c;
}

MapSettings map_settings() {
  MapSettings s;
  s.scene = default_config(Scenario::Transceivers).scene;
  s.sigma = 5.0;
  s.epochs = 250;
  return s;
}

GridSpec grid() {
  GridSpec g;
  g.exclusion_radius = 0.5;
  return g;
}

void BM_MonteCarloParallel(benchmark::State& state) {
  const auto c = mc_config(static_cast<Scenario>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(run_monte_carlo(c));
  state.counters["threads"] = omp_get_max_threads();
}

void BM_MonteCarloSerial(benchmark::State& state) {
  const auto c = mc_config(static_cast<Scenario>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(run_monte_carlo_serial(c));
}

void BM_MapParallel(benchmark::State& state) {
  const auto s = map_settings();
  const auto g = grid();
  for (auto _ : state) benchmark::DoNotOptimize(bound_map(g, s));
  state.counters["threads"] = omp_get_max_threads();
}

void BM_MapSerial(benchmark::State& state) {
  const auto s = map_settings();
  const auto g = grid();
  for (auto _ : state) benchmark::DoNotOptimize(bound_map_serial(g, s));
}

}  // namespace

// arg 0 = prior scenario, 1 = transceivers
BENCHMARK(BM_MonteCarloParallel)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MonteCarloSerial)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MapParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MapSerial)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
