#include <benchmark/benchmark.h>

#include "common.hpp"
#include "ham/merge.hpp"

namespace {

using namespace ham;

MergeInput make_input(std::size_t n_sources, MergeStrategy strategy) {
  EncoderConfig cfg;
  cfg.hidden_dims = {128, 128};
  MergeInput in;
  in.theta0 = init_encoder(cfg, 1);
  for (std::size_t i = 0; i < n_sources; ++i) in.sources.push_back(bench::jitter(in.theta0, 0.02, 10 + i));
  in.strategy = strategy;
  return in;
}

void BM_Avg(benchmark::State& state) {
  const auto in = make_input(static_cast<std::size_t>(state.range(0)), MergeStrategy::avg);
  for (auto _ : state) benchmark::DoNotOptimize(avg_merge(in));
}
BENCHMARK(BM_Avg)->Arg(3)->Arg(8);

void BM_Rhm(benchmark::State& state) {
  const auto in = make_input(static_cast<std::size_t>(state.range(0)), MergeStrategy::rhm);
  for (auto _ : state) benchmark::DoNotOptimize(rhm(in));
}
BENCHMARK(BM_Rhm)->Arg(3)->Arg(8);

void BM_LayerTrim(benchmark::State& state) {
  const auto in = make_input(static_cast<std::size_t>(state.range(0)), MergeStrategy::layer_trim);
  for (auto _ : state) benchmark::DoNotOptimize(merge(in));
}
BENCHMARK(BM_LayerTrim)->Arg(3)->Arg(8);

}  // namespace
