#include <benchmark/benchmark.h>

#include "common.hpp"

namespace {

using namespace ham;

void BM_Flatten(benchmark::State& state) {
  const auto theta = init_encoder(EncoderConfig{}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(flatten(theta));
}
BENCHMARK(BM_Flatten);

void BM_MagnitudePercentile(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto xs = bench::random_inputs(1, n, 5).front();
  for (auto _ : state) benchmark::DoNotOptimize(magnitude_percentile(xs, 0.2));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MagnitudePercentile)->RangeMultiplier(8)->Range(1 << 10, 1 << 19);

void BM_UpdateVector(benchmark::State& state) {
  const auto theta0 = init_encoder(EncoderConfig{}, 3);
  const auto theta = bench::jitter(theta0, 0.01, 4);
  for (auto _ : state) benchmark::DoNotOptimize(update_vector(theta, theta0));
}
BENCHMARK(BM_UpdateVector);

}  // namespace
