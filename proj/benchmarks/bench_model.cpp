#include <benchmark/benchmark.h>

#include "common.hpp"
#include "ham/train.hpp"

namespace {

using namespace ham;

void BM_Forward(benchmark::State& state) {
  const auto model = bench::default_model();
  const auto params = init_encoder(model.config, 2);
  const auto x = bench::random_inputs(1, model.config.input_dim, 9).front();
  for (auto _ : state) benchmark::DoNotOptimize(forward(model, params, x));
}
BENCHMARK(BM_Forward);

void BM_TotalLossAndGrad(benchmark::State& state) {
  const auto model = bench::default_model();
  const auto theta0 = init_encoder(model.config, 2);
  const auto params = bench::jitter(theta0, 0.05, 6);
  const auto v_bar = update_vector(bench::jitter(theta0, 0.05, 7), theta0);
  const auto xs = bench::random_inputs(static_cast<std::size_t>(state.range(0)), model.config.input_dim, 8);
  std::vector<Labeled> batch;
  for (std::size_t i = 0; i < xs.size(); ++i) batch.push_back({xs[i], i % model.num_classes()});
  for (auto _ : state) {
    benchmark::DoNotOptimize(total_loss_and_grad(model, params, batch, theta0, v_bar, 0.5, SignMode::layer_dot));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TotalLossAndGrad)->Arg(24)->Arg(48)->Arg(96);

}  // namespace
