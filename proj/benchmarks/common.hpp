#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "ham/model.hpp"
#include "ham/params.hpp"

namespace ham::bench {

inline ParamSet jitter(const ParamSet& base, double sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sd);
  ParamSet out = base;
  for (std::size_t l = 0; l < out.num_layers(); ++l) {
    for (auto& v : out[l].tensor.values) v += n(rng);
  }
  return out;
}

inline CosineClassifier default_model() {
  CosineClassifier m;
  m.prototypes = init_prototypes(5, m.config.embed_dim, 1);
  return m;
}

inline std::vector<std::vector<double>> random_inputs(std::size_t n, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<std::vector<double>> xs(n, std::vector<double>(dim));
  for (auto& x : xs) {
    for (auto& v : x) v = g(rng);
  }
  return xs;
}

}  // namespace ham::bench
