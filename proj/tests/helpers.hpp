#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ham/params.hpp"

namespace ham::testing {

inline ParamSet random_params(const std::vector<std::pair<std::string, Shape>>& layout, std::mt19937_64& rng,
                              double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  ParamSet ps;
  for (const auto& [name, shape] : layout) {
    std::vector<double> v(shape_size(shape));
    for (auto& x : v) x = n(rng);
    ps.add(name, TensorF(shape, std::move(v)));
  }
  return ps;
}

inline ParamSet single(const std::string& name, std::vector<double> v) {
  ParamSet ps;
  const auto n = v.size();
  ps.add(name, TensorF({n}, std::move(v)));
  return ps;
}

inline const std::vector<std::pair<std::string, Shape>>& small_layout() {
  static const std::vector<std::pair<std::string, Shape>> l{{"W1", {4, 3}}, {"b1", {4}}, {"W2", {2, 4}}, {"b2", {2}}};
  return l;
}

inline std::vector<std::pair<std::string, Shape>> layout_of(const ParamSet& ps) {
  std::vector<std::pair<std::string, Shape>> out;
  for (const auto& e : ps) out.emplace_back(e.name, e.tensor.shape);
  return out;
}

inline double max_abs_diff(const ParamSet& a, const ParamSet& b) {
  require_congruent(a, b, "max_abs_diff");
  double worst = 0.0;
  for (std::size_t l = 0; l < a.num_layers(); ++l) {
    const auto& x = a[l].tensor.values;
    const auto& y = b[l].tensor.values;
    for (std::size_t j = 0; j < x.size(); ++j) worst = std::max(worst, std::abs(x[j] - y[j]));
  }
  return worst;
}

inline FlatVec flat_of(std::vector<double> v) { return flatten(single("v", std::move(v))); }

}  // namespace ham::testing
