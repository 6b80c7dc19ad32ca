#include "ham/diagnostics.hpp"

namespace ham {

double accuracy(const CosineClassifier& model, const ParamSet& params, const DatasetView& view) {
  if (view.empty()) throw DomainError("accuracy: empty dataset");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < view.size(); ++i) {
    if (predict(model, params, view[i].x) == view[i].y) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(view.size());
}

double sign_conflict_rate(const ParamSet& v_i, const ParamSet& v_bar) {
  require_congruent(v_i, v_bar, "sign_conflict_rate");
  std::size_t both = 0;
  std::size_t conflict = 0;
  for (std::size_t l = 0; l < v_i.num_layers(); ++l) {
    const auto& a = v_i[l].tensor.values;
    const auto& b = v_bar[l].tensor.values;
    for (std::size_t j = 0; j < a.size(); ++j) {
      if (a[j] == 0.0 || b[j] == 0.0) continue;
      ++both;
      if ((a[j] > 0.0) != (b[j] > 0.0)) ++conflict;
    }
  }
  return both ? static_cast<double>(conflict) / static_cast<double>(both) : 0.0;
}

}  // namespace ham
