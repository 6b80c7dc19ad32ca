#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ham/params.hpp"

namespace ham {

enum class MergeStrategy { rhm, avg, layer_trim, best_model };
enum class TrimLevel { model, layer };

std::string to_string(MergeStrategy s);
MergeStrategy merge_strategy_from_string(const std::string& s);

struct MergeInput {
  ParamSet theta0;
  std::vector<ParamSet> sources;
  double trim_ratio = 0.2;
  MergeStrategy strategy = MergeStrategy::rhm;
};

struct MergeReport {
  MergeStrategy strategy = MergeStrategy::rhm;
  double trim_ratio = 0.0;
  std::vector<std::string> layer_names;
  std::vector<double> kept_fraction;                 // per source
  std::vector<std::vector<std::size_t>> kept_counts;  // per source, per layer
  std::size_t total_coords = 0;
  std::size_t all_zero_mask_coords = 0;
  std::optional<std::size_t> selected;  // best_model only
};

void to_json(nlohmann::json& j, const MergeReport& r);

// theta0 + (sum_i (theta_i - theta0)) / N, summed in source order.
ParamSet avg_merge(const MergeInput& input);

struct TrimmedUpdate {
  ParamSet update;  // masked update vector
  BitMask mask;
};

/// Magnitude trimming of theta_i - theta0. Model level uses one threshold for
/// the whole flattened update; layer level recomputes it per layer segment.
TrimmedUpdate trim_source(const ParamSet& theta_i, const ParamSet& theta0, double r, TrimLevel level = TrimLevel::model);

/// Per coordinate: sum of kept updates divided by the number of sources that
/// kept it; coordinates no source kept stay at theta0.
ParamSet disjoint_mean_merge(const ParamSet& theta0, std::span<const TrimmedUpdate> trimmed);

// Model-level trim of every source followed by the disjoint mean.
std::pair<ParamSet, MergeReport> rhm(const MergeInput& input);

// Index of the highest validation accuracy, earliest on ties.
std::size_t best_model_select(std::span<const ParamSet> candidates, std::span<const double> val_accuracies);

/// Dispatches on input.strategy. best_model requires one validation accuracy
/// per source.
std::pair<ParamSet, MergeReport> merge(const MergeInput& input,
                                       std::span<const double> val_accuracies = {});

// Trims every source at `level` and reports the masks (useful for auditing).
std::vector<TrimmedUpdate> trim_all(const MergeInput& input, TrimLevel level);

}  // namespace ham
