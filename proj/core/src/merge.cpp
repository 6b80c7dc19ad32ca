#include "ham/merge.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace ham {

std::string to_string(MergeStrategy s) {
  switch (s) {
    case MergeStrategy::rhm:
      return "rhm";
    case MergeStrategy::avg:
      return "avg";
    case MergeStrategy::layer_trim:
      return "layer_trim";
    case MergeStrategy::best_model:
      return "best_model";
  }
  return "?";
}

MergeStrategy merge_strategy_from_string(const std::string& s) {
  if (s == "rhm") return MergeStrategy::rhm;
  if (s == "avg") return MergeStrategy::avg;
  if (s == "layer_trim") return MergeStrategy::layer_trim;
  if (s == "best_model") return MergeStrategy::best_model;
  throw ConfigError("merge.strategy", "unknown strategy \"" + s + "\" (rhm, avg, layer_trim, best_model)");
}

void to_json(nlohmann::json& j, const MergeReport& r) {
  j = nlohmann::json{{"strategy", to_string(r.strategy)},
                     {"trim_ratio", r.trim_ratio},
                     {"layer_names", r.layer_names},
                     {"kept_fraction", r.kept_fraction},
                     {"kept_counts", r.kept_counts},
                     {"total_coords", r.total_coords},
                     {"all_zero_mask_coords", r.all_zero_mask_coords}};
  if (r.selected) j["selected"] = *r.selected;
}

namespace {

void check_input(const MergeInput& in) {
  if (in.sources.empty()) throw DomainError("merge: no source models");
  for (const auto& s : in.sources) require_congruent(s, in.theta0, "merge");
  if (!(in.trim_ratio >= 0.0 && in.trim_ratio < 1.0)) throw ConfigError("merge.r", "must lie in [0, 1)");
}

MergeReport base_report(const MergeInput& in) {
  MergeReport rep;
  rep.strategy = in.strategy;
  rep.trim_ratio = in.trim_ratio;
  for (const auto& e : in.theta0) rep.layer_names.push_back(e.name);
  rep.total_coords = in.theta0.num_values();
  return rep;
}

MergeReport untrimmed_report(const MergeInput& in) {
  auto rep = base_report(in);
  for (std::size_t i = 0; i < in.sources.size(); ++i) {
    rep.kept_fraction.push_back(1.0);
    std::vector<std::size_t> counts;
    for (const auto& e : in.theta0) counts.push_back(e.tensor.size());
    rep.kept_counts.push_back(std::move(counts));
  }
  return rep;
}

MergeReport trimmed_report(const MergeInput& in, std::span<const TrimmedUpdate> trimmed) {
  auto rep = base_report(in);
  const auto n = rep.total_coords;
  std::vector<std::size_t> votes(n, 0);
  for (const auto& t : trimmed) {
    rep.kept_fraction.push_back(n ? static_cast<double>(t.mask.count()) / static_cast<double>(n) : 0.0);
    std::vector<std::size_t> counts;
    for (const auto& seg : t.mask.layout.segments) {
      std::size_t c = 0;
      for (std::size_t j = seg.offset; j < seg.offset + seg.length; ++j) c += t.mask.bits[j] ? 1 : 0;
      counts.push_back(c);
    }
    rep.kept_counts.push_back(std::move(counts));
    for (std::size_t j = 0; j < n; ++j) votes[j] += t.mask.bits[j] ? 1 : 0;
  }
  for (auto v : votes) rep.all_zero_mask_coords += v == 0 ? 1 : 0;
  return rep;
}

}  // namespace

ParamSet avg_merge(const MergeInput& input) {
  check_input(input);
  if (input.sources.size() == 1) return input.sources[0];
  ParamSet sum = update_vector(input.sources[0], input.theta0);
  for (std::size_t i = 1; i < input.sources.size(); ++i) sum = add(sum, update_vector(input.sources[i], input.theta0));
  const double n = static_cast<double>(input.sources.size());
  ParamSet out = input.theta0;
  for (std::size_t l = 0; l < out.num_layers(); ++l) {
    auto& dst = out[l].tensor.values;
    const auto& s = sum[l].tensor.values;
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += s[j] / n;
  }
  return out;
}

TrimmedUpdate trim_source(const ParamSet& theta_i, const ParamSet& theta0, double r, TrimLevel level) {
  if (!(r >= 0.0 && r < 1.0)) throw ConfigError("merge.r", "must lie in [0, 1)");
  const auto flat = flatten(update_vector(theta_i, theta0));
  BitMask mask;
  if (level == TrimLevel::model) {
    mask = mask_above(flat, magnitude_percentile(flat, r));
  } else {
    mask.layout = flat.layout;
    mask.bits.resize(flat.values.size());
    for (std::size_t s = 0; s < flat.layout.segments.size(); ++s) {
      const auto seg = flat.segment(s);
      const double sigma = magnitude_percentile(seg, r);
      const auto off = flat.layout.segments[s].offset;
      for (std::size_t j = 0; j < seg.size(); ++j) mask.bits[off + j] = std::fabs(seg[j]) > sigma;
    }
  }
  return {split(apply_mask(flat, mask)), std::move(mask)};
}

ParamSet disjoint_mean_merge(const ParamSet& theta0, std::span<const TrimmedUpdate> trimmed) {
  if (trimmed.empty()) throw DomainError("disjoint_mean_merge: no sources");
  for (const auto& t : trimmed) {
    require_congruent(t.update, theta0, "disjoint_mean_merge");
    if (t.mask.bits.size() != theta0.num_values()) throw StructuralError("disjoint_mean_merge: mask size mismatch");
  }
  ParamSet out = theta0;
  std::size_t flat = 0;
  for (std::size_t l = 0; l < out.num_layers(); ++l) {
    auto& dst = out[l].tensor.values;
    for (std::size_t j = 0; j < dst.size(); ++j, ++flat) {
      double sum = 0.0;
      std::size_t kept = 0;
      for (const auto& t : trimmed) {
        sum += t.update[l].tensor.values[j];
        kept += t.mask.bits[flat] ? 1 : 0;
      }
      if (kept > 0) dst[j] += sum / static_cast<double>(kept);
    }
  }
  return out;
}

std::vector<TrimmedUpdate> trim_all(const MergeInput& input, TrimLevel level) {
  check_input(input);
  std::vector<TrimmedUpdate> out;
  out.reserve(input.sources.size());
  for (const auto& s : input.sources) out.push_back(trim_source(s, input.theta0, input.trim_ratio, level));
  return out;
}

std::pair<ParamSet, MergeReport> rhm(const MergeInput& input) {
  const auto trimmed = trim_all(input, TrimLevel::model);
  auto report = trimmed_report(input, trimmed);
  report.strategy = MergeStrategy::rhm;
  if (input.trim_ratio == 0.0) return {avg_merge(input), std::move(report)};
  return {disjoint_mean_merge(input.theta0, trimmed), std::move(report)};
}

std::size_t best_model_select(std::span<const ParamSet> candidates, std::span<const double> val_accuracies) {
  if (candidates.empty()) throw DomainError("best_model_select: no candidates");
  if (candidates.size() != val_accuracies.size()) {
    throw DomainError("best_model_select: one validation accuracy per candidate is required");
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < val_accuracies.size(); ++i) {
    if (val_accuracies[i] > val_accuracies[best]) best = i;
  }
  return best;
}

std::pair<ParamSet, MergeReport> merge(const MergeInput& input, std::span<const double> val_accuracies) {
  switch (input.strategy) {
    case MergeStrategy::rhm:
      return rhm(input);
    case MergeStrategy::avg:
      return {avg_merge(input), untrimmed_report(input)};
    case MergeStrategy::layer_trim: {
      const auto trimmed = trim_all(input, TrimLevel::layer);
      return {disjoint_mean_merge(input.theta0, trimmed), trimmed_report(input, trimmed)};
    }
    case MergeStrategy::best_model: {
      check_input(input);
      const auto idx = best_model_select(input.sources, val_accuracies);
      auto rep = untrimmed_report(input);
      rep.selected = idx;
      return {input.sources[idx], std::move(rep)};
    }
  }
  throw DomainError("merge: unknown strategy");
}

}  // namespace ham
