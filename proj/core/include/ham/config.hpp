#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ham/data.hpp"
#include "ham/merge.hpp"
#include "ham/model.hpp"
#include "ham/train.hpp"

namespace ham {

struct ModelSection {
  // input_dim is taken from the data section.
  EncoderConfig encoder;
  // Seeds theta0 and the prototypes; fixed across protocol seeds so the
  // zero-shot row only depends on this and the data seed.
  std::uint64_t seed = 1234;

  bool operator==(const ModelSection&) const = default;
};

struct MergeSection {
  MergeStrategy strategy = MergeStrategy::rhm;
  double r = 0.2;

  bool operator==(const MergeSection&) const = default;
};

enum class SweepParameter { lambda, r, beta, logit_scale };

std::string to_string(SweepParameter p);
SweepParameter sweep_parameter_from_string(const std::string& s);

struct SweepSection {
  SweepParameter parameter = SweepParameter::lambda;
  std::vector<double> values{0.0, 0.1, 0.5, 1.0};

  bool operator==(const SweepSection&) const = default;
};

struct EvalSection {
  std::vector<std::uint64_t> seeds{41, 42, 43};
  std::vector<MergeStrategy> strategies{MergeStrategy::avg, MergeStrategy::rhm, MergeStrategy::layer_trim,
                                        MergeStrategy::best_model};
  // Domains to hold out in turn; empty means every domain.
  std::vector<int> held_out;
  // Rows of the ablation table; empty means all of them.
  std::vector<std::string> ablation_rows;
  SweepSection sweep;

  bool operator==(const EvalSection&) const = default;
};

struct RunConfig {
  GenerateConfig data;
  ModelSection model;
  HarmonyConfig train;
  MergeSection merge;
  EvalSection eval;

  // Model config with input_dim filled in from the data section.
  EncoderConfig encoder_config() const;
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

// Strict parse: every field optional, unknown keys rejected. Validates.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
// Fully resolved config, defaults included.
nlohmann::json to_json(const RunConfig& c);

}  // namespace ham
