#include "ham/config.hpp"

#include <algorithm>
#include <cmath>

#include "ham/checkpoint.hpp"
#include "ham/eval.hpp"
#include "json_util.hpp"

namespace ham {

std::string to_string(SweepParameter p) {
  switch (p) {
    case SweepParameter::lambda:
      return "lambda";
    case SweepParameter::r:
      return "r";
    case SweepParameter::beta:
      return "beta";
    case SweepParameter::logit_scale:
      return "logit_scale";
  }
  return "?";
}

SweepParameter sweep_parameter_from_string(const std::string& s) {
  if (s == "lambda") return SweepParameter::lambda;
  if (s == "r") return SweepParameter::r;
  if (s == "beta") return SweepParameter::beta;
  if (s == "logit_scale") return SweepParameter::logit_scale;
  throw ConfigError("eval.sweep.parameter", "expected lambda, r, beta or logit_scale, got \"" + s + "\"");
}

EncoderConfig RunConfig::encoder_config() const {
  auto e = model.encoder;
  e.input_dim = data.input_dim;
  return e;
}

void RunConfig::validate() const {
  data.validate();
  encoder_config().validate();
  if (model.encoder.embed_dim < 2) throw ConfigError("model.embed_dim", "must be >= 2");
  train.validate();
  if (!(merge.r >= 0.0 && merge.r < 1.0)) throw ConfigError("merge.r", "must lie in [0, 1)");
  if (eval.seeds.empty()) throw ConfigError("eval.seeds", "at least one seed is required");
  if (eval.strategies.empty()) throw ConfigError("eval.strategies", "at least one strategy is required");
  const auto ids = [&] {
    std::vector<int> v;
    for (const auto& d : data.domains) v.push_back(d.domain_id);
    return v;
  }();
  for (int h : eval.held_out) {
    if (std::find(ids.begin(), ids.end(), h) == ids.end()) {
      throw ConfigError("eval.held_out", "domain " + std::to_string(h) + " is not generated");
    }
  }
  const auto rows = ablation_row_names();
  for (const auto& r : eval.ablation_rows) {
    if (std::find(rows.begin(), rows.end(), r) == rows.end()) {
      throw ConfigError("eval.ablation_rows", "unknown row \"" + r + "\"");
    }
  }
  if (eval.sweep.values.size() < 2) throw ConfigError("eval.sweep.values", "a sweep needs at least two values");
  for (double v : eval.sweep.values) {
    if (!std::isfinite(v)) throw ConfigError("eval.sweep.values", "values must be finite");
  }
}

namespace {

std::string enum_string(detail::StrictObject& o, const std::string& key, const std::string& fallback) {
  std::string s = fallback;
  o.get(key, s);
  return s;
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::StrictObject root(j, "");
  if (const auto* d = root.child("data")) c.data = generate_config_from_json(*d, "data");

  if (const auto* m = root.child("model")) {
    detail::StrictObject o(*m, "model");
    auto& e = c.model.encoder;
    std::size_t input_dim = 0;
    if (o.get("input_dim", input_dim) && input_dim != c.data.input_dim) {
      throw ConfigError("model.input_dim", "must equal data.input_dim");
    }
    o.get("hidden_dims", e.hidden_dims);
    o.get("embed_dim", e.embed_dim);
    o.get("activation", e.activation);
    o.get("logit_scale", e.logit_scale);
    o.get("seed", c.model.seed);
    o.finish();
  }

  if (const auto* t = root.child("train")) {
    detail::StrictObject o(*t, "train");
    auto& h = c.train;
    o.get("lambda", h.lambda);
    h.sign_mode = sign_mode_from_string(enum_string(o, "sign_mode", to_string(h.sign_mode)));
    o.get("beta", h.beta);
    o.get("steps", h.steps);
    o.get("batch_size", h.batch_size);
    o.get("lr", h.lr);
    o.get("weight_decay", h.weight_decay);
    o.get("sae", h.sae);
    o.get("snapshot_every", h.snapshot_every);
    o.get("parallel_sources", h.parallel_sources);
    o.get("seed", h.seed);
    o.finish();
  }

  if (const auto* m = root.child("merge")) {
    detail::StrictObject o(*m, "merge");
    c.merge.strategy = merge_strategy_from_string(enum_string(o, "strategy", to_string(c.merge.strategy)));
    o.get("r", c.merge.r);
    o.finish();
  }

  if (const auto* e = root.child("eval")) {
    detail::StrictObject o(*e, "eval");
    o.get("seeds", c.eval.seeds);
    std::vector<std::string> names;
    if (o.get("strategies", names)) {
      c.eval.strategies.clear();
      for (const auto& n : names) c.eval.strategies.push_back(merge_strategy_from_string(n));
    }
    o.get("held_out", c.eval.held_out);
    o.get("ablation_rows", c.eval.ablation_rows);
    if (const auto* s = o.child("sweep")) {
      detail::StrictObject so(*s, "eval.sweep");
      c.eval.sweep.parameter =
          sweep_parameter_from_string(enum_string(so, "parameter", to_string(c.eval.sweep.parameter)));
      so.get("values", c.eval.sweep.values);
      so.finish();
    }
    o.finish();
  }
  root.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("<file>", path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json strategies = nlohmann::json::array();
  for (auto s : c.eval.strategies) strategies.push_back(to_string(s));
  const auto& e = c.model.encoder;
  const auto& h = c.train;
  return nlohmann::json{
      {"data", c.data},
      {"model",
       {{"hidden_dims", e.hidden_dims},
        {"embed_dim", e.embed_dim},
        {"activation", e.activation},
        {"logit_scale", e.logit_scale},
        {"seed", c.model.seed}}},
      {"train",
       {{"lambda", h.lambda},
        {"sign_mode", to_string(h.sign_mode)},
        {"beta", h.beta},
        {"steps", h.steps},
        {"batch_size", h.batch_size},
        {"lr", h.lr},
        {"weight_decay", h.weight_decay},
        {"sae", h.sae},
        {"snapshot_every", h.snapshot_every},
        {"parallel_sources", h.parallel_sources},
        {"seed", h.seed}}},
      {"merge", {{"strategy", to_string(c.merge.strategy)}, {"r", c.merge.r}}},
      {"eval",
       {{"seeds", c.eval.seeds},
        {"strategies", strategies},
        {"held_out", c.eval.held_out},
        {"ablation_rows", c.eval.ablation_rows},
        {"sweep", {{"parameter", to_string(c.eval.sweep.parameter)}, {"values", c.eval.sweep.values}}}}},
  };
}

}  // namespace ham
