#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ham/config.hpp"
#include "ham/errors.hpp"

using namespace ham;
using nlohmann::json;

namespace {

std::string error_field(const json& j) {
  try {
    run_config_from_json(j);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "";
}

}  // namespace

TEST_CASE("defaults") {
  const auto c = run_config_from_json(json::object());
  CHECK(c == RunConfig{});
  CHECK(c.data.num_classes == 5);
  CHECK(c.data.input_dim == 8);
  CHECK(c.data.n_per_domain == 500);
  CHECK(c.data.domains.size() == 4);
  CHECK(c.model.encoder.hidden_dims == std::vector<std::size_t>{32, 32});
  CHECK(c.model.encoder.embed_dim == 16);
  CHECK(c.model.encoder.logit_scale == 10.0);
  CHECK(c.train.lambda == 0.5);
  CHECK(c.train.sign_mode == SignMode::layer_dot);
  CHECK(c.train.beta == 0.5);
  CHECK(c.train.batch_size == 24);
  CHECK(c.train.lr == 1e-3);
  CHECK(c.train.weight_decay == 0.1);
  CHECK(c.merge.strategy == MergeStrategy::rhm);
  CHECK(c.merge.r == 0.2);
  CHECK(c.eval.seeds == std::vector<std::uint64_t>{41, 42, 43});
  CHECK(c.encoder_config().input_dim == 8);
}

TEST_CASE("round trip through the resolved form") {
  RunConfig c;
  c.data.num_classes = 3;
  c.data.input_dim = 5;
  c.data.domains[1].offset = {1, 2};
  c.model.encoder.hidden_dims = {7};
  c.train.lambda = 0.25;
  c.train.sign_mode = SignMode::elementwise;
  c.train.sae = false;
  c.merge.strategy = MergeStrategy::layer_trim;
  c.merge.r = 0.35;
  c.eval.seeds = {1, 1};
  c.eval.strategies = {MergeStrategy::avg};
  c.eval.held_out = {2};
  c.eval.ablation_rows = {"avg", "ham"};
  c.eval.sweep = {SweepParameter::r, {0.0, 0.4}};
  const auto j = to_json(c);
  CHECK(run_config_from_json(j) == c);
  CHECK(to_json(run_config_from_json(j)).dump() == j.dump());
  CHECK(j["train"]["sign_mode"] == "elementwise");
  CHECK(j["merge"]["strategy"] == "layer_trim");
}

TEST_CASE("partial sections keep other defaults") {
  const auto c = run_config_from_json(json::parse(R"({"train": {"steps": 10}, "merge": {"r": 0.5}})"));
  CHECK(c.train.steps == 10);
  CHECK(c.train.lambda == 0.5);
  CHECK(c.merge.r == 0.5);
  CHECK(c.merge.strategy == MergeStrategy::rhm);
}

TEST_CASE("strict parsing names the field") {
  CHECK(error_field(json::parse(R"({"data": {"num_classes": 1}})")) == "data.num_classes");
  CHECK(error_field(json::parse(R"({"train": {"lambda": 2}})")) == "train.lambda");
  CHECK(error_field(json::parse(R"({"merge": {"r": 1.0}})")) == "merge.r");
  CHECK(error_field(json::parse(R"({"merge": {"strategy": "ties"}})")) == "merge.strategy");
  CHECK(error_field(json::parse(R"({"train": {"sign_mode": "cos"}})")) == "train.sign_mode");
  CHECK(error_field(json::parse(R"({"eval": {"seeds": []}})")) == "eval.seeds");
  CHECK(error_field(json::parse(R"({"eval": {"held_out": [9]}})")) == "eval.held_out");
  CHECK(error_field(json::parse(R"({"eval": {"ablation_rows": ["nope"]}})")) == "eval.ablation_rows");
  CHECK(error_field(json::parse(R"({"eval": {"sweep": {"values": [0.5]}}})")) == "eval.sweep.values");
  CHECK(error_field(json::parse(R"({"eval": {"sweep": {"parameter": "lr"}}})")) == "eval.sweep.parameter");
  CHECK(error_field(json::parse(R"({"model": {"input_dim": 3}})")) == "model.input_dim");
  CHECK(error_field(json::parse(R"({"model": {"embed_dim": 1}})")) == "model.embed_dim");
  CHECK(error_field(json::parse(R"({"train": {"steps": -4}})")) == "train.steps");
  CHECK(error_field(json::parse(R"({"train": {"lr": "fast"}})")) == "train.lr");
  CHECK(error_field(json::parse("[1, 2]")) == "<root>");

  const auto unknown = error_field(json::parse(R"({"train": {"trim_ratio": 0.2}})"));
  CHECK(unknown.find("train") != std::string::npos);
  CHECK(unknown.find("trim_ratio") != std::string::npos);
  CHECK(error_field(json::parse(R"({"extra": {}})")).find("extra") != std::string::npos);
}

TEST_CASE("load_run_config") {
  const auto dir = std::filesystem::temp_directory_path() / "ham_test_config";
  std::filesystem::create_directories(dir);
  {
    std::ofstream(dir / "ok.json") << R"({"train": {"steps": 3}})";
    std::ofstream(dir / "bad.json") << "{ not json";
  }
  CHECK(load_run_config(dir / "ok.json").train.steps == 3);
  CHECK_THROWS_AS(load_run_config(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(load_run_config(dir / "missing.json"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("sweep parameter names") {
  for (auto p : {SweepParameter::lambda, SweepParameter::r, SweepParameter::beta, SweepParameter::logit_scale}) {
    CHECK(sweep_parameter_from_string(to_string(p)) == p);
  }
}
