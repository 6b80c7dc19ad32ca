#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ham/checkpoint.hpp"
#include "ham/config.hpp"
#include "ham/data.hpp"
#include "ham/diagnostics.hpp"
#include "ham/errors.hpp"
#include "ham/eval.hpp"
#include "ham/merge.hpp"
#include "ham/model.hpp"
#include "ham/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit : int { kOk = 0, kConfig = 2, kNumerical = 3, kIo = 4 };

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  std::optional<std::string> strategy;
  std::optional<double> r;
  std::optional<double> lambda;
  bool plots = false;
};

ham::RunConfig resolve(const Common& c) {
  ham::RunConfig cfg = c.config.empty() ? ham::RunConfig{} : ham::load_run_config(c.config);
  if (c.strategy) {
    const auto s = ham::merge_strategy_from_string(*c.strategy);
    cfg.merge.strategy = s;
    cfg.eval.strategies = {s};
  }
  if (c.r) cfg.merge.r = *c.r;
  if (c.lambda) cfg.train.lambda = *c.lambda;
  if (c.seed) cfg.eval.seeds = {*c.seed};
  cfg.validate();
  return cfg;
}

// Report CSVs start with '#' comment lines carrying the resolved config.
std::string with_provenance(const json& config, const std::vector<std::uint64_t>& seeds, const std::string& csv) {
  return "# config: " + config.dump() + "\n# seeds: " + json(seeds).dump() + "\n" + csv;
}

void write_json(const fs::path& p, const json& j) { ham::write_file(p, j.dump(2) + "\n"); }

int cmd_gen(const Common& c) {
  auto cfg = c.config.empty() ? ham::RunConfig{} : ham::load_run_config(c.config);
  if (c.seed) cfg.data.seed = *c.seed;
  cfg.validate();
  const fs::path out = c.out.empty() ? fs::path("data") : fs::path(c.out);
  const auto ds = ham::generate(cfg.data);
  ham::save_csv(ds, out / "dataset.csv");
  write_json(out / "dataset.json", json{{"generate", cfg.data}, {"seeds", {cfg.data.seed}}, {"samples", ds.samples.size()}});
  std::cout << "wrote " << ds.samples.size() << " samples to " << (out / "dataset.csv").string() << "\n";
  return kOk;
}

int cmd_train(const Common& c, const std::string& data_path) {
  auto cfg = resolve(c);
  if (c.seed) cfg.train.seed = *c.seed;
  const fs::path out = c.out.empty() ? fs::path("train") : fs::path(c.out);

  auto ds = std::make_shared<ham::Dataset>(data_path.empty() ? ham::generate(cfg.data)
                                                             : ham::load_csv(data_path, cfg.data.num_classes));
  if (ds->input_dim != cfg.data.input_dim) throw ham::ConfigError("data.input_dim", "does not match the data file");
  const auto protocol = ham::make_protocol(cfg, ds);

  const auto split = ham::split_train_val(ham::DatasetView::all(ds), cfg.train.seed);
  std::vector<ham::DatasetView> sources;
  const auto domains = ds->domain_ids();
  for (int d : domains) sources.push_back(split.train.only_domain(d));

  ham::TrainResult res;
  try {
    res = ham::train_all(protocol.model, protocol.theta0, sources, cfg.train);
  } catch (const ham::TrainingDiverged& e) {
    const auto dump = out / "divergence.json";
    ham::write_file(dump, e.diagnostic() + "\n");
    std::cerr << "error: " << e.what() << "\ndiagnostic: " << dump.string() << "\n";
    return kNumerical;
  }

  ham::save_checkpoint(protocol.theta0, out / "theta0.json");
  ham::save_checkpoint(protocol.model.prototypes.to_params(), out / "prototypes.json");
  json sources_meta = json::array();
  for (std::size_t i = 0; i < res.trainers.size(); ++i) {
    const auto id = std::to_string(domains[i]);
    const auto& tr = res.trainers[i];
    ham::save_checkpoint(tr.ma_params, out / ("source_" + id + "_hist.json"));
    ham::save_checkpoint(tr.params, out / ("source_" + id + "_final.json"));
    sources_meta.push_back({{"domain_id", domains[i]},
                            {"train_size", sources[i].size()},
                            {"val_accuracy_hist", ham::accuracy(protocol.model, tr.ma_params, split.val)},
                            {"val_accuracy_final", ham::accuracy(protocol.model, tr.params, split.val)}});
  }
  ham::write_file(out / "train_log.jsonl", ham::step_log_jsonl(res.log));
  write_json(out / "train_meta.json",
             json{{"config", ham::to_json(cfg)}, {"seeds", {cfg.train.seed}}, {"sources", sources_meta}});
  std::cout << "trained " << res.trainers.size() << " sources for " << cfg.train.steps << " steps into "
            << out.string() << "\n";
  return kOk;
}

int cmd_merge(const Common& c, const std::string& theta0_path, const std::vector<std::string>& source_paths,
              const std::vector<double>& val_accs) {
  if (c.out.empty()) throw ham::ConfigError("--out", "an output checkpoint path is required");
  if (source_paths.empty()) throw ham::ConfigError("sources", "at least one source checkpoint is required");
  ham::MergeInput in;
  in.strategy = ham::merge_strategy_from_string(c.strategy.value_or("rhm"));
  in.trim_ratio = c.r.value_or(0.2);
  if (!(in.trim_ratio >= 0.0 && in.trim_ratio < 1.0)) throw ham::ConfigError("--r", "must lie in [0, 1)");
  in.theta0 = ham::load_checkpoint(theta0_path);
  for (const auto& p : source_paths) in.sources.push_back(ham::load_checkpoint(p));
  if (in.strategy == ham::MergeStrategy::best_model && val_accs.size() != in.sources.size()) {
    throw ham::ConfigError("--val-acc", "best_model needs one validation accuracy per source");
  }

  auto [merged, report] = ham::merge(in, val_accs);
  const fs::path out(c.out);
  ham::save_checkpoint(merged, out);
  auto stem = out;
  stem.replace_extension();

  json inputs{{"theta0", theta0_path}, {"sources", source_paths}};
  write_json(stem.string() + ".report.json", json{{"report", report}, {"inputs", inputs}});

  // Per-source keep masks as 0/1 strings in flattened layer order.
  json masks = json::array();
  if (in.strategy == ham::MergeStrategy::rhm || in.strategy == ham::MergeStrategy::layer_trim) {
    const auto level = in.strategy == ham::MergeStrategy::rhm ? ham::TrimLevel::model : ham::TrimLevel::layer;
    for (const auto& t : ham::trim_all(in, level)) {
      std::string bits;
      bits.reserve(t.mask.bits.size());
      for (bool b : t.mask.bits) bits.push_back(b ? '1' : '0');
      masks.push_back(bits);
    }
  }
  write_json(stem.string() + ".masks.json", json{{"strategy", ham::to_string(in.strategy)}, {"r", in.trim_ratio},
                                                 {"inputs", inputs}, {"masks", masks}});
  std::cout << "merged " << in.sources.size() << " sources with " << ham::to_string(in.strategy) << " into "
            << out.string() << "\n";
  return kOk;
}

void write_report(const fs::path& out, const std::string& stem, const ham::ExperimentReport& rep, bool plots) {
  write_json(out / (stem + ".json"), ham::to_json(rep));
  ham::write_file(out / (stem + "_rows.csv"), with_provenance(rep.config, rep.seeds, ham::rows_csv(rep.rows)));
  ham::write_file(out / (stem + "_summary.csv"), with_provenance(rep.config, rep.seeds, ham::summary_csv(rep.summary)));
  if (plots) {
    for (const auto& d : rep.diagnostics) {
      ham::write_file(out / "plots" /
                          ("loss_" + d.variant + "_h" + std::to_string(d.held_out) + "_s" + std::to_string(d.seed) +
                           ".svg"),
                      ham::loss_curves_svg(d));
    }
  }
}

void print_summary(const std::vector<ham::MethodSummary>& summary) {
  for (const auto& s : summary) {
    std::printf("%-16s %6.2f%% +- %5.2f  (n=%zu)\n", s.method.c_str(), 100.0 * s.mean, 100.0 * s.std, s.n);
  }
}

int cmd_run(const Common& c) {
  const auto cfg = resolve(c);
  const fs::path out = c.out.empty() ? fs::path("run") : fs::path(c.out);
  const auto protocol = ham::make_protocol(cfg);
  const auto methods = ham::run_methods(cfg.eval.strategies);
  const auto rep = ham::leave_one_out_run(protocol, cfg, methods, cfg.eval.seeds, c.jobs);
  write_report(out, "report", rep, c.plots);
  print_summary(rep.summary);
  return kOk;
}

int cmd_ablate(const Common& c) {
  auto cfg = resolve(c);
  const fs::path out = c.out.empty() ? fs::path("ablate") : fs::path(c.out);
  const auto protocol = ham::make_protocol(cfg);
  const auto methods = ham::ablation_methods(cfg.eval.ablation_rows);
  const auto rep = ham::leave_one_out_run(protocol, cfg, methods, cfg.eval.seeds, c.jobs);
  write_report(out, "ablation", rep, c.plots);
  print_summary(rep.summary);
  return kOk;
}

int cmd_sweep(const Common& c) {
  const auto cfg = resolve(c);
  const fs::path out = c.out.empty() ? fs::path("sweep") : fs::path(c.out);
  const auto protocol = ham::make_protocol(cfg);
  const auto methods = ham::run_methods(cfg.eval.strategies);
  const auto t = ham::sweep(protocol, cfg, cfg.eval.sweep.parameter, cfg.eval.sweep.values, methods, c.jobs);

  json rows = json::array();
  for (const auto& r : t.rows) {
    rows.push_back({{"value", r.value},
                    {"held_out", r.row.held_out},
                    {"seed", r.row.seed},
                    {"method", r.row.method},
                    {"accuracy", r.row.accuracy},
                    {"val_accuracy", r.row.val_accuracy}});
  }
  write_json(out / "sweep.json", json{{"config", t.config},
                                      {"seeds", cfg.eval.seeds},
                                      {"parameter", ham::to_string(t.parameter)},
                                      {"values", cfg.eval.sweep.values},
                                      {"rows", rows}});
  ham::write_file(out / "sweep.csv", with_provenance(t.config, cfg.eval.seeds, ham::sweep_csv(t)));
  if (c.plots) ham::write_file(out / "sweep.svg", ham::sweep_svg(t));
  std::cout << ham::sweep_csv(t);
  return kOk;
}

void add_common(CLI::App* app, Common& c, bool experiment) {
  app->add_option("--config", c.config, "Run config JSON (defaults if omitted)")->check(CLI::ExistingFile);
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--seed", c.seed, "Override the seed");
  if (experiment) {
    app->add_option("--jobs", c.jobs, "Protocol cells run in parallel")->check(CLI::PositiveNumber);
    app->add_option("--strategy", c.strategy, "Restrict to one merge strategy");
    app->add_option("--r", c.r, "Trim ratio");
    app->add_option("--lambda", c.lambda, "Sign loss weight");
    app->add_flag("--plots", c.plots, "Also write SVG plots");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-source training, model merging and leave-one-domain-out evaluation"};
  app.require_subcommand(1);

  Common common;
  std::string data_path;
  std::string theta0_path;
  std::vector<std::string> sources;
  std::vector<double> val_accs;

  auto* gen = app.add_subcommand("gen", "Generate the synthetic multi-domain dataset");
  add_common(gen, common, false);

  auto* train = app.add_subcommand("train", "Train one model per source domain");
  add_common(train, common, false);
  train->add_option("--data", data_path, "Dataset CSV (generated from the config if omitted)")
      ->check(CLI::ExistingFile);
  train->add_option("--lambda", common.lambda, "Sign loss weight");

  auto* merge = app.add_subcommand("merge", "Merge source checkpoints");
  merge->add_option("--out", common.out, "Merged checkpoint path")->required();
  merge->add_option("--theta0", theta0_path, "Initial checkpoint")->required()->check(CLI::ExistingFile);
  merge->add_option("--strategy", common.strategy, "rhm, avg, layer_trim or best_model");
  merge->add_option("--r", common.r, "Trim ratio");
  merge->add_option("--val-acc", val_accs, "Validation accuracy per source (best_model)");
  merge->add_option("sources", sources, "Source checkpoints")->required()->check(CLI::ExistingFile);

  auto* run = app.add_subcommand("run", "Leave-one-domain-out evaluation");
  add_common(run, common, true);
  auto* ablate = app.add_subcommand("ablate", "Ablation table");
  add_common(ablate, common, true);
  auto* sweep = app.add_subcommand("sweep", "Sensitivity sweep over one knob");
  add_common(sweep, common, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return cmd_gen(common);
    if (*train) return cmd_train(common, data_path);
    if (*merge) return cmd_merge(common, theta0_path, sources, val_accs);
    if (*run) return cmd_run(common);
    if (*ablate) return cmd_ablate(common);
    if (*sweep) return cmd_sweep(common);
  } catch (const ham::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const ham::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const ham::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kConfig;
  } catch (const ham::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kConfig;
  } catch (const std::domain_error& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kConfig;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  }
  return kOk;
}
