#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ham/config.hpp"
#include "ham/data.hpp"
#include "ham/diagnostics.hpp"
#include "ham/merge.hpp"
#include "ham/model.hpp"
#include "ham/train.hpp"

namespace ham {

/// Which training run a table row is computed from.
enum class TrainVariant {
  none,        // untrained theta0
  configured,  // the train section exactly as given
  base,        // lambda = 0, no enrichment
  opa,         // configured lambda, no enrichment
  full,        // configured lambda and enrichment setting
  pooled,      // one model on the union of all source train splits (ERM)
};

enum class RowOp {
  theta0,        // zero-shot
  final_single,  // the single pooled model
  source_best,   // best final source model by validation accuracy, unmerged
  merge,         // `strategy` over the historical averages
};

struct MethodSpec {
  std::string name;
  TrainVariant variant = TrainVariant::configured;
  RowOp op = RowOp::merge;
  MergeStrategy strategy = MergeStrategy::rhm;
  bool uses_sae = false;
};

// Methods evaluated by a plain protocol run: zero-shot plus each strategy.
std::vector<MethodSpec> run_methods(std::span<const MergeStrategy> strategies);
// Ablation rows, in table order. `rows` filters by name; empty keeps all.
std::vector<MethodSpec> ablation_methods(std::span<const std::string> rows = {});
std::vector<std::string> ablation_row_names();

struct ResultRow {
  int held_out = 0;
  std::uint64_t seed = 0;
  std::string method;
  double accuracy = 0.0;      // on the held-out domain
  double val_accuracy = 0.0;  // on the training-domain validation split
};

struct MethodSummary {
  std::string method;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::size_t n = 0;
  double val_mean = 0.0;
};

struct TrainingDiagnostics {
  int held_out = 0;
  std::uint64_t seed = 0;
  std::string variant;
  std::vector<double> sign_conflict_rate;         // per step, mean over sources
  std::vector<double> sign_loss;                  // per step, mean over sources
  std::vector<std::vector<double>> ce_loss;       // per source, per step
  double admission_rate_clean = 0.0;              // admitted / considered foreign samples
  double admission_rate_corrupted = 0.0;
};

struct CellMergeReport {
  int held_out = 0;
  std::uint64_t seed = 0;
  std::string method;
  MergeReport report;
};

struct ExperimentReport {
  nlohmann::json config;
  std::vector<std::uint64_t> seeds;
  std::vector<int> held_out;
  std::vector<ResultRow> rows;
  std::vector<MethodSummary> summary;
  std::vector<TrainingDiagnostics> diagnostics;
  std::vector<CellMergeReport> merges;
};

/// Frozen pieces shared by every protocol cell.
struct Protocol {
  std::shared_ptr<const Dataset> data;
  CosineClassifier model;
  ParamSet theta0;
};

// Generates the data, prototypes and theta0 from the config.
Protocol make_protocol(const RunConfig& cfg);
Protocol make_protocol(const RunConfig& cfg, std::shared_ptr<const Dataset> data);

struct CellHooks {
  // Every training run of the cell receives these hooks.
  TrainHooks train;
  // Sees every view passed to split_train_val.
  std::function<void(const DatasetView&)> on_split;
};

/// Leave-one-domain-out over `held_out` x `seeds` cells. Cells are
/// independent; `jobs` > 1 runs them on worker threads with identical results.
ExperimentReport leave_one_out_run(const Protocol& protocol, const RunConfig& cfg, std::span<const MethodSpec> methods,
                                   std::span<const std::uint64_t> seeds, std::size_t jobs = 1,
                                   const CellHooks& hooks = {});

// Mean and population std per method, in first-appearance order.
std::vector<MethodSummary> summarize(std::span<const ResultRow> rows);

struct SweepRow {
  double value = 0.0;
  ResultRow row;
};

struct SweepTable {
  SweepParameter parameter = SweepParameter::lambda;
  nlohmann::json config;
  std::vector<SweepRow> rows;  // before aggregation
};

RunConfig with_parameter(const RunConfig& base, SweepParameter p, double value);

// Re-runs the protocol once per value with one knob changed.
SweepTable sweep(const Protocol& protocol, const RunConfig& base, SweepParameter parameter,
                 std::span<const double> values, std::span<const MethodSpec> methods, std::size_t jobs = 1);

nlohmann::json to_json(const ExperimentReport& r);
std::string rows_csv(std::span<const ResultRow> rows);
std::string summary_csv(std::span<const MethodSummary> summary);
// parameter,value,method,mean,std,n
std::string sweep_csv(const SweepTable& t);

// Accuracy-vs-value curves, one per method.
std::string sweep_svg(const SweepTable& t);
// Per-source CE curves of one training run.
std::string loss_curves_svg(const TrainingDiagnostics& d);

}  // namespace ham
