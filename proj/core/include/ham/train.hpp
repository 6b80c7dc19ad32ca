#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ham/data.hpp"
#include "ham/model.hpp"
#include "ham/params.hpp"

namespace ham {

enum class SignMode { layer_dot, elementwise };

std::string to_string(SignMode m);
SignMode sign_mode_from_string(const std::string& s);

struct HarmonyConfig {
  double lambda = 0.5;
  SignMode sign_mode = SignMode::layer_dot;
  double beta = 0.5;
  std::size_t steps = 500;
  std::size_t batch_size = 24;
  double lr = 1e-3;
  double weight_decay = 0.1;
  // Adaptive source enrichment on/off.
  bool sae = true;
  // Keep a copy of every source's parameters each `snapshot_every` steps (and
  // at the last step) for best-checkpoint selection. 0 disables.
  std::size_t snapshot_every = 50;
  // Run the per-source phase of each step on separate threads.
  bool parallel_sources = false;
  std::uint64_t seed = 41;

  void validate() const;
  bool operator==(const HarmonyConfig&) const = default;
};

struct AdamState {
  ParamSet m;
  ParamSet v;
  std::size_t step = 0;

  static AdamState zeros_like(const ParamSet& params);
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

struct SourceTrainer {
  std::size_t source_id = 0;
  ParamSet params;
  AdamState opt;
  // Running weighted average of the trajectory and its total weight.
  ParamSet ma_params;
  double weight_sum = 0.0;
};

/// Unnormalized Beta(beta, beta) density at x = (t + 0.5) / (total_steps + 1).
double beta_weight(std::size_t t, std::size_t total_steps, double beta);

// Mean confidence of `params` over the native batch.
double adaptive_threshold(const CosineClassifier& model, const ParamSet& params, const Batch& batch);

struct Enrichment {
  Batch batch;               // native samples first, then admitted foreign ones
  std::size_t admitted = 0;  // foreign samples added
  std::size_t foreign = 0;   // foreign samples considered
};

/// Appends every foreign sample whose confidence under `params` is strictly
/// above tau, preserving (source, within-batch) order.
Enrichment enrich_batch(const CosineClassifier& model, const ParamSet& params, const Batch& native,
                        std::span<const Batch* const> foreign, double tau);

/// Hinge penalty against the detached mean update vector. The gradient is
/// w.r.t. theta_i (v_i = theta_i - theta0, so d v_i / d theta_i = I).
LossGrad sign_loss_and_grad(const ParamSet& v_i, const ParamSet& v_bar, SignMode mode);

// Decoupled weight decay: theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta).
void adamw_step(AdamState& state, ParamSet& params, const ParamSet& grads, double lr, double weight_decay);

// W' = W + gamma; avg' = (W / W') avg + (gamma / W') theta_new. No-op while W' == 0.
void ma_update(SourceTrainer& trainer, double gamma, const ParamSet& theta_new);

std::vector<Labeled> to_labeled(const Batch& batch);

/// CE on `batch` plus lambda times the sign loss of (params - theta0) against v_bar.
LossGrad total_loss_and_grad(const CosineClassifier& model, const ParamSet& params, std::span<const Labeled> batch,
                             const ParamSet& theta0, const ParamSet& v_bar, double lambda, SignMode mode);

struct StepLog {
  std::size_t step = 0;
  std::size_t source = 0;
  double ce_loss = 0.0;
  double sign_loss = 0.0;
  double tau = 0.0;
  std::size_t admitted = 0;
  std::size_t admitted_corrupted = 0;
  std::size_t foreign = 0;
  std::size_t foreign_corrupted = 0;
  double sign_conflict_rate = 0.0;

  bool operator==(const StepLog&) const = default;
};

// One JSON object per line, fields in a fixed order.
std::string step_log_jsonl(std::span<const StepLog> log);

struct Snapshot {
  std::size_t step = 0;
  ParamSet params;
};

struct TrainHooks {
  // Called after v_bar is frozen, before any source updates.
  std::function<void(std::size_t step, std::span<const SourceTrainer> trainers, const ParamSet& v_bar)> on_step_start;
  // Called with every enriched batch that reaches the loss.
  std::function<void(std::size_t step, std::size_t source, const Batch& batch)> on_batch;
};

struct TrainResult {
  std::vector<SourceTrainer> trainers;
  std::vector<StepLog> log;
  std::vector<std::vector<Snapshot>> snapshots;  // per source
};

/// Non-finite loss or parameters. `diagnostic` is a JSON document describing
/// the offending step.
class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(const std::string& what, std::string diagnostic)
      : NumericalError(what), diagnostic_(std::move(diagnostic)) {}
  const std::string& diagnostic() const { return diagnostic_; }

 private:
  std::string diagnostic_;
};

/// Step-synchronous multi-source training. Every source starts from theta0;
/// at each step the mean update vector is frozen, one batch per source is
/// drawn, and each source runs enrichment -> CE + lambda * sign -> AdamW ->
/// moving-average update.
TrainResult train_all(const CosineClassifier& model, const ParamSet& theta0, std::span<const DatasetView> sources,
                      const HarmonyConfig& cfg, const TrainHooks& hooks = {});

}  // namespace ham
