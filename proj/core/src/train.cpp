#include "ham/train.hpp"

#include <cmath>
#include <future>
#include <random>

#include <nlohmann/json.hpp>

#include "ham/checkpoint.hpp"
#include "ham/diagnostics.hpp"

namespace ham {

std::string to_string(SignMode m) { return m == SignMode::layer_dot ? "layer_dot" : "elementwise"; }

SignMode sign_mode_from_string(const std::string& s) {
  if (s == "layer_dot") return SignMode::layer_dot;
  if (s == "elementwise") return SignMode::elementwise;
  throw ConfigError("train.sign_mode", "expected \"layer_dot\" or \"elementwise\", got \"" + s + "\"");
}

void HarmonyConfig::validate() const {
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(lambda)) throw ConfigError("train.lambda", "must lie in [0, 1]");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ConfigError("train.beta", "must be > 0");
  if (batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr", "must be > 0");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("train.weight_decay", "must be >= 0");
}

AdamState AdamState::zeros_like(const ParamSet& params) { return {params.zeros_like(), params.zeros_like(), 0}; }

double beta_weight(std::size_t t, std::size_t total_steps, double beta) {
  const double x = (static_cast<double>(t) + 0.5) / (static_cast<double>(total_steps) + 1.0);
  return std::pow(x, beta - 1.0) * std::pow(1.0 - x, beta - 1.0);
}

double adaptive_threshold(const CosineClassifier& model, const ParamSet& params, const Batch& batch) {
  if (batch.empty()) throw DomainError("adaptive_threshold: empty batch");
  double sum = 0.0;
  for (const auto* s : batch) sum += confidence(model, params, s->x);
  return sum / static_cast<double>(batch.size());
}

Enrichment enrich_batch(const CosineClassifier& model, const ParamSet& params, const Batch& native,
                        std::span<const Batch* const> foreign, double tau) {
  Enrichment out;
  out.batch = native;
  for (const auto* b : foreign) {
    for (const auto* s : *b) {
      ++out.foreign;
      if (confidence(model, params, s->x) > tau) {
        out.batch.push_back(s);
        ++out.admitted;
      }
    }
  }
  return out;
}

LossGrad sign_loss_and_grad(const ParamSet& v_i, const ParamSet& v_bar, SignMode mode) {
  require_congruent(v_i, v_bar, "sign_loss_and_grad");
  LossGrad out{0.0, v_i.zeros_like()};
  const double n_layers = static_cast<double>(v_i.num_layers());
  for (std::size_t l = 0; l < v_i.num_layers(); ++l) {
    const auto& a = v_i[l].tensor.values;
    const auto& b = v_bar[l].tensor.values;
    auto& g = out.grads[l].tensor.values;
    if (mode == SignMode::layer_dot) {
      double d = 0.0;
      for (std::size_t j = 0; j < a.size(); ++j) d += a[j] * b[j];
      if (d < 0.0) {
        out.loss += -d / n_layers;
        for (std::size_t j = 0; j < a.size(); ++j) g[j] = -b[j] / n_layers;
      }
    } else {
      const double scale = 1.0 / (n_layers * static_cast<double>(a.size()));
      for (std::size_t j = 0; j < a.size(); ++j) {
        const double p = a[j] * b[j];
        if (p < 0.0) {
          out.loss += -p * scale;
          g[j] = -b[j] * scale;
        }
      }
    }
  }
  return out;
}

void adamw_step(AdamState& state, ParamSet& params, const ParamSet& grads, double lr, double weight_decay) {
  require_congruent(params, grads, "adamw_step");
  if (state.m.empty()) state = AdamState::zeros_like(params);
  require_congruent(params, state.m, "adamw_step");
  ++state.step;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    auto& p = params[l].tensor.values;
    auto& m = state.m[l].tensor.values;
    auto& v = state.v[l].tensor.values;
    const auto& g = grads[l].tensor.values;
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = kAdamBeta1 * m[j] + (1.0 - kAdamBeta1) * g[j];
      v[j] = kAdamBeta2 * v[j] + (1.0 - kAdamBeta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      p[j] -= lr * (m_hat / (std::sqrt(v_hat) + kAdamEps) + weight_decay * p[j]);
    }
  }
}

void ma_update(SourceTrainer& trainer, double gamma, const ParamSet& theta_new) {
  if (gamma < 0.0) throw DomainError("ma_update: negative weight");
  require_congruent(trainer.ma_params, theta_new, "ma_update");
  const double total = trainer.weight_sum + gamma;
  if (total == 0.0) return;
  const double keep = trainer.weight_sum / total;
  const double take = gamma / total;
  for (std::size_t l = 0; l < theta_new.num_layers(); ++l) {
    auto& avg = trainer.ma_params[l].tensor.values;
    const auto& x = theta_new[l].tensor.values;
    for (std::size_t j = 0; j < avg.size(); ++j) avg[j] = keep * avg[j] + take * x[j];
  }
  trainer.weight_sum = total;
}

std::vector<Labeled> to_labeled(const Batch& batch) {
  std::vector<Labeled> out;
  out.reserve(batch.size());
  for (const auto* s : batch) out.push_back({s->x, s->y});
  return out;
}

LossGrad total_loss_and_grad(const CosineClassifier& model, const ParamSet& params, std::span<const Labeled> batch,
                             const ParamSet& theta0, const ParamSet& v_bar, double lambda, SignMode mode) {
  auto out = ce_loss_and_grad(model, params, batch);
  if (lambda == 0.0) return out;
  const auto sign = sign_loss_and_grad(update_vector(params, theta0), v_bar, mode);
  out.loss += lambda * sign.loss;
  for (std::size_t l = 0; l < out.grads.num_layers(); ++l) {
    auto& g = out.grads[l].tensor.values;
    const auto& s = sign.grads[l].tensor.values;
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += lambda * s[j];
  }
  return out;
}

std::string step_log_jsonl(std::span<const StepLog> log) {
  std::string out;
  for (const auto& r : log) {
    out += "{\"step\": " + std::to_string(r.step) + ", \"source\": " + std::to_string(r.source) +
           ", \"ce_loss\": " + format_double(r.ce_loss) + ", \"sign_loss\": " + format_double(r.sign_loss) +
           ", \"tau\": " + format_double(r.tau) + ", \"admitted\": " + std::to_string(r.admitted) +
           ", \"admitted_corrupted\": " + std::to_string(r.admitted_corrupted) +
           ", \"foreign\": " + std::to_string(r.foreign) +
           ", \"foreign_corrupted\": " + std::to_string(r.foreign_corrupted) +
           ", \"sign_conflict_rate\": " + format_double(r.sign_conflict_rate) + "}\n";
  }
  return out;
}

namespace {

std::size_t count_corrupted(const Batch& b, std::size_t from) {
  std::size_t n = 0;
  for (std::size_t k = from; k < b.size(); ++k) n += b[k]->corrupted ? 1 : 0;
  return n;
}

std::string divergence_report(std::size_t step, std::size_t source, double ce, double sign, double tau) {
  nlohmann::json j;
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(std::to_string(v)); };
  j["step"] = step;
  j["source"] = source;
  j["ce_loss"] = num(ce);
  j["sign_loss"] = num(sign);
  j["tau"] = num(tau);
  return j.dump(2);
}

}  // namespace

TrainResult train_all(const CosineClassifier& model, const ParamSet& theta0, std::span<const DatasetView> sources,
                      const HarmonyConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  if (sources.empty()) throw ConfigError("train.sources", "at least one source is required");
  const auto n_src = sources.size();

  TrainResult res;
  std::vector<BatchStream> streams;
  for (std::size_t i = 0; i < n_src; ++i) {
    if (sources[i].empty()) throw ConfigError("train.sources", "source " + std::to_string(i) + " has no samples");
    std::seed_seq seq{cfg.seed, std::uint64_t{0x50ce}, static_cast<std::uint64_t>(i)};
    streams.emplace_back(sources[i], cfg.batch_size, std::mt19937_64(seq)());
    SourceTrainer tr;
    tr.source_id = i;
    tr.params = theta0;
    tr.opt = AdamState::zeros_like(theta0);
    tr.ma_params = theta0;
    tr.weight_sum = beta_weight(0, cfg.steps, cfg.beta);
    res.trainers.push_back(std::move(tr));
  }
  res.snapshots.resize(n_src);
  res.log.resize(cfg.steps * n_src);

  const double inv_n = 1.0 / static_cast<double>(n_src);
  for (std::size_t t = 1; t <= cfg.steps; ++t) {
    // Phase (a): freeze the mean update vector and draw every source's batch.
    std::vector<ParamSet> updates;
    updates.reserve(n_src);
    for (const auto& tr : res.trainers) updates.push_back(update_vector(tr.params, theta0));
    ParamSet v_bar = updates[0];
    for (std::size_t i = 1; i < n_src; ++i) v_bar = add(v_bar, updates[i]);
    v_bar = scale(v_bar, inv_n);
    if (hooks.on_step_start) hooks.on_step_start(t, res.trainers, v_bar);

    std::vector<const Batch*> batches(n_src);
    for (std::size_t i = 0; i < n_src; ++i) batches[i] = &streams[i].next();
    const double gamma = beta_weight(t, cfg.steps, cfg.beta);

    // Phase (b): each source touches only its own trainer and log slot.
    auto run_source = [&](std::size_t i) {
      auto& tr = res.trainers[i];
      auto& rec = res.log[(t - 1) * n_src + i];
      rec.step = t;
      rec.source = i;
      rec.sign_conflict_rate = sign_conflict_rate(updates[i], v_bar);
      rec.tau = adaptive_threshold(model, tr.params, *batches[i]);

      std::vector<const Batch*> foreign;
      if (cfg.sae) {
        for (std::size_t j = 0; j < n_src; ++j) {
          if (j != i) foreign.push_back(batches[j]);
        }
      }
      auto enriched = enrich_batch(model, tr.params, *batches[i], foreign, rec.tau);
      rec.admitted = enriched.admitted;
      rec.foreign = enriched.foreign;
      rec.admitted_corrupted = count_corrupted(enriched.batch, batches[i]->size());
      for (const auto* b : foreign) rec.foreign_corrupted += count_corrupted(*b, 0);
      if (hooks.on_batch) hooks.on_batch(t, i, enriched.batch);

      const auto labeled = to_labeled(enriched.batch);
      auto ce = ce_loss_and_grad(model, tr.params, labeled);
      const auto sign = sign_loss_and_grad(updates[i], v_bar, cfg.sign_mode);
      rec.ce_loss = ce.loss;
      rec.sign_loss = sign.loss;
      if (!std::isfinite(ce.loss) || !std::isfinite(sign.loss)) {
        throw TrainingDiverged("non-finite loss at step " + std::to_string(t) + ", source " + std::to_string(i),
                               divergence_report(t, i, ce.loss, sign.loss, rec.tau));
      }
      if (cfg.lambda != 0.0) {
        for (std::size_t l = 0; l < ce.grads.num_layers(); ++l) {
          auto& g = ce.grads[l].tensor.values;
          const auto& s = sign.grads[l].tensor.values;
          for (std::size_t j = 0; j < g.size(); ++j) g[j] += cfg.lambda * s[j];
        }
      }
      adamw_step(tr.opt, tr.params, ce.grads, cfg.lr, cfg.weight_decay);
      if (!all_finite(tr.params)) {
        throw TrainingDiverged("non-finite parameters at step " + std::to_string(t) + ", source " + std::to_string(i),
                               divergence_report(t, i, ce.loss, sign.loss, rec.tau));
      }
      ma_update(tr, gamma, tr.params);
      if (cfg.snapshot_every && (t % cfg.snapshot_every == 0 || t == cfg.steps)) {
        res.snapshots[i].push_back({t, tr.params});
      }
    };

    if (cfg.parallel_sources && n_src > 1) {
      std::vector<std::future<void>> jobs;
      for (std::size_t i = 0; i < n_src; ++i) jobs.push_back(std::async(std::launch::async, run_source, i));
      for (auto& j : jobs) j.get();
    } else {
      for (std::size_t i = 0; i < n_src; ++i) run_source(i);
    }
  }
  return res;
}

}  // namespace ham
