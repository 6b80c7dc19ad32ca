#include "ham/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <random>
#include <thread>

#include "ham/checkpoint.hpp"
#include "svg.hpp"

namespace ham {

std::vector<MethodSpec> run_methods(std::span<const MergeStrategy> strategies) {
  std::vector<MethodSpec> out{{"zs", TrainVariant::none, RowOp::theta0}};
  for (auto s : strategies) out.push_back({to_string(s), TrainVariant::configured, RowOp::merge, s, false});
  return out;
}

namespace {

const std::vector<MethodSpec>& all_ablation_rows() {
  static const std::vector<MethodSpec> rows{
      {"zs", TrainVariant::none, RowOp::theta0},
      {"erm", TrainVariant::pooled, RowOp::final_single},
      {"source_best", TrainVariant::base, RowOp::source_best},
      {"avg", TrainVariant::base, RowOp::merge, MergeStrategy::avg},
      {"avg_opa", TrainVariant::opa, RowOp::merge, MergeStrategy::avg},
      {"layer_trim_opa", TrainVariant::opa, RowOp::merge, MergeStrategy::layer_trim},
      {"rhm", TrainVariant::base, RowOp::merge, MergeStrategy::rhm},
      {"rhm_opa", TrainVariant::opa, RowOp::merge, MergeStrategy::rhm},
      {"ham", TrainVariant::full, RowOp::merge, MergeStrategy::rhm, true},
      {"ham_best_model", TrainVariant::full, RowOp::merge, MergeStrategy::best_model, true},
  };
  return rows;
}

std::string variant_name(TrainVariant v) {
  switch (v) {
    case TrainVariant::none:
      return "none";
    case TrainVariant::configured:
      return "configured";
    case TrainVariant::base:
      return "base";
    case TrainVariant::opa:
      return "opa";
    case TrainVariant::full:
      return "full";
    case TrainVariant::pooled:
      return "pooled";
  }
  return "?";
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{seed, tag};
  return std::mt19937_64(seq)();
}

struct CellResult {
  std::vector<ResultRow> rows;
  std::vector<TrainingDiagnostics> diagnostics;
  std::vector<CellMergeReport> merges;
};

TrainingDiagnostics diagnose(const TrainResult& res, std::size_t n_src, std::size_t steps) {
  TrainingDiagnostics d;
  d.sign_conflict_rate.assign(steps, 0.0);
  d.sign_loss.assign(steps, 0.0);
  d.ce_loss.assign(n_src, std::vector<double>(steps, 0.0));
  std::size_t clean_seen = 0, clean_in = 0, bad_seen = 0, bad_in = 0;
  for (const auto& r : res.log) {
    const auto t = r.step - 1;
    d.sign_conflict_rate[t] += r.sign_conflict_rate / static_cast<double>(n_src);
    d.sign_loss[t] += r.sign_loss / static_cast<double>(n_src);
    d.ce_loss[r.source][t] = r.ce_loss;
    clean_seen += r.foreign - r.foreign_corrupted;
    clean_in += r.admitted - r.admitted_corrupted;
    bad_seen += r.foreign_corrupted;
    bad_in += r.admitted_corrupted;
  }
  d.admission_rate_clean = clean_seen ? static_cast<double>(clean_in) / static_cast<double>(clean_seen) : 0.0;
  d.admission_rate_corrupted = bad_seen ? static_cast<double>(bad_in) / static_cast<double>(bad_seen) : 0.0;
  return d;
}

CellResult run_cell(const Protocol& p, const RunConfig& cfg, std::span<const MethodSpec> methods, int held_out,
                    std::uint64_t seed, const CellHooks& hooks) {
  const auto all = DatasetView::all(p.data);
  const auto test = all.only_domain(held_out);
  const auto pool = all.without_domain(held_out);
  if (test.empty()) throw ConfigError("eval.held_out", "domain " + std::to_string(held_out) + " has no samples");
  if (hooks.on_split) hooks.on_split(pool);
  const auto split = split_train_val(pool, seed);

  std::vector<int> domains;
  for (auto i : pool.indices()) domains.push_back(p.data->samples[i].domain_id);
  std::sort(domains.begin(), domains.end());
  domains.erase(std::unique(domains.begin(), domains.end()), domains.end());
  if (domains.size() < 2) throw ConfigError("data.domains", "leave-one-out needs at least 3 domains");
  std::vector<DatasetView> sources;
  for (int d : domains) sources.push_back(split.train.only_domain(d));

  CellResult out;
  std::map<TrainVariant, TrainResult> runs;
  auto run_for = [&](TrainVariant v) -> const TrainResult& {
    if (auto it = runs.find(v); it != runs.end()) return it->second;
    HarmonyConfig tc = cfg.train;
    tc.seed = seed;
    std::vector<DatasetView> srcs = sources;
    switch (v) {
      case TrainVariant::base:
        tc.lambda = 0.0;
        tc.sae = false;
        break;
      case TrainVariant::opa:
        tc.sae = false;
        break;
      case TrainVariant::pooled:
        tc.lambda = 0.0;
        tc.sae = false;
        srcs = {split.train};
        break;
      default:
        break;
    }
    auto res = train_all(p.model, p.theta0, srcs, tc, hooks.train);
    auto d = diagnose(res, srcs.size(), tc.steps);
    d.held_out = held_out;
    d.seed = seed;
    d.variant = variant_name(v);
    out.diagnostics.push_back(std::move(d));
    return runs.emplace(v, std::move(res)).first->second;
  };

  auto val_acc = [&](const ParamSet& params) { return accuracy(p.model, params, split.val); };

  for (const auto& m : methods) {
    ParamSet params;
    switch (m.op) {
      case RowOp::theta0:
        params = p.theta0;
        break;
      case RowOp::final_single:
        params = run_for(m.variant).trainers.at(0).params;
        break;
      case RowOp::source_best: {
        const auto& res = run_for(m.variant);
        std::vector<ParamSet> cands;
        std::vector<double> accs;
        for (const auto& tr : res.trainers) {
          cands.push_back(tr.params);
          accs.push_back(val_acc(tr.params));
        }
        params = cands[best_model_select(cands, accs)];
        break;
      }
      case RowOp::merge: {
        const auto& res = run_for(m.variant);
        MergeInput in;
        in.theta0 = p.theta0;
        in.trim_ratio = cfg.merge.r;
        in.strategy = m.strategy;
        if (m.strategy == MergeStrategy::best_model) {
          // Best checkpoint along each trajectory instead of the historical average.
          in.strategy = MergeStrategy::rhm;
          for (std::size_t i = 0; i < res.trainers.size(); ++i) {
            std::vector<ParamSet> cands;
            std::vector<double> accs;
            for (const auto& s : res.snapshots[i]) {
              cands.push_back(s.params);
              accs.push_back(val_acc(s.params));
            }
            if (cands.empty()) {
              cands.push_back(res.trainers[i].params);
              accs.push_back(0.0);
            }
            const auto k = best_model_select(cands, accs);
            in.sources.push_back(cands[k]);
          }
        } else {
          for (const auto& tr : res.trainers) in.sources.push_back(tr.ma_params);
        }
        auto [merged, rep] = merge(in);
        rep.strategy = m.strategy;
        out.merges.push_back({held_out, seed, m.name, std::move(rep)});
        params = std::move(merged);
        break;
      }
    }
    out.rows.push_back({held_out, seed, m.name, accuracy(p.model, params, test), val_acc(params)});
  }
  return out;
}

template <typename F>
void parallel_for(std::size_t n, std::size_t jobs, F f) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          f(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

std::vector<std::string> ablation_row_names() {
  std::vector<std::string> out;
  for (const auto& r : all_ablation_rows()) out.push_back(r.name);
  return out;
}

std::vector<MethodSpec> ablation_methods(std::span<const std::string> rows) {
  std::vector<MethodSpec> out;
  for (const auto& r : all_ablation_rows()) {
    if (rows.empty() || std::find(rows.begin(), rows.end(), r.name) != rows.end()) out.push_back(r);
  }
  return out;
}

Protocol make_protocol(const RunConfig& cfg) { return make_protocol(cfg, std::make_shared<Dataset>(generate(cfg.data))); }

Protocol make_protocol(const RunConfig& cfg, std::shared_ptr<const Dataset> data) {
  cfg.validate();
  Protocol p;
  p.data = std::move(data);
  p.model.config = cfg.encoder_config();
  p.model.config.input_dim = p.data->input_dim;
  p.model.prototypes = init_prototypes(p.data->num_classes, p.model.config.embed_dim, derive_seed(cfg.model.seed, 1));
  p.theta0 = init_encoder(p.model.config, derive_seed(cfg.model.seed, 2));
  return p;
}

std::vector<MethodSummary> summarize(std::span<const ResultRow> rows) {
  std::vector<MethodSummary> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& s) { return s.method == r.method; });
    if (it == out.end()) {
      out.push_back({r.method});
      it = out.end() - 1;
    }
    it->mean += r.accuracy;
    it->val_mean += r.val_accuracy;
    ++it->n;
  }
  for (auto& s : out) {
    s.mean /= static_cast<double>(s.n);
    s.val_mean /= static_cast<double>(s.n);
    double ss = 0.0;
    for (const auto& r : rows) {
      if (r.method == s.method) ss += (r.accuracy - s.mean) * (r.accuracy - s.mean);
    }
    s.std = std::sqrt(ss / static_cast<double>(s.n));
  }
  return out;
}

ExperimentReport leave_one_out_run(const Protocol& protocol, const RunConfig& cfg, std::span<const MethodSpec> methods,
                                   std::span<const std::uint64_t> seeds, std::size_t jobs, const CellHooks& hooks) {
  if (seeds.empty()) throw ConfigError("eval.seeds", "at least one seed is required");
  ExperimentReport rep;
  rep.config = to_json(cfg);
  rep.seeds.assign(seeds.begin(), seeds.end());
  rep.held_out = cfg.eval.held_out.empty() ? protocol.data->domain_ids() : cfg.eval.held_out;
  if (rep.held_out.empty()) throw ConfigError("eval.held_out", "no domain to hold out");

  const auto n_cells = rep.held_out.size() * seeds.size();
  std::vector<CellResult> cells(n_cells);
  parallel_for(n_cells, jobs, [&](std::size_t c) {
    cells[c] = run_cell(protocol, cfg, methods, rep.held_out[c / seeds.size()], seeds[c % seeds.size()], hooks);
  });
  for (auto& c : cells) {
    rep.rows.insert(rep.rows.end(), c.rows.begin(), c.rows.end());
    rep.diagnostics.insert(rep.diagnostics.end(), c.diagnostics.begin(), c.diagnostics.end());
    rep.merges.insert(rep.merges.end(), c.merges.begin(), c.merges.end());
  }
  rep.summary = summarize(rep.rows);
  return rep;
}

RunConfig with_parameter(const RunConfig& base, SweepParameter p, double value) {
  RunConfig c = base;
  switch (p) {
    case SweepParameter::lambda:
      c.train.lambda = value;
      break;
    case SweepParameter::r:
      c.merge.r = value;
      break;
    case SweepParameter::beta:
      c.train.beta = value;
      break;
    case SweepParameter::logit_scale:
      c.model.encoder.logit_scale = value;
      break;
  }
  c.validate();
  return c;
}

SweepTable sweep(const Protocol& protocol, const RunConfig& base, SweepParameter parameter,
                 std::span<const double> values, std::span<const MethodSpec> methods, std::size_t jobs) {
  if (values.empty()) throw ConfigError("eval.sweep.values", "no values to sweep");
  SweepTable t;
  t.parameter = parameter;
  t.config = to_json(base);
  for (double v : values) {
    const auto cfg = with_parameter(base, parameter, v);
    Protocol p = protocol;
    p.model.config.logit_scale = cfg.model.encoder.logit_scale;
    const auto rep = leave_one_out_run(p, cfg, methods, cfg.eval.seeds, jobs);
    for (const auto& r : rep.rows) t.rows.push_back({v, r});
  }
  return t;
}

nlohmann::json to_json(const ExperimentReport& r) {
  nlohmann::json j;
  j["config"] = r.config;
  j["seeds"] = r.seeds;
  j["held_out"] = r.held_out;
  auto& summary = j["summary"] = nlohmann::json::array();
  for (const auto& s : r.summary) {
    summary.push_back({{"method", s.method}, {"mean", s.mean}, {"std", s.std}, {"n", s.n}, {"val_mean", s.val_mean}});
  }
  auto& rows = j["rows"] = nlohmann::json::array();
  for (const auto& x : r.rows) {
    rows.push_back({{"held_out", x.held_out},
                    {"seed", x.seed},
                    {"method", x.method},
                    {"accuracy", x.accuracy},
                    {"val_accuracy", x.val_accuracy}});
  }
  auto& merges = j["merge_reports"] = nlohmann::json::array();
  for (const auto& m : r.merges) {
    merges.push_back({{"held_out", m.held_out}, {"seed", m.seed}, {"method", m.method}, {"report", m.report}});
  }
  auto& diags = j["diagnostics"] = nlohmann::json::array();
  for (const auto& d : r.diagnostics) {
    diags.push_back({{"held_out", d.held_out},
                     {"seed", d.seed},
                     {"variant", d.variant},
                     {"admission_rate_clean", d.admission_rate_clean},
                     {"admission_rate_corrupted", d.admission_rate_corrupted},
                     {"sign_conflict_rate", d.sign_conflict_rate},
                     {"sign_loss", d.sign_loss},
                     {"ce_loss", d.ce_loss}});
  }
  return j;
}

std::string rows_csv(std::span<const ResultRow> rows) {
  std::string out = "held_out,seed,method,accuracy,val_accuracy\n";
  for (const auto& r : rows) {
    out += std::to_string(r.held_out) + "," + std::to_string(r.seed) + "," + r.method + "," + format_double(r.accuracy) +
           "," + format_double(r.val_accuracy) + "\n";
  }
  return out;
}

std::string summary_csv(std::span<const MethodSummary> summary) {
  std::string out = "method,mean,std,n,val_mean\n";
  for (const auto& s : summary) {
    out += s.method + "," + format_double(s.mean) + "," + format_double(s.std) + "," + std::to_string(s.n) + "," +
           format_double(s.val_mean) + "\n";
  }
  return out;
}

namespace {

// (value, summary) pairs in sweep order.
std::vector<std::pair<double, MethodSummary>> aggregate(const SweepTable& t) {
  std::vector<double> values;
  for (const auto& r : t.rows) {
    if (std::find(values.begin(), values.end(), r.value) == values.end()) values.push_back(r.value);
  }
  std::vector<std::pair<double, MethodSummary>> out;
  for (double v : values) {
    std::vector<ResultRow> rows;
    for (const auto& r : t.rows) {
      if (r.value == v) rows.push_back(r.row);
    }
    for (auto& s : summarize(rows)) out.emplace_back(v, std::move(s));
  }
  return out;
}

}  // namespace

std::string sweep_csv(const SweepTable& t) {
  std::string out = "parameter,value,method,mean,std,n\n";
  for (const auto& [v, s] : aggregate(t)) {
    out += to_string(t.parameter) + "," + format_double(v) + "," + s.method + "," + format_double(s.mean) + "," +
           format_double(s.std) + "," + std::to_string(s.n) + "\n";
  }
  return out;
}

std::string sweep_svg(const SweepTable& t) {
  std::vector<detail::Series> series;
  for (const auto& [v, s] : aggregate(t)) {
    auto it = std::find_if(series.begin(), series.end(), [&](const auto& x) { return x.name == s.method; });
    if (it == series.end()) {
      series.push_back({s.method, {}, {}});
      it = series.end() - 1;
    }
    it->x.push_back(v);
    it->y.push_back(s.mean);
  }
  return detail::line_chart("held-out accuracy vs " + to_string(t.parameter), to_string(t.parameter), "accuracy",
                            series);
}

std::string loss_curves_svg(const TrainingDiagnostics& d) {
  std::vector<detail::Series> series;
  for (std::size_t i = 0; i < d.ce_loss.size(); ++i) {
    detail::Series s{"source " + std::to_string(i), {}, {}};
    for (std::size_t t = 0; t < d.ce_loss[i].size(); ++t) {
      s.x.push_back(static_cast<double>(t + 1));
      s.y.push_back(d.ce_loss[i][t]);
    }
    series.push_back(std::move(s));
  }
  return detail::line_chart("per-source CE loss (held out " + std::to_string(d.held_out) + ", seed " +
                                std::to_string(d.seed) + ", " + d.variant + ")",
                            "step", "cross-entropy", series);
}

}  // namespace ham
