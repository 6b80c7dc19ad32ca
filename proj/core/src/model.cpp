#include "ham/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace ham {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

struct DenseRef {
  const TensorF* w;
  const TensorF* b;
};

// Hidden layers followed by the output head, in evaluation order.
std::vector<DenseRef> dense_layers(const ParamSet& params) {
  if (params.num_layers() < 2 || params.num_layers() % 2 != 0) {
    throw StructuralError("encoder parameters must come in (W, b) pairs");
  }
  std::vector<DenseRef> out;
  for (std::size_t l = 0; l < params.num_layers(); l += 2) {
    out.push_back({&params[l].tensor, &params[l + 1].tensor});
  }
  return out;
}

void dense(const TensorF& w, const TensorF& b, std::span<const double> in, std::vector<double>& out) {
  const auto rows = w.shape[0];
  const auto cols = w.shape[1];
  if (cols != in.size() || b.size() != rows) throw StructuralError("encoder layer shape mismatch");
  out.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    out[r] = b.values[r] + dot(std::span<const double>(w.values).subspan(r * cols, cols), in);
  }
}

}  // namespace

Prototypes::Prototypes(std::size_t num_classes, std::size_t dim, std::vector<double> rows)
    : k_(num_classes), d_(dim), rows_(std::move(rows)) {
  if (k_ < 2 || d_ < 2) throw DomainError("prototypes need K >= 2 and D >= 2");
  if (rows_.size() != k_ * d_) throw StructuralError("prototype matrix size mismatch");
  for (std::size_t k = 0; k < k_; ++k) {
    auto r = row(k);
    if (std::fabs(std::sqrt(dot(r, r)) - 1.0) > 1e-12) {
      throw DomainError("prototype row " + std::to_string(k) + " is not unit norm");
    }
  }
}

double Prototypes::min_pairwise_angle() const {
  double best = M_PI;
  for (std::size_t a = 0; a < k_; ++a) {
    for (std::size_t b = a + 1; b < k_; ++b) {
      best = std::min(best, std::acos(std::clamp(dot(row(a), row(b)), -1.0, 1.0)));
    }
  }
  return best;
}

ParamSet Prototypes::to_params() const {
  ParamSet ps;
  ps.add("prototypes", TensorF({k_, d_}, rows_));
  return ps;
}

Prototypes Prototypes::from_params(const ParamSet& ps) {
  const auto& t = ps.at("prototypes");
  if (t.shape.size() != 2) throw StructuralError("prototypes layer must be 2-D");
  return Prototypes(t.shape[0], t.shape[1], t.values);
}

Prototypes init_prototypes(std::size_t num_classes, std::size_t dim, std::uint64_t seed) {
  if (num_classes < 2 || dim < 2) throw DomainError("prototypes need K >= 2 and D >= 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> rows(num_classes * dim);
  for (std::size_t k = 0; k < num_classes; ++k) {
    auto* r = rows.data() + k * dim;
    double n2 = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      r[j] = normal(rng);
      n2 += r[j] * r[j];
    }
    const double n = std::sqrt(n2);
    for (std::size_t j = 0; j < dim; ++j) r[j] /= n;
  }
  return Prototypes(num_classes, dim, std::move(rows));
}

void EncoderConfig::validate() const {
  if (input_dim < 1) throw ConfigError("model.input_dim", "must be >= 1");
  if (embed_dim < 1) throw ConfigError("model.embed_dim", "must be >= 1");
  for (auto h : hidden_dims) {
    if (h < 1) throw ConfigError("model.hidden_dims", "every hidden width must be >= 1");
  }
  if (activation != "tanh") throw ConfigError("model.activation", "only \"tanh\" is supported");
  if (!(logit_scale > 0.0) || !std::isfinite(logit_scale)) {
    throw ConfigError("model.logit_scale", "must be a positive finite number");
  }
}

ParamSet init_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ParamSet ps;
  auto add_dense = [&](const std::string& suffix, std::size_t out, std::size_t in) {
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
    std::vector<double> w(out * in);
    for (auto& v : w) v = normal(rng);
    ps.add("W" + suffix, TensorF({out, in}, std::move(w)));
    ps.add("b" + suffix, TensorF::zeros({out}));
  };
  std::size_t in = cfg.input_dim;
  for (std::size_t i = 0; i < cfg.hidden_dims.size(); ++i) {
    add_dense(std::to_string(i + 1), cfg.hidden_dims[i], in);
    in = cfg.hidden_dims[i];
  }
  add_dense("_out", cfg.embed_dim, in);
  return ps;
}

ForwardCache forward(const CosineClassifier& model, const ParamSet& params, std::span<const double> x) {
  const auto layers = dense_layers(params);
  const auto& proto = model.prototypes;
  ForwardCache c;
  c.activations.emplace_back(x.begin(), x.end());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    std::vector<double> z;
    dense(*layers[l].w, *layers[l].b, c.activations.back(), z);
    if (l + 1 < layers.size()) {
      std::vector<double> a(z.size());
      std::transform(z.begin(), z.end(), a.begin(), [](double v) { return std::tanh(v); });
      c.pre.push_back(std::move(z));
      c.activations.push_back(std::move(a));
    } else {
      c.embedding = std::move(z);
    }
  }
  if (c.embedding.size() != proto.dim()) throw StructuralError("embedding dim does not match prototypes");

  const double sq = dot(c.embedding, c.embedding);
  c.eps_guarded = sq < kCosineEps;
  c.embedding_norm = std::sqrt(sq + kCosineEps);

  const auto k = proto.num_classes();
  c.cosine.resize(k);
  c.probs.resize(k);
  for (std::size_t i = 0; i < k; ++i) c.cosine[i] = dot(proto.row(i), c.embedding) / c.embedding_norm;

  const double s = model.config.logit_scale;
  const double top = s * *std::max_element(c.cosine.begin(), c.cosine.end());
  double z = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    c.probs[i] = std::exp(s * c.cosine[i] - top);
    z += c.probs[i];
  }
  for (auto& p : c.probs) p /= z;
  return c;
}

std::size_t predict(const CosineClassifier& model, const ParamSet& params, std::span<const double> x) {
  const auto c = forward(model, params, x);
  // max_element returns the first maximum.
  return static_cast<std::size_t>(std::max_element(c.cosine.begin(), c.cosine.end()) - c.cosine.begin());
}

double confidence(const CosineClassifier& model, const ParamSet& params, std::span<const double> x) {
  const auto c = forward(model, params, x);
  return *std::max_element(c.probs.begin(), c.probs.end());
}

LossGrad ce_loss_and_grad(const CosineClassifier& model, const ParamSet& params, std::span<const Labeled> batch) {
  if (batch.empty()) throw DomainError("ce_loss_and_grad: empty batch");
  const auto layers = dense_layers(params);
  const auto& proto = model.prototypes;
  const auto k = proto.num_classes();
  const double s = model.config.logit_scale;
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  LossGrad out{0.0, params.zeros_like()};
  std::vector<double> g_v(proto.dim());
  std::vector<double> g_a;
  std::vector<double> g_prev;

  for (const auto& ex : batch) {
    if (ex.y >= k) throw DomainError("label " + std::to_string(ex.y) + " out of range");
    const auto c = forward(model, params, ex.x);
    out.loss -= std::log(c.probs[ex.y]) * inv_b;

    // d loss / d cosine_k = s * (p_k - [k == y]) / B
    const double n = c.embedding_norm;
    std::fill(g_v.begin(), g_v.end(), 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      const double g_cos = s * (c.probs[i] - (i == ex.y ? 1.0 : 0.0)) * inv_b;
      const auto p = proto.row(i);
      for (std::size_t j = 0; j < g_v.size(); ++j) {
        g_v[j] += g_cos * (p[j] / n - c.cosine[i] * c.embedding[j] / (n * n));
      }
    }

    // Back through the dense stack; g_a holds the gradient w.r.t. the layer output.
    g_a = g_v;
    for (std::size_t l = layers.size(); l-- > 0;) {
      const auto& w = *layers[l].w;
      const auto& in = c.activations[l];
      const auto rows = w.shape[0];
      const auto cols = w.shape[1];
      if (l + 1 < layers.size()) {
        const auto& a = c.activations[l + 1];
        for (std::size_t r = 0; r < rows; ++r) g_a[r] *= 1.0 - a[r] * a[r];
      }
      auto& gw = out.grads[2 * l].tensor.values;
      auto& gb = out.grads[2 * l + 1].tensor.values;
      g_prev.assign(cols, 0.0);
      for (std::size_t r = 0; r < rows; ++r) {
        gb[r] += g_a[r];
        const double* wr = w.values.data() + r * cols;
        double* gwr = gw.data() + r * cols;
        for (std::size_t q = 0; q < cols; ++q) {
          gwr[q] += g_a[r] * in[q];
          g_prev[q] += wr[q] * g_a[r];
        }
      }
      std::swap(g_a, g_prev);
    }
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> grad_check_coords(const ParamSet& params, std::size_t n_coords,
                                                                   std::uint64_t seed) {
  if (n_coords < 1) throw DomainError("grad_check: n_coords must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    const auto n = params[l].tensor.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<std::size_t> picked;
    std::sample(idx.begin(), idx.end(), std::back_inserter(picked), std::min(n, n_coords), rng);
    for (auto j : picked) coords.emplace_back(l, j);
  }
  return coords;
}

double grad_check(const Objective& objective, const ParamSet& params, std::size_t n_coords, double h,
                  std::uint64_t seed) {
  const auto analytic = objective(params);
  double worst = 0.0;
  ParamSet probe = params;
  for (auto [l, j] : grad_check_coords(params, n_coords, seed)) {
    double& v = probe[l].tensor.values[j];
    const double orig = v;
    v = orig + h;
    const double up = objective(probe).loss;
    v = orig - h;
    const double down = objective(probe).loss;
    v = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic.grads[l].tensor.values[j];
    const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
    worst = std::max(worst, std::fabs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace ham
