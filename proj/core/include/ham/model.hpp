#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ham/params.hpp"

namespace ham {

inline constexpr double kCosineEps = 1e-12;

/// Frozen class-prototype matrix, one unit-norm row per class. Plays the role
/// of the text embeddings of the class prompts.
class Prototypes {
 public:
  Prototypes() = default;
  // Throws DomainError unless every row has unit norm within 1e-12.
  Prototypes(std::size_t num_classes, std::size_t dim, std::vector<double> rows);

  std::size_t num_classes() const { return k_; }
  std::size_t dim() const { return d_; }
  std::span<const double> row(std::size_t k) const { return {rows_.data() + k * d_, d_}; }
  const std::vector<double>& data() const { return rows_; }

  // Smallest pairwise angle between rows, in radians.
  double min_pairwise_angle() const;

  // Stored as a one-layer checkpoint named "prototypes" with shape [K, D].
  ParamSet to_params() const;
  static Prototypes from_params(const ParamSet& ps);

  bool operator==(const Prototypes&) const = default;

 private:
  std::size_t k_ = 0;
  std::size_t d_ = 0;
  std::vector<double> rows_;
};

// Rows drawn from a seeded standard normal and normalized.
Prototypes init_prototypes(std::size_t num_classes, std::size_t dim, std::uint64_t seed);

struct EncoderConfig {
  std::size_t input_dim = 8;
  std::vector<std::size_t> hidden_dims{32, 32};
  std::size_t embed_dim = 16;
  std::string activation = "tanh";
  double logit_scale = 10.0;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// Encoder parameters: W1,b1,...,Wn,bn for the tanh hidden layers, then
/// W_out,b_out for the linear embedding head. W is stored [out, in] row-major.
/// Weights ~ N(0, 1/fan_in), biases zero.
ParamSet init_encoder(const EncoderConfig& cfg, std::uint64_t seed);

/// Frozen pieces of the classifier: architecture and prototypes.
struct CosineClassifier {
  EncoderConfig config;
  Prototypes prototypes;

  std::size_t num_classes() const { return prototypes.num_classes(); }
};

struct ForwardCache {
  // activations[0] is the input; activations[l+1] = tanh(pre[l]) for hidden layers.
  std::vector<std::vector<double>> pre;
  std::vector<std::vector<double>> activations;
  std::vector<double> embedding;
  double embedding_norm = 0.0;  // sqrt(|V|^2 + eps)
  bool eps_guarded = false;     // set when |V|^2 is below the guard epsilon
  std::vector<double> cosine;
  std::vector<double> probs;
};

struct Labeled {
  std::span<const double> x;
  std::size_t y = 0;
};

ForwardCache forward(const CosineClassifier& model, const ParamSet& params, std::span<const double> x);
// Argmax of the cosine row, lowest index on ties.
std::size_t predict(const CosineClassifier& model, const ParamSet& params, std::span<const double> x);
// Maximum class probability.
double confidence(const CosineClassifier& model, const ParamSet& params, std::span<const double> x);

struct LossGrad {
  double loss = 0.0;
  ParamSet grads;
};

// Mean cross-entropy over the batch and its gradient w.r.t. every encoder layer.
LossGrad ce_loss_and_grad(const CosineClassifier& model, const ParamSet& params, std::span<const Labeled> batch);

using Objective = std::function<LossGrad(const ParamSet&)>;

/// Compares the analytic gradient of `objective` with central differences of
/// step h on n_coords coordinates per layer (all coordinates when the layer is
/// smaller). Returns the max of |a - n| / max(|a|, |n|, 1e-8).
double grad_check(const Objective& objective, const ParamSet& params, std::size_t n_coords, double h,
                  std::uint64_t seed);

// Coordinates grad_check samples; exposed so determinism can be asserted.
std::vector<std::pair<std::size_t, std::size_t>> grad_check_coords(const ParamSet& params, std::size_t n_coords,
                                                                   std::uint64_t seed);

}  // namespace ham
