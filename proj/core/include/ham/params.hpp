#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ham/errors.hpp"

namespace ham {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);

/// Dense row-major tensor of doubles.
struct TensorF {
  Shape shape;
  std::vector<double> values;

  TensorF() = default;
  TensorF(Shape s, std::vector<double> v);
  static TensorF zeros(Shape s);

  std::size_t size() const { return values.size(); }
  bool operator==(const TensorF&) const = default;
};

/// Ordered collection of named tensors. Holds model parameters as well as
/// update vectors (theta - theta0), gradients and optimizer moments.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    TensorF tensor;
    bool operator==(const Entry&) const = default;
  };

  ParamSet() = default;

  // Throws StructuralError on a duplicate name.
  void add(std::string name, TensorF tensor);

  std::size_t num_layers() const { return entries_.size(); }
  std::size_t num_values() const;
  bool empty() const { return entries_.empty(); }

  const Entry& operator[](std::size_t i) const { return entries_[i]; }
  Entry& operator[](std::size_t i) { return entries_[i]; }
  const TensorF& at(const std::string& name) const;
  TensorF& at(const std::string& name);
  std::optional<std::size_t> index_of(const std::string& name) const;

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  ParamSet zeros_like() const;

  bool operator==(const ParamSet&) const = default;

 private:
  std::vector<Entry> entries_;
};

// Same names, same order, same shapes.
bool congruent(const ParamSet& a, const ParamSet& b);
// Throws CongruenceError naming the first mismatching layer.
void require_congruent(const ParamSet& a, const ParamSet& b, const char* op);

struct FlatSegment {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
  std::size_t length = 0;
  bool operator==(const FlatSegment&) const = default;
};

struct FlatLayout {
  std::vector<FlatSegment> segments;

  std::size_t total() const { return segments.empty() ? 0 : segments.back().offset + segments.back().length; }
  // Contiguous, non-overlapping, shape-consistent.
  bool valid() const;
  bool operator==(const FlatLayout&) const = default;
};

struct FlatVec {
  std::vector<double> values;
  FlatLayout layout;

  std::span<const double> segment(std::size_t i) const {
    const auto& s = layout.segments[i];
    return std::span<const double>(values).subspan(s.offset, s.length);
  }
  bool operator==(const FlatVec&) const = default;
};

struct BitMask {
  std::vector<bool> bits;
  FlatLayout layout;

  std::size_t count() const;
  bool operator==(const BitMask&) const = default;
};

ParamSet update_vector(const ParamSet& theta, const ParamSet& theta0);
ParamSet add(const ParamSet& a, const ParamSet& b);
ParamSet scale(const ParamSet& a, double c);

FlatVec flatten(const ParamSet& ps);
ParamSet split(const FlatVec& fv);

/// Nearest-rank percentile of |values|: the k-th smallest magnitude with
/// k = ceil(r * N). Returns -1.0 when k == 0 so that a strict `>` test keeps
/// every entry. With `sample_size`, the rank is taken over a seeded uniform
/// sample (without replacement when sample_size <= N).
double magnitude_percentile(const FlatVec& fv, double r,
                            std::optional<std::size_t> sample_size = std::nullopt,
                            std::uint64_t rng_seed = 0);

// Same rule over a raw span, used for per-layer trimming.
double magnitude_percentile(std::span<const double> values, double r);

BitMask mask_above(const FlatVec& fv, double sigma);
FlatVec apply_mask(const FlatVec& fv, const BitMask& m);

std::vector<std::pair<std::string, double>> per_layer_dot(const ParamSet& a, const ParamSet& b);

/// Elementwise sum_i coeffs[i] * sets[i], accumulated in list order.
ParamSet lin_comb(std::span<const double> coeffs, std::span<const ParamSet> sets);

bool all_finite(const ParamSet& ps);

}  // namespace ham
