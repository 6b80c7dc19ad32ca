#include "ham/params.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iterator>
#include <limits>
#include <numeric>
#include <random>

namespace ham {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

TensorF::TensorF(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
  for (auto d : shape) {
    if (d == 0) throw StructuralError("tensor shape has a zero dimension");
  }
  if (shape_size(shape) != values.size()) {
    throw StructuralError("tensor shape product " + std::to_string(shape_size(shape)) +
                          " != value count " + std::to_string(values.size()));
  }
}

TensorF TensorF::zeros(Shape s) {
  auto n = shape_size(s);
  return TensorF(std::move(s), std::vector<double>(n, 0.0));
}

void ParamSet::add(std::string name, TensorF tensor) {
  if (index_of(name)) throw StructuralError("duplicate layer name '" + name + "'");
  entries_.push_back({std::move(name), std::move(tensor)});
}

std::size_t ParamSet::num_values() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

std::optional<std::size_t> ParamSet::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  return std::nullopt;
}

const TensorF& ParamSet::at(const std::string& name) const {
  auto i = index_of(name);
  if (!i) throw StructuralError("no layer named '" + name + "'");
  return entries_[*i].tensor;
}

TensorF& ParamSet::at(const std::string& name) {
  auto i = index_of(name);
  if (!i) throw StructuralError("no layer named '" + name + "'");
  return entries_[*i].tensor;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto& e : entries_) out.add(e.name, TensorF::zeros(e.tensor.shape));
  return out;
}

namespace {

std::optional<std::string> first_mismatch(const ParamSet& a, const ParamSet& b) {
  const auto n = std::min(a.num_layers(), b.num_layers());
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i].name != b[i].name || a[i].tensor.shape != b[i].tensor.shape) {
      return "layer " + std::to_string(i) + " ('" + a[i].name + "' vs '" + b[i].name + "')";
    }
  }
  if (a.num_layers() != b.num_layers()) {
    const auto& longer = a.num_layers() > b.num_layers() ? a : b;
    return "layer " + std::to_string(n) + " ('" + longer[n].name + "' present on one side only)";
  }
  return std::nullopt;
}

template <typename F>
ParamSet zip_with(const ParamSet& a, const ParamSet& b, const char* op, F f) {
  require_congruent(a, b, op);
  ParamSet out = a;
  for (std::size_t l = 0; l < a.num_layers(); ++l) {
    auto& dst = out[l].tensor.values;
    const auto& src = b[l].tensor.values;
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = f(dst[j], src[j]);
  }
  return out;
}

std::size_t nearest_rank(double r, std::size_t n) {
  // The epsilon absorbs representation error such as 0.07 * 100 = 7.000000000000001.
  const double x = r * static_cast<double>(n);
  auto k = static_cast<std::size_t>(std::max(0.0, std::ceil(x - 1e-9)));
  return std::min(k, n);
}

double kth_smallest_magnitude(std::vector<double> mags, std::size_t k) {
  auto kth = mags.begin() + static_cast<std::ptrdiff_t>(k - 1);
  std::nth_element(mags.begin(), kth, mags.end());
  return *kth;
}

void check_fraction(double r) {
  if (!(r >= 0.0 && r <= 1.0)) throw DomainError("percentile fraction must lie in [0,1]");
}

}  // namespace

bool congruent(const ParamSet& a, const ParamSet& b) { return !first_mismatch(a, b); }

void require_congruent(const ParamSet& a, const ParamSet& b, const char* op) {
  if (auto m = first_mismatch(a, b)) {
    throw CongruenceError(std::string(op) + ": parameter sets are not congruent at " + *m);
  }
}

ParamSet update_vector(const ParamSet& theta, const ParamSet& theta0) {
  return zip_with(theta, theta0, "update_vector", [](double x, double y) { return x - y; });
}

ParamSet add(const ParamSet& a, const ParamSet& b) {
  return zip_with(a, b, "add", [](double x, double y) { return x + y; });
}

ParamSet scale(const ParamSet& a, double c) {
  ParamSet out = a;
  for (auto& e : out) {
    for (auto& v : e.tensor.values) v *= c;
  }
  return out;
}

bool FlatLayout::valid() const {
  std::size_t expect = 0;
  for (const auto& s : segments) {
    if (s.offset != expect || s.length != shape_size(s.shape) || s.length == 0) return false;
    expect += s.length;
  }
  return true;
}

std::size_t BitMask::count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), true)); }

FlatVec flatten(const ParamSet& ps) {
  FlatVec fv;
  fv.values.reserve(ps.num_values());
  for (const auto& e : ps) {
    fv.layout.segments.push_back({e.name, e.tensor.shape, fv.values.size(), e.tensor.size()});
    fv.values.insert(fv.values.end(), e.tensor.values.begin(), e.tensor.values.end());
  }
  return fv;
}

ParamSet split(const FlatVec& fv) {
  if (!fv.layout.valid() || fv.layout.total() != fv.values.size()) {
    throw StructuralError("split: layout does not match value count " + std::to_string(fv.values.size()));
  }
  ParamSet ps;
  for (std::size_t i = 0; i < fv.layout.segments.size(); ++i) {
    auto seg = fv.segment(i);
    ps.add(fv.layout.segments[i].name,
           TensorF(fv.layout.segments[i].shape, std::vector<double>(seg.begin(), seg.end())));
  }
  return ps;
}

double magnitude_percentile(std::span<const double> values, double r) {
  if (values.empty()) throw DomainError("magnitude_percentile: empty vector");
  check_fraction(r);
  const auto k = nearest_rank(r, values.size());
  if (k == 0) return -1.0;
  std::vector<double> mags(values.size());
  std::transform(values.begin(), values.end(), mags.begin(), [](double v) { return std::fabs(v); });
  return kth_smallest_magnitude(std::move(mags), k);
}

double magnitude_percentile(const FlatVec& fv, double r, std::optional<std::size_t> sample_size,
                            std::uint64_t rng_seed) {
  if (fv.values.empty()) throw DomainError("magnitude_percentile: empty vector");
  if (!sample_size) return magnitude_percentile(std::span<const double>(fv.values), r);

  check_fraction(r);
  if (*sample_size == 0) throw DomainError("magnitude_percentile: sample_size must be >= 1");
  std::mt19937_64 rng(rng_seed);
  std::vector<double> sample;
  sample.reserve(*sample_size);
  if (*sample_size <= fv.values.size()) {
    std::sample(fv.values.begin(), fv.values.end(), std::back_inserter(sample), *sample_size, rng);
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, fv.values.size() - 1);
    for (std::size_t i = 0; i < *sample_size; ++i) sample.push_back(fv.values[pick(rng)]);
  }
  return magnitude_percentile(std::span<const double>(sample), r);
}

BitMask mask_above(const FlatVec& fv, double sigma) {
  BitMask m;
  m.layout = fv.layout;
  m.bits.resize(fv.values.size());
  for (std::size_t j = 0; j < fv.values.size(); ++j) m.bits[j] = std::fabs(fv.values[j]) > sigma;
  return m;
}

FlatVec apply_mask(const FlatVec& fv, const BitMask& m) {
  if (m.layout != fv.layout || m.bits.size() != fv.values.size()) {
    throw StructuralError("apply_mask: mask layout differs from vector layout");
  }
  FlatVec out = fv;
  for (std::size_t j = 0; j < out.values.size(); ++j) {
    if (!m.bits[j]) out.values[j] = 0.0;
  }
  return out;
}

std::vector<std::pair<std::string, double>> per_layer_dot(const ParamSet& a, const ParamSet& b) {
  require_congruent(a, b, "per_layer_dot");
  std::vector<std::pair<std::string, double>> out;
  out.reserve(a.num_layers());
  for (std::size_t l = 0; l < a.num_layers(); ++l) {
    const auto& x = a[l].tensor.values;
    const auto& y = b[l].tensor.values;
    out.emplace_back(a[l].name, std::inner_product(x.begin(), x.end(), y.begin(), 0.0));
  }
  return out;
}

ParamSet lin_comb(std::span<const double> coeffs, std::span<const ParamSet> sets) {
  if (sets.empty()) throw DomainError("lin_comb: no parameter sets");
  if (coeffs.size() != sets.size()) {
    throw DomainError("lin_comb: " + std::to_string(coeffs.size()) + " coefficients for " +
                      std::to_string(sets.size()) + " sets");
  }
  for (std::size_t i = 1; i < sets.size(); ++i) require_congruent(sets[0], sets[i], "lin_comb");

  ParamSet out = scale(sets[0], coeffs[0]);
  for (std::size_t i = 1; i < sets.size(); ++i) {
    for (std::size_t l = 0; l < out.num_layers(); ++l) {
      auto& dst = out[l].tensor.values;
      const auto& src = sets[i][l].tensor.values;
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += coeffs[i] * src[j];
    }
  }
  return out;
}

bool all_finite(const ParamSet& ps) {
  for (const auto& e : ps) {
    for (double v : e.tensor.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

}  // namespace ham
