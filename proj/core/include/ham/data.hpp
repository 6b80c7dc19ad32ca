#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace ham {

/// Affine domain shift applied to clean class-conditional samples:
/// rotation of the first two coordinates, then scale, then offset.
struct DomainSpec {
  int domain_id = 0;
  double rotation_angle = 0.0;
  double scale = 1.0;
  std::vector<double> offset;  // missing trailing entries are zero
  double feature_noise_std = 1.0;
  double label_noise_rate = 0.0;

  bool operator==(const DomainSpec&) const = default;
};

// The reference four-domain benchmark: domain 2 is rotated almost by pi
// (extreme shift) and domain 3 carries 30% label noise.
std::vector<DomainSpec> default_domain_specs();

struct GenerateConfig {
  std::size_t num_classes = 5;
  std::size_t input_dim = 8;
  std::size_t n_per_domain = 500;
  std::vector<DomainSpec> domains = default_domain_specs();
  std::uint64_t seed = 7;

  void validate() const;
  bool operator==(const GenerateConfig&) const = default;
};

struct Sample {
  std::vector<double> x;
  std::size_t y = 0;
  int domain_id = 0;
  // Label was flipped by noise injection. Only evaluation code reads this.
  bool corrupted = false;

  bool operator==(const Sample&) const = default;
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t num_classes = 0;
  std::size_t input_dim = 0;
  std::uint64_t seed = 0;

  std::vector<int> domain_ids() const;  // sorted, unique
  bool operator==(const Dataset& o) const { return samples == o.samples; }
};

/// Index view into a shared dataset.
class DatasetView {
 public:
  DatasetView() = default;
  DatasetView(std::shared_ptr<const Dataset> ds, std::vector<std::size_t> indices);
  static DatasetView all(std::shared_ptr<const Dataset> ds);

  std::size_t size() const { return indices_.size(); }
  bool empty() const { return indices_.empty(); }
  const Sample& operator[](std::size_t i) const { return ds_->samples[indices_[i]]; }
  const std::vector<std::size_t>& indices() const { return indices_; }
  const Dataset& dataset() const { return *ds_; }
  std::shared_ptr<const Dataset> shared() const { return ds_; }

  DatasetView only_domain(int domain_id) const;
  DatasetView without_domain(int domain_id) const;
  DatasetView concat(const DatasetView& other) const;

 private:
  std::shared_ptr<const Dataset> ds_;
  std::vector<std::size_t> indices_;
};

struct SplitPair {
  DatasetView train;
  DatasetView val;
};

inline constexpr double kValidationFraction = 0.2;

// Class means ~ seeded normal, rescaled so every pair is at least 2 apart.
Dataset generate(const GenerateConfig& cfg);

// Per-domain stratified 80/20 split with a seeded shuffle.
SplitPair split_train_val(const DatasetView& view, std::uint64_t seed);

using Batch = std::vector<const Sample*>;

// One seeded permutation per (seed, epoch); the trailing short batch is kept.
std::vector<Batch> batch_iter(const DatasetView& view, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch);

/// Endless batch source cycling through epochs of batch_iter.
class BatchStream {
 public:
  BatchStream(DatasetView view, std::size_t batch_size, std::uint64_t seed);
  const Batch& next();

 private:
  DatasetView view_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t pos_ = 0;
  std::vector<Batch> current_;
};

void save_csv(const Dataset& ds, const std::filesystem::path& path);
std::string to_csv(const Dataset& ds);
// num_classes is inferred as max(y) + 1 unless given.
Dataset load_csv(const std::filesystem::path& path, std::size_t num_classes = 0);
Dataset parse_csv(const std::string& text, std::size_t num_classes = 0);

void to_json(nlohmann::json& j, const DomainSpec& s);
void to_json(nlohmann::json& j, const GenerateConfig& c);
// Strict parse: unknown keys and bad values throw ConfigError naming `path.key`.
GenerateConfig generate_config_from_json(const nlohmann::json& j, const std::string& path = "");

}  // namespace ham
