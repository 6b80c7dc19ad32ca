#include "ham/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ham/checkpoint.hpp"
#include "json_util.hpp"

namespace ham {

std::vector<DomainSpec> default_domain_specs() {
  return {
      {0, 0.0, 1.0, {}, 1.0, 0.0},
      {1, 0.7, 1.15, {0.6, -0.4}, 1.0, 0.0},
      {2, 3.0, 0.85, {-0.5, 0.5}, 1.0, 0.0},
      {3, 1.4, 1.0, {0.0, 0.8}, 1.6, 0.3},
  };
}

void GenerateConfig::validate() const {
  if (num_classes < 2) throw ConfigError("data.num_classes", "must be >= 2");
  if (input_dim < 1) throw ConfigError("data.input_dim", "must be >= 1");
  if (n_per_domain < num_classes) throw ConfigError("data.n_per_domain", "must be >= num_classes");
  if (domains.empty()) throw ConfigError("data.domains", "at least one domain is required");
  std::set<int> ids;
  for (const auto& d : domains) {
    const auto where = "data.domains[" + std::to_string(d.domain_id) + "]";
    if (!ids.insert(d.domain_id).second) throw ConfigError(where + ".domain_id", "duplicate domain id");
    if (!(d.scale > 0.0) || !std::isfinite(d.scale)) throw ConfigError(where + ".scale", "must be > 0");
    if (!std::isfinite(d.rotation_angle)) throw ConfigError(where + ".rotation_angle", "must be finite");
    if (!(d.feature_noise_std >= 0.0) || !std::isfinite(d.feature_noise_std)) {
      throw ConfigError(where + ".feature_noise_std", "must be >= 0");
    }
    if (!(d.label_noise_rate >= 0.0 && d.label_noise_rate < 1.0)) {
      throw ConfigError(where + ".label_noise_rate", "must lie in [0, 1)");
    }
    if (!d.offset.empty() && d.offset.size() > input_dim) {
      throw ConfigError(where + ".offset", "longer than input_dim");
    }
  }
}

std::vector<int> Dataset::domain_ids() const {
  std::set<int> ids;
  for (const auto& s : samples) ids.insert(s.domain_id);
  return {ids.begin(), ids.end()};
}

Dataset generate(const GenerateConfig& cfg) {
  cfg.validate();
  const auto k = cfg.num_classes;
  const auto dim = cfg.input_dim;

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> means(k, std::vector<double>(dim));
  for (auto& m : means) {
    for (auto& v : m) v = normal(rng);
  }
  double min_dist = INFINITY;
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a + 1; b < k; ++b) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < dim; ++j) d2 += (means[a][j] - means[b][j]) * (means[a][j] - means[b][j]);
      min_dist = std::min(min_dist, std::sqrt(d2));
    }
  }
  if (min_dist < 2.0) {
    const double f = 2.0 / std::max(min_dist, 1e-12);
    for (auto& m : means) {
      for (auto& v : m) v *= f;
    }
  }

  Dataset ds;
  ds.num_classes = k;
  ds.input_dim = dim;
  ds.seed = cfg.seed;
  ds.samples.reserve(cfg.domains.size() * cfg.n_per_domain);
  for (const auto& spec : cfg.domains) {
    std::seed_seq seq{cfg.seed, std::uint64_t{0x5eed}, static_cast<std::uint64_t>(static_cast<std::uint32_t>(spec.domain_id))};
    std::mt19937_64 drng(seq);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> other(0, k - 2);
    const double c = std::cos(spec.rotation_angle);
    const double s = std::sin(spec.rotation_angle);
    for (std::size_t n = 0; n < cfg.n_per_domain; ++n) {
      Sample smp;
      smp.domain_id = spec.domain_id;
      const std::size_t y = n % k;
      smp.x = means[y];
      for (auto& v : smp.x) v += spec.feature_noise_std * noise(drng);
      if (dim >= 2) {
        const double x0 = smp.x[0];
        const double x1 = smp.x[1];
        smp.x[0] = c * x0 - s * x1;
        smp.x[1] = s * x0 + c * x1;
      }
      for (std::size_t j = 0; j < dim; ++j) {
        smp.x[j] = smp.x[j] * spec.scale + (j < spec.offset.size() ? spec.offset[j] : 0.0);
      }
      smp.y = y;
      if (unit(drng) < spec.label_noise_rate) {
        const auto o = other(drng);
        smp.y = o >= y ? o + 1 : o;
        smp.corrupted = true;
      }
      ds.samples.push_back(std::move(smp));
    }
  }
  return ds;
}

DatasetView::DatasetView(std::shared_ptr<const Dataset> ds, std::vector<std::size_t> indices)
    : ds_(std::move(ds)), indices_(std::move(indices)) {}

DatasetView DatasetView::all(std::shared_ptr<const Dataset> ds) {
  std::vector<std::size_t> idx(ds->samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return DatasetView(std::move(ds), std::move(idx));
}

DatasetView DatasetView::only_domain(int domain_id) const {
  std::vector<std::size_t> idx;
  for (auto i : indices_) {
    if (ds_->samples[i].domain_id == domain_id) idx.push_back(i);
  }
  return DatasetView(ds_, std::move(idx));
}

DatasetView DatasetView::without_domain(int domain_id) const {
  std::vector<std::size_t> idx;
  for (auto i : indices_) {
    if (ds_->samples[i].domain_id != domain_id) idx.push_back(i);
  }
  return DatasetView(ds_, std::move(idx));
}

DatasetView DatasetView::concat(const DatasetView& other) const {
  if (other.ds_ != ds_) throw StructuralError("concat: views of different datasets");
  auto idx = indices_;
  idx.insert(idx.end(), other.indices_.begin(), other.indices_.end());
  return DatasetView(ds_, std::move(idx));
}

SplitPair split_train_val(const DatasetView& view, std::uint64_t seed) {
  std::set<int> ids;
  for (auto i : view.indices()) ids.insert(view.dataset().samples[i].domain_id);
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  for (int id : ids) {
    auto idx = view.only_domain(id).indices();
    if (idx.size() < 5) {
      throw ConfigError("data.n_per_domain", "domain " + std::to_string(id) + " has fewer than 5 samples to split");
    }
    std::seed_seq seq{seed, std::uint64_t{0x5917}, static_cast<std::uint64_t>(static_cast<std::uint32_t>(id))};
    std::mt19937_64 rng(seq);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::llround(kValidationFraction * static_cast<double>(idx.size())));
    val.insert(val.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    train.insert(train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {DatasetView(view.shared(), std::move(train)), DatasetView(view.shared(), std::move(val))};
}

std::vector<Batch> batch_iter(const DatasetView& view, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size < 1) throw DomainError("batch_iter: batch_size must be >= 1");
  std::vector<std::size_t> order(view.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::seed_seq seq{seed, std::uint64_t{0xba7c}, epoch};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    Batch b;
    for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) b.push_back(&view[order[i]]);
    out.push_back(std::move(b));
  }
  return out;
}

BatchStream::BatchStream(DatasetView view, std::size_t batch_size, std::uint64_t seed)
    : view_(std::move(view)), batch_size_(batch_size), seed_(seed) {
  if (view_.empty()) throw DomainError("BatchStream: empty view");
  current_ = batch_iter(view_, batch_size_, seed_, epoch_);
}

const Batch& BatchStream::next() {
  if (pos_ == current_.size()) {
    current_ = batch_iter(view_, batch_size_, seed_, ++epoch_);
    pos_ = 0;
  }
  return current_[pos_++];
}

std::string to_csv(const Dataset& ds) {
  std::string out;
  for (std::size_t j = 0; j < ds.input_dim; ++j) out += "x_" + std::to_string(j) + ",";
  out += "y,domain_id,corrupted\n";
  for (const auto& s : ds.samples) {
    for (double v : s.x) out += format_double(v) + ",";
    out += std::to_string(s.y) + "," + std::to_string(s.domain_id) + "," + (s.corrupted ? "1" : "0") + "\n";
  }
  return out;
}

void save_csv(const Dataset& ds, const std::filesystem::path& path) { write_file(path, to_csv(ds)); }

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename T>
T parse_number(const std::string& s, std::size_t line, const std::string& column) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ParseError(line, "column " + column + ": cannot parse '" + s + "'");
  }
  return v;
}

}  // namespace

Dataset parse_csv(const std::string& text, std::size_t num_classes) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_fields(line);
  if (header.size() < 4) throw ParseError(1, "header needs x_0.., y, domain_id, corrupted");
  const auto dim = header.size() - 3;
  for (std::size_t j = 0; j < dim; ++j) {
    if (header[j] != "x_" + std::to_string(j)) throw ParseError(1, "expected column x_" + std::to_string(j));
  }
  if (header[dim] != "y" || header[dim + 1] != "domain_id" || header[dim + 2] != "corrupted") {
    throw ParseError(1, "expected trailing columns y,domain_id,corrupted");
  }

  Dataset ds;
  ds.input_dim = dim;
  std::size_t line_no = 1;
  std::size_t max_y = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != header.size()) {
      throw ParseError(line_no, "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
    }
    Sample s;
    s.x.resize(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      s.x[j] = parse_number<double>(f[j], line_no, header[j]);
      if (!std::isfinite(s.x[j])) throw ParseError(line_no, "non-finite feature");
    }
    s.y = parse_number<std::size_t>(f[dim], line_no, "y");
    s.domain_id = parse_number<int>(f[dim + 1], line_no, "domain_id");
    const auto c = parse_number<int>(f[dim + 2], line_no, "corrupted");
    if (c != 0 && c != 1) throw ParseError(line_no, "corrupted must be 0 or 1");
    s.corrupted = c == 1;
    max_y = std::max(max_y, s.y);
    ds.samples.push_back(std::move(s));
  }
  ds.num_classes = num_classes ? num_classes : max_y + 1;
  if (max_y >= ds.num_classes) throw ParseError(0, "label exceeds num_classes");
  return ds;
}

Dataset load_csv(const std::filesystem::path& path, std::size_t num_classes) {
  return parse_csv(read_file(path), num_classes);
}

void to_json(nlohmann::json& j, const DomainSpec& s) {
  j = nlohmann::json{{"domain_id", s.domain_id},
                     {"rotation_angle", s.rotation_angle},
                     {"scale", s.scale},
                     {"offset", s.offset},
                     {"feature_noise_std", s.feature_noise_std},
                     {"label_noise_rate", s.label_noise_rate}};
}

void to_json(nlohmann::json& j, const GenerateConfig& c) {
  j = nlohmann::json{{"num_classes", c.num_classes},
                     {"input_dim", c.input_dim},
                     {"n_per_domain", c.n_per_domain},
                     {"domains", c.domains},
                     {"seed", c.seed}};
}

GenerateConfig generate_config_from_json(const nlohmann::json& j, const std::string& path) {
  GenerateConfig c;
  detail::StrictObject o(j, path);
  o.get("num_classes", c.num_classes);
  o.get("input_dim", c.input_dim);
  o.get("n_per_domain", c.n_per_domain);
  o.get("seed", c.seed);
  if (const auto* doms = o.child("domains")) {
    if (!doms->is_array()) throw ConfigError(o.field("domains"), "expected an array");
    c.domains.clear();
    for (std::size_t i = 0; i < doms->size(); ++i) {
      detail::StrictObject d((*doms)[i], o.field("domains") + "[" + std::to_string(i) + "]");
      DomainSpec s;
      s.domain_id = static_cast<int>(i);
      d.get("domain_id", s.domain_id);
      d.get("rotation_angle", s.rotation_angle);
      d.get("scale", s.scale);
      d.get("offset", s.offset);
      d.get("feature_noise_std", s.feature_noise_std);
      d.get("label_noise_rate", s.label_noise_rate);
      d.finish();
      c.domains.push_back(std::move(s));
    }
  }
  o.finish();
  return c;
}

}  // namespace ham
