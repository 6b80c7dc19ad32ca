#include "ham/checkpoint.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace ham {

std::string format_double(double v) {
  if (!std::isfinite(v)) throw NumericalError("cannot serialize non-finite value");
  // "-0" would parse back as the integer 0.
  if (v == 0.0 && std::signbit(v)) return "-0.0";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string checkpoint_to_string(const ParamSet& ps) {
  std::string out = "{\"format_version\": " + std::to_string(kCheckpointFormatVersion) + ", \"layers\": [";
  for (std::size_t l = 0; l < ps.num_layers(); ++l) {
    const auto& e = ps[l];
    if (l) out += ", ";
    out += "\n  {\"name\": " + nlohmann::json(e.name).dump() + ", \"shape\": [";
    for (std::size_t d = 0; d < e.tensor.shape.size(); ++d) {
      if (d) out += ", ";
      out += std::to_string(e.tensor.shape[d]);
    }
    out += "], \"values\": [";
    for (std::size_t j = 0; j < e.tensor.values.size(); ++j) {
      if (j) out += ", ";
      out += format_double(e.tensor.values[j]);
    }
    out += "]}";
  }
  out += "\n]}\n";
  return out;
}

ParamSet checkpoint_from_string(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(0, std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    if (doc.at("format_version").get<int>() != kCheckpointFormatVersion) {
      throw ParseError(0, "unsupported checkpoint format_version");
    }
    ParamSet ps;
    for (const auto& layer : doc.at("layers")) {
      auto shape = layer.at("shape").get<Shape>();
      auto values = layer.at("values").get<std::vector<double>>();
      for (double v : values) {
        if (!std::isfinite(v)) throw ParseError(0, "non-finite checkpoint value");
      }
      ps.add(layer.at("name").get<std::string>(), TensorF(std::move(shape), std::move(values)));
    }
    return ps;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("malformed checkpoint: ") + e.what());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void save_checkpoint(const ParamSet& ps, const std::filesystem::path& path) {
  write_file(path, checkpoint_to_string(ps));
}

ParamSet load_checkpoint(const std::filesystem::path& path) {
  try {
    return checkpoint_from_string(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(0, path.string() + ": " + e.what());
  }
}

}  // namespace ham
