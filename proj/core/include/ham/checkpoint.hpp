#pragma once

#include <filesystem>
#include <string>

#include "ham/params.hpp"

namespace ham {

inline constexpr int kCheckpointFormatVersion = 1;

// {"format_version": 1, "layers": [{"name", "shape", "values"}]}; values are
// printed with 17 significant digits so a save/load cycle is bit-exact.
std::string checkpoint_to_string(const ParamSet& ps);
ParamSet checkpoint_from_string(const std::string& text);

void save_checkpoint(const ParamSet& ps, const std::filesystem::path& path);
ParamSet load_checkpoint(const std::filesystem::path& path);

// Shortest-safe "%.17g" rendering shared by every text format in the project.
std::string format_double(double v);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& text);

}  // namespace ham
