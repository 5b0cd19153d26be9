#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mixdetect/pipeline.hpp"

namespace mixdetect::cli {

// Shared settings loaded with --config. Relative paths resolve against the
// config file's directory.
struct ProjectConfig {
  std::filesystem::path corpora;
  std::filesystem::path models;
  std::filesystem::path classifier;
  std::filesystem::path law;
  std::filesystem::path reports;
  std::vector<std::string> domains;
  DetectionConfig detection;
  std::uint64_t seed = 0;

  std::string to_json() const;
  static ProjectConfig from_json(const std::string& text, const std::filesystem::path& base = {});
  static ProjectConfig load(const std::filesystem::path& path);
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

// argv excludes the program name.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mixdetect::cli
