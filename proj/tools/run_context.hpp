#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace survmil::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kManifestName = "run_manifest.json";

// Global flags plus what a command records for its manifest.
struct RunContext {
  std::vector<std::string> argv;  // arguments after the program name
  std::optional<std::uint64_t> seed;
  fs::path out_dir = ".";
  int threads = 1;
  json config = json::object();  // contents of --config, if given

  json resolved_config = json::object();
  json seeds = json::object();
  json inputs = json::object();  // label -> path

  // Section of --config, or an empty object.
  json Section(const char* name) const;
  std::uint64_t SeedOr(std::uint64_t fallback) const { return seed.value_or(fallback); }
  void AddInput(const std::string& label, const fs::path& path);
};

// Hashes of every regular file under dir except the manifest, keyed by
// generic relative path.
json HashTree(const fs::path& dir);

void WriteManifest(const RunContext& ctx, const std::string& command);

}  // namespace survmil::cli
