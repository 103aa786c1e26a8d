#include "run_context.hpp"

#include "survmil/io.hpp"

namespace survmil::cli {

json RunContext::Section(const char* name) const {
  if (config.contains(name)) return config.at(name);
  return json::object();
}

void RunContext::AddInput(const std::string& label, const fs::path& path) {
  inputs[label] = fs::absolute(path).lexically_normal().generic_string();
}

json HashTree(const fs::path& dir) {
  std::vector<fs::path> files;
  if (fs::exists(dir)) {
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      const fs::path rel = fs::relative(entry.path(), dir);
      if (rel == kManifestName) continue;
      files.push_back(rel);
    }
  }
  std::sort(files.begin(), files.end());
  json out = json::object();
  for (const auto& rel : files) out[rel.generic_string()] = io::HashFile(dir / rel);
  return out;
}

void WriteManifest(const RunContext& ctx, const std::string& command) {
  json input_hashes = json::object();
  for (const auto& [label, path] : ctx.inputs.items()) {
    const fs::path p = path.get<std::string>();
    if (fs::is_regular_file(p)) {
      input_hashes[label] = io::HashFile(p);
    } else if (fs::is_directory(p)) {
      input_hashes[label] = HashTree(p);
    }
  }
  const json manifest = {{"tool", "survmil"},
                         {"version", kToolVersion},
                         {"command", command},
                         {"argv", ctx.argv},
                         {"cwd", fs::current_path().generic_string()},
                         {"out_dir", fs::absolute(ctx.out_dir).lexically_normal().generic_string()},
                         {"threads", ctx.threads},
                         {"config", ctx.resolved_config},
                         {"seeds", ctx.seeds},
                         {"inputs", ctx.inputs},
                         {"input_hashes", input_hashes},
                         {"outputs", HashTree(ctx.out_dir)}};
  io::WriteJson(ctx.out_dir / kManifestName, manifest);
}

}  // namespace survmil::cli
