#pragma once

#include <optional>
#include <string>
#include <vector>

#include "run_context.hpp"

namespace survmil::cli {

struct GenerateOptions {
  std::optional<int> cases;
  std::optional<double> censor_rate;
  std::optional<int> prototypes;
  std::optional<int> feature_dim;
  bool no_heatmaps = false;
};
void CmdGenerate(RunContext& ctx, const GenerateOptions& opt);

struct MaskOptions {
  fs::path data_dir;
  std::optional<double> threshold;
  std::optional<double> recall_target;
  std::optional<int> dilation;
  std::optional<int> min_component;
  std::optional<int> connectivity;
  std::vector<double> report_thresholds{0.25, 0.5, 0.75};
};
void CmdMask(RunContext& ctx, const MaskOptions& opt);

struct TrainOptions {
  fs::path data_dir;
  std::optional<fs::path> roi;
  int models = 5;
  int ensemble_k = 5;
  std::optional<long long> steps;
  std::optional<int> eval_every;
  std::optional<int> batch_size;
  std::optional<int> bag_size;
  std::optional<double> learning_rate;
  std::optional<fs::path> resume;
};
void CmdTrain(RunContext& ctx, const TrainOptions& opt);

struct SearchOptions {
  fs::path data_dir;
  std::optional<fs::path> roi;
  int configs = 100;
  bool exhaustive = false;
  std::optional<long long> steps;
  std::optional<int> eval_every;
};
void CmdSearch(RunContext& ctx, const SearchOptions& opt);

struct EvalOptions {
  fs::path data_dir;
  fs::path scores;
  std::vector<std::string> splits{"val1", "val2"};
  int horizon = 60;
  int bootstrap = 9999;
};
void CmdEval(RunContext& ctx, const EvalOptions& opt);

struct ExplainOptions {
  fs::path data_dir;
  std::optional<fs::path> roi;
  fs::path ensemble;
  std::optional<int> k;
  std::vector<int> k_candidates;
  std::vector<std::string> splits{"val1", "val2"};
  long long fit_sample = 100000;
  int n_select = 10;
  int bootstrap = 9999;
};
void CmdExplain(RunContext& ctx, const ExplainOptions& opt);

// Re-runs a manifest's command into out_dir and compares output hashes.
// Returns the number of mismatched, missing or extra files.
int CmdReplay(const fs::path& manifest, const std::optional<fs::path>& out_dir);

// Parses and runs one command line (arguments after the program name);
// returns the process exit code.
int Run(const std::vector<std::string>& args);

}  // namespace survmil::cli
