#include <CLI11.hpp>

#include <algorithm>
#include <iostream>

#include "commands.hpp"
#include "survmil/error.hpp"
#include "survmil/io.hpp"

namespace survmil::cli {
namespace {

constexpr int kExitMismatch = 1;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

void AddDataFlags(CLI::App* cmd, fs::path& data_dir) {
  cmd->add_option("--data-dir", data_dir, "Directory written by `generate` (cohort.json, features/)")
      ->required();
}

}  // namespace

int Run(const std::vector<std::string>& args) {
  CLI::App app{"Weakly supervised survival modelling on patch features"};
  app.require_subcommand(1);
  app.fallthrough();

  RunContext ctx;
  ctx.argv = args;
  std::uint64_t seed = 0;
  fs::path config_path;
  app.add_option("--seed", seed, "Base seed");
  app.add_option("--out-dir", ctx.out_dir, "Output directory");
  app.add_option("--threads", ctx.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--config", config_path, "JSON config with generator/train/search_space/mask sections");

  GenerateOptions gen;
  auto* generate = app.add_subcommand("generate", "Synthesize a cohort with planted prognostic prototypes");
  generate->add_option("--cases", gen.cases);
  generate->add_option("--censor-rate", gen.censor_rate);
  generate->add_option("--prototypes", gen.prototypes);
  generate->add_option("--feature-dim", gen.feature_dim);
  generate->add_flag("--no-heatmaps", gen.no_heatmaps);

  MaskOptions mask;
  auto* mask_cmd = app.add_subcommand("mask", "Build ROI masks from tumor heatmaps");
  AddDataFlags(mask_cmd, mask.data_dir);
  auto* thr = mask_cmd->add_option("--threshold", mask.threshold);
  auto* rt = mask_cmd->add_option("--recall-target", mask.recall_target,
                                  "Pick the threshold whose tune recall is closest to this from below");
  thr->excludes(rt);
  mask_cmd->add_option("--dilation", mask.dilation, "Disk radius in superpixels");
  mask_cmd->add_option("--min-component", mask.min_component);
  mask_cmd->add_option("--connectivity", mask.connectivity, "4 or 8");
  mask_cmd->add_option("--report-thresholds", mask.report_thresholds)->delimiter(',');

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Train model replicas and build the ensemble");
  AddDataFlags(train_cmd, train.data_dir);
  train_cmd->add_option("--roi", train.roi, "roi_patches.json from `mask`");
  train_cmd->add_option("--models", train.models);
  train_cmd->add_option("--ensemble-k", train.ensemble_k);
  train_cmd->add_option("--steps", train.steps);
  train_cmd->add_option("--eval-every", train.eval_every);
  train_cmd->add_option("--batch-size", train.batch_size);
  train_cmd->add_option("--bag-size", train.bag_size);
  train_cmd->add_option("--learning-rate", train.learning_rate);
  train_cmd->add_option("--resume", train.resume, "Output directory of an earlier `train` run");

  SearchOptions search;
  auto* search_cmd = app.add_subcommand("search", "Hyperparameter search ranked by smoothed tune c-index");
  AddDataFlags(search_cmd, search.data_dir);
  search_cmd->add_option("--roi", search.roi);
  search_cmd->add_option("--configs", search.configs);
  search_cmd->add_flag("--exhaustive", search.exhaustive, "Enumerate the whole search space");
  search_cmd->add_option("--steps", search.steps);
  search_cmd->add_option("--eval-every", search.eval_every);

  EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "AUC, Cox, c-index and risk-group reports");
  AddDataFlags(eval_cmd, eval.data_dir);
  eval_cmd->add_option("--scores", eval.scores, "CSV with case_id and score columns")->required();
  eval_cmd->add_option("--splits", eval.splits)->delimiter(',');
  eval_cmd->add_option("--horizon", eval.horizon, "Months");
  eval_cmd->add_option("--bootstrap", eval.bootstrap);

  ExplainOptions explain;
  auto* explain_cmd = app.add_subcommand("explain", "Cluster quantitation and score regression");
  AddDataFlags(explain_cmd, explain.data_dir);
  explain_cmd->add_option("--roi", explain.roi);
  explain_cmd->add_option("--ensemble", explain.ensemble)->required();
  auto* k_opt = explain_cmd->add_option("--k", explain.k);
  explain_cmd->add_option("--k-candidates", explain.k_candidates)->delimiter(',')->excludes(k_opt);
  explain_cmd->add_option("--splits", explain.splits)->delimiter(',');
  explain_cmd->add_option("--fit-sample", explain.fit_sample);
  explain_cmd->add_option("--n-select", explain.n_select);
  explain_cmd->add_option("--bootstrap", explain.bootstrap);

  fs::path manifest_path;
  std::optional<fs::path> replay_out;
  auto* replay = app.add_subcommand("replay", "Re-run a command from its run_manifest.json and compare outputs");
  replay->add_option("manifest", manifest_path)->required();
  replay->add_option("--into", replay_out, "Directory for the re-run (default: <out_dir>_replay)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (replay->parsed()) {
      const int bad = CmdReplay(manifest_path, replay_out);
      return bad == 0 ? 0 : kExitMismatch;
    }
    if (app.count("--seed") > 0) ctx.seed = seed;
    if (!config_path.empty()) {
      ctx.config = io::ReadJson(config_path);
      if (!ctx.config.is_object()) throw ValidationError("--config must hold a JSON object");
    }
    fs::create_directories(ctx.out_dir);

    std::string name;
    if (generate->parsed()) {
      name = "generate";
      CmdGenerate(ctx, gen);
    } else if (mask_cmd->parsed()) {
      name = "mask";
      CmdMask(ctx, mask);
    } else if (train_cmd->parsed()) {
      name = "train";
      CmdTrain(ctx, train);
    } else if (search_cmd->parsed()) {
      name = "search";
      CmdSearch(ctx, search);
    } else if (eval_cmd->parsed()) {
      name = "eval";
      CmdEval(ctx, eval);
    } else {
      name = "explain";
      CmdExplain(ctx, explain);
    }
    if (!config_path.empty()) ctx.AddInput("config", config_path);
    WriteManifest(ctx, name);
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::kNumerical ? kExitNumerical : kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}

int CmdReplay(const fs::path& manifest_path, const std::optional<fs::path>& into) {
  const json manifest = io::ReadJson(manifest_path);
  std::vector<std::string> args = manifest.at("argv").get<std::vector<std::string>>();
  const fs::path original = manifest.at("out_dir").get<std::string>();
  const fs::path target = fs::absolute(into.value_or(fs::path(original.string() + "_replay")));
  if (fs::exists(target) && fs::equivalent(target, original)) {
    throw ValidationError("replay directory must differ from the recorded out_dir");
  }

  // Point --out-dir at the replay directory.
  bool replaced = false;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--out-dir" && i + 1 < args.size()) {
      args[i + 1] = target.string();
      replaced = true;
    } else if (args[i].rfind("--out-dir=", 0) == 0) {
      args[i] = "--out-dir=" + target.string();
      replaced = true;
    }
  }
  if (!replaced) {
    args.insert(args.begin(), target.string());
    args.insert(args.begin(), "--out-dir");
  }

  const fs::path here = fs::current_path();
  fs::current_path(manifest.at("cwd").get<std::string>());
  const int code = Run(args);
  fs::current_path(here);
  if (code != 0) {
    std::cerr << "replay: command exited with " << code << "\n";
    return 1;
  }

  const json expected = manifest.at("outputs");
  const json actual = HashTree(target);
  int bad = 0;
  for (const auto& [file, hash] : expected.items()) {
    if (!actual.contains(file)) {
      std::cout << "missing  " << file << "\n";
      ++bad;
    } else if (actual.at(file) != hash) {
      std::cout << "differs  " << file << "\n";
      ++bad;
    }
  }
  for (const auto& [file, hash] : actual.items()) {
    if (!expected.contains(file)) {
      std::cout << "extra    " << file << "\n";
      ++bad;
    }
  }
  std::cout << (bad == 0 ? "identical" : "mismatch") << ": " << expected.size() << " files compared\n";
  return bad;
}

}  // namespace survmil::cli

int main(int argc, char** argv) {
  return survmil::cli::Run(std::vector<std::string>(argv + 1, argv + argc));
}
