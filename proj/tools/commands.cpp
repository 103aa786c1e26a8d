#include "commands.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iostream>
#include <map>
#include <numeric>
#include <set>

#include "survmil/cohort.hpp"
#include "survmil/error.hpp"
#include "survmil/explainer.hpp"
#include "survmil/io.hpp"
#include "survmil/mil.hpp"
#include "survmil/roi_mask.hpp"
#include "survmil/survival.hpp"
#include "survmil/synth.hpp"

namespace survmil::cli {
namespace {

using io::CsvWriter;
using RoiMap = std::map<std::string, std::vector<PatchCoord>>;

struct Dataset {
  fs::path dir;
  std::vector<CohortEntry> cohort;
};

Dataset LoadDataset(RunContext& ctx, const fs::path& dir) {
  Dataset ds;
  ds.dir = dir;
  ds.cohort = io::ReadCohort(dir / "cohort.json");
  ctx.AddInput("cohort", dir / "cohort.json");
  return ds;
}

RoiMap ReadRoi(const fs::path& path) {
  const json j = io::ReadJson(path);
  RoiMap roi;
  for (const auto& [slide, coords] : j.items()) {
    auto& v = roi[slide];
    for (const auto& c : coords) v.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
  }
  return roi;
}

void WriteRoi(const fs::path& path, const RoiMap& roi) {
  json j = json::object();
  for (const auto& [slide, coords] : roi) {
    json arr = json::array();
    for (const auto& c : coords) arr.push_back({c.x, c.y});
    j[slide] = arr;
  }
  io::WriteJson(path, j);
}

CaseBag Gate(const CaseBag& bag, const std::optional<RoiMap>& roi) {
  if (!roi) return bag;
  std::vector<std::vector<PatchCoord>> included;
  for (const auto& s : bag.slides) {
    auto it = roi->find(s.slide_id);
    included.push_back(it == roi->end() ? std::vector<PatchCoord>{} : it->second);
  }
  return GateBag(bag, included);
}

struct LoadedSplit {
  CaseSet cases;
  std::vector<std::size_t> cohort_index;  // aligned with cases
  std::size_t dropped = 0;                // cases with no gated patches
};

LoadedSplit LoadSplit(const Dataset& ds, const std::string& split,
                      const std::optional<RoiMap>& roi) {
  const auto idx = SplitIndices(ds.cohort, split);
  if (idx.empty()) throw ValidationError("split '" + split + "' has no cases");
  std::vector<std::string> ids;
  for (auto i : idx) ids.push_back(ds.cohort[i].record.case_id);
  auto bags = io::ReadBags(ds.dir / "features", ids);
  LoadedSplit out;
  for (std::size_t j = 0; j < bags.size(); ++j) {
    CaseBag gated = Gate(bags[j], roi);
    if (gated.PatchCount() == 0) {
      ++out.dropped;
      continue;
    }
    out.cases.bags.push_back(std::move(gated));
    out.cases.records.push_back(ds.cohort[idx[j]].record);
    out.cohort_index.push_back(idx[j]);
  }
  if (out.dropped > 0) {
    std::cerr << "note: " << out.dropped << " " << split << " case(s) have no ROI patches\n";
  }
  return out;
}

std::optional<RoiMap> LoadRoi(RunContext& ctx, const std::optional<fs::path>& path) {
  if (!path) return std::nullopt;
  ctx.AddInput("roi", *path);
  return ReadRoi(*path);
}

TrainConfig ResolveTrainConfig(const RunContext& ctx, std::optional<long long> steps,
                               std::optional<int> eval_every, std::optional<int> batch_size,
                               std::optional<int> bag_size, std::optional<double> lr) {
  TrainConfig c = io::TrainConfigFromJson(ctx.Section("train"));
  if (steps) c.total_steps = *steps;
  if (eval_every) c.eval_every = *eval_every;
  if (batch_size) c.batch_size = *batch_size;
  if (bag_size) c.bag_size = *bag_size;
  if (lr) c.schedule.initial = *lr;
  c.seed = ctx.SeedOr(c.seed);
  c.Validate();
  return c;
}

// Checkpoint selection needs a full rolling window of evaluations.
void RequireWindow(const TrainConfig& c, std::int64_t start_step) {
  const std::int64_t evals = c.total_steps / c.eval_every - start_step / c.eval_every;
  if (evals < c.rolling_window) {
    throw ValidationError("training would produce " + std::to_string(evals) +
                          " evaluations; checkpoint selection needs rolling_window = " +
                          std::to_string(c.rolling_window));
  }
}

void MaybeNan(CsvWriter& w, const std::optional<double>& v) { w.AddOptional(v); }

}  // namespace

// ---------------------------------------------------------------------------

void CmdGenerate(RunContext& ctx, const GenerateOptions& opt) {
  GeneratorConfig cfg = io::GeneratorConfigFromJson(ctx.Section("generator"));
  if (opt.cases) cfg.n_cases = *opt.cases;
  if (opt.censor_rate) cfg.censor_rate = *opt.censor_rate;
  if (opt.feature_dim) cfg.feature_dim = *opt.feature_dim;
  if (opt.prototypes) {
    cfg.n_prototypes = *opt.prototypes;
    cfg.prototype_risk_betas.resize(static_cast<std::size_t>(std::max(*opt.prototypes, 0)), 0.0);
  }
  if (opt.no_heatmaps) cfg.heatmaps = false;
  cfg.seed = ctx.SeedOr(cfg.seed);
  cfg.Validate();
  ctx.resolved_config = {{"generator", io::ToJson(cfg)}};
  ctx.seeds = {{"generator", cfg.seed}};

  const SyntheticCohort syn = Generate(cfg);
  const fs::path& out = ctx.out_dir;
  io::WriteJson(out / "generator_config.json", io::ToJson(cfg));
  io::WriteCohort(out / "cohort.json", syn.cohort);
  io::WriteBags(out / "features", syn.bags);
  io::WriteJson(out / "ground_truth.json", io::GroundTruthToJson(syn.truth));
  if (cfg.heatmaps) {
    for (std::size_t c = 0; c < syn.bags.size(); ++c) {
      for (std::size_t s = 0; s < syn.bags[c].slides.size(); ++s) {
        const std::string& id = syn.bags[c].slides[s].slide_id;
        io::WriteHeatmap(out / "heatmaps" / id, syn.heatmaps[c][s]);
        io::WriteMask(out / "truth_masks" / id, syn.truth_masks[c][s]);
      }
    }
  }
  const auto oracle = OracleScores(syn.truth);
  CsvWriter w(out / "oracle_scores.csv", {"case_id", "split", "score"});
  for (std::size_t i = 0; i < syn.cohort.size(); ++i) {
    w.Add(syn.cohort[i].record.case_id).Add(syn.cohort[i].split).Add(oracle[i]);
    w.EndRow();
  }
}

// ---------------------------------------------------------------------------

void CmdMask(RunContext& ctx, const MaskOptions& opt) {
  MaskParams params = io::MaskParamsFromJson(ctx.Section("mask"));
  if (opt.threshold) params.threshold = *opt.threshold;
  if (opt.dilation) params.dilation_radius = *opt.dilation;
  if (opt.min_component) params.min_component = *opt.min_component;
  if (opt.connectivity) {
    if (*opt.connectivity != 4 && *opt.connectivity != 8) {
      throw ValidationError("--connectivity must be 4 or 8");
    }
    params.connectivity = *opt.connectivity == 4 ? Connectivity::kFour : Connectivity::kEight;
  }
  if (params.dilation_radius < 0) throw ValidationError("--dilation must be >= 0");

  Dataset ds = LoadDataset(ctx, opt.data_dir);
  const auto index = io::ReadSlideIndex(opt.data_dir / "features");
  ctx.AddInput("heatmaps", opt.data_dir / "heatmaps");
  const fs::path truth_dir = opt.data_dir / "truth_masks";

  struct SlideInput {
    std::string slide_id;
    std::string split;
    HeatmapGrid heatmap;
    std::optional<RoiMaskGrid> truth;
  };
  std::vector<SlideInput> slides;
  for (const auto& e : ds.cohort) {
    auto it = index.find(e.record.case_id);
    if (it == index.end()) throw ValidationError("no slides for case " + e.record.case_id);
    for (const auto& id : it->second) {
      SlideInput s{id, e.split, io::ReadHeatmap(opt.data_dir / "heatmaps" / id), std::nullopt};
      if (fs::exists(truth_dir / (id + ".json"))) s.truth = io::ReadMask(truth_dir / id);
      slides.push_back(std::move(s));
    }
  }
  const bool any_truth = std::any_of(slides.begin(), slides.end(),
                                     [](const SlideInput& s) { return s.truth.has_value(); });
  if (any_truth) ctx.AddInput("truth_masks", truth_dir);

  auto split_metrics = [&](const std::string& split, double threshold) -> std::optional<SegMetrics> {
    std::vector<RoiMaskGrid> preds, truths;
    MaskParams p = params;
    p.threshold = threshold;
    for (const auto& s : slides) {
      if (s.split != split || !s.truth) continue;
      preds.push_back(BuildMask(s.heatmap, p));
      truths.push_back(*s.truth);
    }
    if (preds.empty()) return std::nullopt;
    try {
      return PooledSegmentationMetrics(preds, truths);
    } catch (const Error&) {
      return std::nullopt;
    }
  };

  if (opt.recall_target) {
    const double target = *opt.recall_target;
    if (!(target > 0.0 && target <= 1.0)) throw ValidationError("--recall-target must be in (0, 1]");
    const bool tune_truth = std::all_of(slides.begin(), slides.end(), [](const SlideInput& s) {
      return s.split != "tune" || s.truth.has_value();
    });
    const bool has_tune = std::any_of(slides.begin(), slides.end(),
                                      [](const SlideInput& s) { return s.split == "tune"; });
    if (!has_tune || !tune_truth) {
      throw ValidationError("--recall-target needs truth masks for every tune slide");
    }
    CsvWriter grid(ctx.out_dir / "threshold_search.csv",
                   {"threshold", "tune_recall", "tune_precision", "tune_iou"});
    std::optional<double> best_threshold;
    double best_recall = -1.0;
    for (int step = 1; step <= 99; ++step) {
      const double t = step / 100.0;
      const auto m = split_metrics("tune", t);
      grid.Add(t);
      if (m) {
        grid.Add(m->recall).Add(m->precision).Add(m->iou);
        if (m->recall <= target && m->recall >= best_recall) {
          best_recall = m->recall;
          best_threshold = t;
        }
      } else {
        grid.Add("").Add("").Add("");
      }
      grid.EndRow();
    }
    if (!best_threshold) {
      throw ValidationError("no threshold gives tune recall at or below the target");
    }
    params.threshold = *best_threshold;
  }
  if (!(params.threshold > 0.0 && params.threshold < 1.0)) {
    throw ValidationError("threshold must be in (0, 1)");
  }
  ctx.resolved_config = {{"mask", io::ToJson(params)},
                         {"recall_target", opt.recall_target ? json(*opt.recall_target) : json()},
                         {"report_thresholds", opt.report_thresholds}};

  RoiMap roi;
  for (const auto& s : slides) {
    const RoiMaskGrid m = BuildMask(s.heatmap, params);
    io::WriteMask(ctx.out_dir / "masks" / s.slide_id, m, s.heatmap.superpixel_um);
    roi[s.slide_id] = PatchInclusion(m);
  }
  WriteRoi(ctx.out_dir / "roi_patches.json", roi);
  io::WriteJson(ctx.out_dir / "mask_params.json", io::ToJson(params));

  std::set<double> thresholds(opt.report_thresholds.begin(), opt.report_thresholds.end());
  thresholds.insert(params.threshold);
  CsvWriter w(ctx.out_dir / "mask_metrics.csv",
              {"threshold", "selected", "split", "recall", "precision", "iou", "true_positive",
               "false_positive", "false_negative"});
  if (!any_truth) return;
  for (double t : thresholds) {
    if (!(t > 0.0 && t < 1.0)) throw ValidationError("report thresholds must be in (0, 1)");
    for (const char* split : kSplits) {
      const auto m = split_metrics(split, t);
      if (!m) continue;
      w.Add(t).Add(t == params.threshold ? "yes" : "no").Add(split);
      w.Add(m->recall).Add(m->precision).Add(m->iou);
      w.Add(m->true_positive).Add(m->false_positive).Add(m->false_negative);
      w.EndRow();
    }
  }
}

// ---------------------------------------------------------------------------

void CmdTrain(RunContext& ctx, const TrainOptions& opt) {
  if (opt.models < 1) throw ValidationError("--models must be >= 1");
  if (opt.ensemble_k < 1 || opt.ensemble_k > opt.models) {
    throw ValidationError("--ensemble-k must be in [1, models]");
  }
  const TrainConfig base = ResolveTrainConfig(ctx, opt.steps, opt.eval_every, opt.batch_size,
                                              opt.bag_size, opt.learning_rate);
  Dataset ds = LoadDataset(ctx, opt.data_dir);
  ctx.AddInput("features", opt.data_dir / "features");
  const auto roi = LoadRoi(ctx, opt.roi);
  const LoadedSplit train = LoadSplit(ds, "train", roi);
  const LoadedSplit tune = LoadSplit(ds, "tune", roi);

  const auto m = static_cast<std::size_t>(opt.models);
  RequireWindow(base, 0);
  std::vector<TrainConfig> configs(m, base);
  std::vector<std::optional<TrainState>> resume(m);
  json replica_seeds = json::array();
  for (std::size_t r = 0; r < m; ++r) {
    configs[r].seed = DeriveSeed(base.seed, r);
    replica_seeds.push_back(configs[r].seed);
    if (opt.resume) {
      const fs::path snap_path = *opt.resume / "models" / ("replica_" + std::to_string(r) + ".smil");
      io::Snapshot snap = io::ReadSnapshot(snap_path);
      ctx.AddInput("resume_replica_" + std::to_string(r), snap_path);
      if (!snap.has_optimizer_state) throw ValidationError(snap_path.string() + ": no optimizer state");
      if (snap.state.step >= base.total_steps) {
        throw ValidationError("--steps must exceed the resumed step " + std::to_string(snap.state.step));
      }
      RequireWindow(base, snap.state.step);
      resume[r] = std::move(snap.state);
    }
  }
  ctx.resolved_config = {{"train", io::ToJson(base)},
                         {"models", opt.models},
                         {"ensemble_k", opt.ensemble_k},
                         {"resume", opt.resume ? json(opt.resume->generic_string()) : json()}};
  ctx.seeds = {{"base", base.seed}, {"replicas", replica_seeds}, {"eval", base.eval_seed}};

  std::vector<TrainResult> results(m);
  ParallelFor(m, ctx.threads, [&](std::size_t r) {
    results[r] = Train(train.cases, tune.cases, configs[r], resume[r]);
  });

  std::vector<ScoredModel> candidates;
  CsvWriter log(ctx.out_dir / "training_log.csv",
                {"replica", "step", "loss", "tune_cindex", "smoothed_tune_cindex"});
  CsvWriter sel(ctx.out_dir / "selection.csv",
                {"replica", "selected_step", "tune_cindex", "smoothed_tune_cindex"});
  for (std::size_t r = 0; r < m; ++r) {
    for (const auto& row : results[r].log) {
      log.Add(r).Add(row.step).Add(row.loss).Add(row.tune_cindex);
      MaybeNan(log, row.smoothed);
      log.EndRow();
    }
    const Checkpoint& best = SelectCheckpoint(results[r].checkpoints, base.rolling_window);
    sel.Add(r).Add(best.step).Add(best.tune_metric);
    MaybeNan(sel, best.smoothed_metric);
    sel.EndRow();

    const std::string stem = "replica_" + std::to_string(r);
    io::WriteSnapshot(ctx.out_dir / "models" / (stem + ".smil"),
                      {results[r].final_state, configs[r],
                       results[r].log.empty() ? 0.0 : results[r].log.back().tune_cindex, true});
    TrainState selected;
    selected.model = best.model;
    selected.step = best.step;
    io::WriteSnapshot(ctx.out_dir / "models" / (stem + "_selected.smil"),
                      {selected, configs[r], best.tune_metric, false});

    auto scores = ScoreForEvaluation(best.model, tune.cases, base.eval_patches_per_case, base.eval_seed);
    const double c = ConcordanceIndex(scores, tune.cases.records);
    candidates.push_back({best.model, c, std::move(scores)});
  }
  const Ensemble ensemble = EnsembleTop(candidates, opt.ensemble_k);
  io::WriteEnsemble(ctx.out_dir / "ensemble.json", ensemble);

  CsvWriter w(ctx.out_dir / "case_scores.csv", {"case_id", "split", "score"});
  for (const char* split : kSplits) {
    if (SplitIndices(ds.cohort, split).empty()) continue;
    const LoadedSplit s = std::string(split) == "train" ? train
                          : std::string(split) == "tune" ? tune
                                                         : LoadSplit(ds, split, roi);
    for (std::size_t i = 0; i < s.cases.bags.size(); ++i) {
      w.Add(s.cases.records[i].case_id).Add(split).Add(InferCase(ensemble, s.cases.bags[i]).case_score);
      w.EndRow();
    }
  }
}

// ---------------------------------------------------------------------------

void CmdSearch(RunContext& ctx, const SearchOptions& opt) {
  const TrainConfig base =
      ResolveTrainConfig(ctx, opt.steps, opt.eval_every, std::nullopt, std::nullopt, std::nullopt);
  RequireWindow(base, 0);
  const SearchSpace space = io::SearchSpaceFromJson(ctx.Section("search_space"));
  Dataset ds = LoadDataset(ctx, opt.data_dir);
  ctx.AddInput("features", opt.data_dir / "features");
  const auto roi = LoadRoi(ctx, opt.roi);
  const LoadedSplit train = LoadSplit(ds, "train", roi);
  const LoadedSplit tune = LoadSplit(ds, "tune", roi);
  ctx.resolved_config = {{"train", io::ToJson(base)},
                         {"search_space", io::ToJson(space)},
                         {"configs", opt.configs},
                         {"exhaustive", opt.exhaustive}};
  ctx.seeds = {{"search", base.seed}, {"init", base.seed}};

  const auto entries = HyperparamSearch(train.cases, tune.cases, base, space, opt.configs, base.seed,
                                        opt.exhaustive, ctx.threads);
  CsvWriter w(ctx.out_dir / "search_ranking.csv",
              {"rank", "config_index", "status", "best_smoothed_tune_cindex", "selected_step",
               "layers", "base_width", "growth", "max_width", "l2_weight", "learning_rate",
               "decay_steps", "decay_rate", "reason"});
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    w.Add(i + 1).Add(e.config_index).Add(e.failed ? "failed" : "ok");
    if (e.failed) {
      w.Add("").Add("");
    } else {
      w.Add(e.best_smoothed).Add(e.selected->step);
    }
    w.Add(e.config.encoder.layers).Add(e.config.encoder.base_width).Add(e.config.encoder.growth);
    w.Add(e.config.encoder.max_width).Add(e.config.l2_weight).Add(e.config.schedule.initial);
    w.Add(e.config.schedule.decay_steps).Add(e.config.schedule.decay_rate).Add(e.reason);
    w.EndRow();
  }
}

// ---------------------------------------------------------------------------

namespace {

struct ScoredSplit {
  std::string name;
  std::vector<SurvivalRecord> records;
  std::vector<double> scores;
  std::vector<RawCovariates> covariates;
  std::size_t missing = 0;
};

std::map<std::string, double> ReadScores(const fs::path& path) {
  const auto rows = io::ReadCsv(path);
  if (rows.empty()) throw ValidationError(path.string() + ": empty score table");
  const auto& header = rows.front();
  const auto id_col = std::find(header.begin(), header.end(), "case_id");
  const auto score_col = std::find(header.begin(), header.end(), "score");
  if (id_col == header.end() || score_col == header.end()) {
    throw ValidationError(path.string() + ": needs case_id and score columns");
  }
  const auto ic = static_cast<std::size_t>(id_col - header.begin());
  const auto sc = static_cast<std::size_t>(score_col - header.begin());
  std::map<std::string, double> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() <= std::max(ic, sc)) throw ValidationError(path.string() + ": short row");
    const std::string& cell = rows[r][sc];
    double v = 0.0;
    const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(v)) {
      throw ValidationError(path.string() + ": bad score '" + cell + "'");
    }
    if (!out.emplace(rows[r][ic], v).second) {
      throw ValidationError(path.string() + ": duplicate case " + rows[r][ic]);
    }
  }
  return out;
}

ScoredSplit CollectSplit(const std::vector<CohortEntry>& cohort,
                         const std::map<std::string, double>& scores, const std::string& split) {
  ScoredSplit s;
  s.name = split;
  const auto idx = SplitIndices(cohort, split);
  if (idx.empty()) throw ValidationError("split '" + split + "' has no cases");
  for (auto i : idx) {
    auto it = scores.find(cohort[i].record.case_id);
    if (it == scores.end()) {
      ++s.missing;
      continue;
    }
    s.records.push_back(cohort[i].record);
    s.scores.push_back(it->second);
    s.covariates.push_back(cohort[i].covariates);
  }
  if (s.records.empty()) throw ValidationError("split '" + split + "' has no scored cases");
  if (s.missing > 0) std::cerr << "note: " << s.missing << " " << split << " case(s) have no score\n";
  return s;
}

CovariateKind KindFor(const std::string& name, const json& overrides) {
  if (overrides.contains(name)) {
    const std::string k = overrides.at(name).get<std::string>();
    if (k == "numeric") return CovariateKind::kNumeric;
    if (k == "categorical") return CovariateKind::kCategorical;
    if (k == "age_decade") return CovariateKind::kAgeDecade;
    if (k == "standardized") return CovariateKind::kStandardized;
    throw ValidationError("unknown covariate coding '" + k + "'");
  }
  if (name == "age") return CovariateKind::kAgeDecade;
  if (name == "sex" || name == "stage") return CovariateKind::kCategorical;
  return CovariateKind::kNumeric;
}

std::vector<CovariateSpec> ClinicoSpecs(const std::vector<CohortEntry>& cohort, const json& overrides) {
  std::set<std::string> names;
  for (const auto& e : cohort) {
    for (const auto& [k, v] : e.covariates) names.insert(k);
  }
  std::vector<CovariateSpec> specs;
  for (const auto& n : names) specs.push_back({n, KindFor(n, overrides)});
  return specs;
}

template <typename T>
std::vector<T> Pick(const std::vector<T>& v, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

void WriteCoxRows(CsvWriter& w, const std::string& split, const std::string& model, const CoxFit& fit) {
  for (Eigen::Index j = 0; j < fit.coefficients.size(); ++j) {
    const auto [lo, hi] = fit.HazardRatioCi(j);
    w.Add(split).Add(model).Add(fit.names[static_cast<std::size_t>(j)]);
    w.Add(fit.coefficients(j)).Add(fit.HazardRatio(j)).Add(lo).Add(hi).Add(fit.WaldP(j));
    w.EndRow();
  }
}

}  // namespace

void CmdEval(RunContext& ctx, const EvalOptions& opt) {
  if (opt.splits.empty()) throw ValidationError("--splits must name at least one split");
  if (opt.bootstrap < 1) throw ValidationError("--bootstrap must be >= 1");
  Dataset ds = LoadDataset(ctx, opt.data_dir);
  ctx.AddInput("scores", opt.scores);
  const auto score_map = ReadScores(opt.scores);
  const std::uint64_t seed = ctx.SeedOr(0);
  const json coding = ctx.Section("covariates");
  const auto specs = ClinicoSpecs(ds.cohort, coding);
  ctx.resolved_config = {{"splits", opt.splits},
                         {"horizon_months", opt.horizon},
                         {"bootstrap", opt.bootstrap},
                         {"covariates", coding}};
  ctx.seeds = {{"bootstrap", seed}};

  const ScoredSplit tune = CollectSplit(ds.cohort, score_map, "tune");
  std::vector<ScoredSplit> evals;
  for (const auto& s : opt.splits) evals.push_back(CollectSplit(ds.cohort, score_map, s));

  // DLS enters Cox models standardized with tune statistics.
  double tune_mean = 0.0, tune_sd = 0.0;
  {
    for (double v : tune.scores) tune_mean += v;
    tune_mean /= static_cast<double>(tune.scores.size());
    for (double v : tune.scores) tune_sd += (v - tune_mean) * (v - tune_mean);
    tune_sd = tune.scores.size() > 1 ? std::sqrt(tune_sd / static_cast<double>(tune.scores.size() - 1)) : 0.0;
    if (!(tune_sd > 0.0)) throw ValidationError("tune scores are constant");
  }
  auto with_dls = [&](const ScoredSplit& s) {
    std::vector<RawCovariates> raw = s.covariates;
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i]["dls"] = (s.scores[i] - tune_mean) / tune_sd;
    return raw;
  };
  std::vector<CovariateSpec> dls_specs{{"dls", CovariateKind::kNumeric}};
  std::vector<CovariateSpec> all_specs = dls_specs;
  all_specs.insert(all_specs.end(), specs.begin(), specs.end());

  // Horizon AUC per split.
  {
    CsvWriter w(ctx.out_dir / "auc_by_split.csv",
                {"split", "cases", "positives", "negatives", "auc", "ci_lower", "ci_upper"});
    std::vector<const ScoredSplit*> all{&tune};
    for (const auto& s : evals) all.push_back(&s);
    for (std::size_t k = 0; k < all.size(); ++k) {
      const ScoredSplit& s = *all[k];
      std::size_t pos = 0, neg = 0;
      for (const auto& r : s.records) {
        if (r.event && r.time_months <= opt.horizon) {
          ++pos;
        } else if (r.time_months >= opt.horizon) {
          ++neg;
        }
      }
      w.Add(s.name).Add(s.records.size()).Add(pos).Add(neg);
      try {
        const double auc = AucAtHorizon(s.scores, s.records, opt.horizon);
        const auto ci = BootstrapCi(
            s.records.size(), SkipOnError([&](std::span<const std::size_t> idx) {
              return AucAtHorizon(Pick(s.scores, idx), Pick(s.records, idx), opt.horizon);
            }),
            opt.bootstrap, DeriveSeed(seed, 1, k), ctx.threads);
        w.Add(auc).Add(ci.lower).Add(ci.upper);
      } catch (const Error& e) {
        std::cerr << "note: AUC for " << s.name << ": " << e.what() << "\n";
        w.Add("").Add("").Add("");
      }
      w.EndRow();
    }
  }

  // Cox hazard ratios on each evaluation split.
  {
    const std::vector<std::string> header{"split", "model", "variable", "coefficient",
                                          "hazard_ratio", "ci_lower", "ci_upper", "p_value"};
    CsvWriter uni(ctx.out_dir / "cox_univariable.csv", header);
    CsvWriter multi(ctx.out_dir / "cox_multivariable.csv", header);
    for (const auto& s : evals) {
      const auto raw = with_dls(s);
      for (const auto& spec : all_specs) {
        const std::vector<CovariateSpec> one{spec};
        WriteCoxRows(uni, s.name, "univariable", FitCox(s.records, EncodeCovariates(raw, one)));
      }
      WriteCoxRows(multi, s.name, "multivariable", FitCox(s.records, EncodeCovariates(raw, all_specs)));
    }
  }

  // Concordance of DLS, clinicopathologic and combined Cox models fit on tune.
  {
    CsvWriter cw(ctx.out_dir / "cindex.csv", {"split", "model", "cindex", "ci_lower", "ci_upper"});
    CsvWriter dw(ctx.out_dir / "cindex_deltas.csv",
                 {"split", "comparison", "delta", "ci_lower", "ci_upper"});
    const auto tune_raw = with_dls(tune);
    for (std::size_t k = 0; k < evals.size(); ++k) {
      const ScoredSplit& s = evals[k];
      std::vector<RawCovariates> joint = tune_raw;
      const auto split_raw = with_dls(s);
      joint.insert(joint.end(), split_raw.begin(), split_raw.end());
      std::vector<std::size_t> tune_rows(tune.records.size()), split_rows(s.records.size());
      std::iota(tune_rows.begin(), tune_rows.end(), 0);
      std::iota(split_rows.begin(), split_rows.end(), tune.records.size());

      auto predict = [&](const std::vector<CovariateSpec>& sp) {
        const CovariateMatrix x = EncodeCovariates(joint, sp);
        const CoxFit fit = FitCox(tune.records, x.SelectRows(tune_rows));
        const Eigen::VectorXd lp = fit.LinearPredictor(x.SelectRows(split_rows).values);
        return std::vector<double>(lp.data(), lp.data() + lp.size());
      };
      const std::vector<std::pair<std::string, std::vector<double>>> models{
          {"dls", s.scores}, {"clinicopathologic", predict(specs)}, {"clinicopathologic+dls", predict(all_specs)}};
      auto metric_of = [&](const std::vector<double>& sc) {
        return SkipOnError([&s, &sc](std::span<const std::size_t> idx) {
          return ConcordanceIndex(Pick(sc, idx), Pick(s.records, idx));
        });
      };
      for (std::size_t m = 0; m < models.size(); ++m) {
        const auto ci = BootstrapCi(s.records.size(), metric_of(models[m].second), opt.bootstrap,
                                    DeriveSeed(seed, 2, k), ctx.threads);
        cw.Add(s.name).Add(models[m].first).Add(ConcordanceIndex(models[m].second, s.records));
        cw.Add(ci.lower).Add(ci.upper);
        cw.EndRow();
      }
      const std::pair<std::size_t, std::size_t> comparisons[] = {{2, 1}, {0, 1}};
      for (const auto& [a, b] : comparisons) {
        const double delta = ConcordanceIndex(models[a].second, s.records) -
                             ConcordanceIndex(models[b].second, s.records);
        const auto ci = PairedBootstrapDeltaCi(s.records.size(), metric_of(models[a].second),
                                               metric_of(models[b].second), opt.bootstrap,
                                               DeriveSeed(seed, 3, k), ctx.threads);
        dw.Add(s.name).Add(models[a].first + " - " + models[b].first).Add(delta);
        dw.Add(ci.lower).Add(ci.upper);
        dw.EndRow();
      }
    }
  }

  // Risk groups from tune quartiles, KM curve data and log-rank.
  {
    const RiskThresholds cuts = ThresholdsFromTune(tune.scores);
    CsvWriter km(ctx.out_dir / "km_curves.csv",
                 {"split", "group", "time_months", "survival", "ci_lower", "ci_upper", "at_risk",
                  "events", "censored"});
    CsvWriter groups(ctx.out_dir / "risk_groups.csv",
                     {"split", "group", "cases", "events", "survival_at_horizon", "low_cut",
                      "high_cut"});
    CsvWriter lr(ctx.out_dir / "logrank.csv",
                 {"split", "comparison", "chi2", "p_value", "observed_a", "expected_a"});
    for (const auto& s : evals) {
      const auto g = StratifyRisk(s.scores, cuts);
      std::map<RiskGroup, std::vector<SurvivalRecord>> by_group;
      for (std::size_t i = 0; i < g.size(); ++i) by_group[g[i]].push_back(s.records[i]);
      for (RiskGroup grp : {RiskGroup::kLow, RiskGroup::kMedium, RiskGroup::kHigh}) {
        const auto& recs = by_group[grp];
        std::size_t events = 0;
        for (const auto& r : recs) events += r.event ? 1 : 0;
        groups.Add(s.name).Add(RiskGroupName(grp)).Add(recs.size()).Add(events);
        if (recs.empty()) {
          groups.Add("");
        } else {
          const KmCurve curve = KaplanMeier(recs);
          groups.Add(curve.SurvivalAt(opt.horizon));
          for (std::size_t t = 0; t < curve.times.size(); ++t) {
            km.Add(s.name).Add(RiskGroupName(grp)).Add(curve.times[t]).Add(curve.survival[t]);
            km.Add(curve.ci_lower[t]).Add(curve.ci_upper[t]).Add(curve.at_risk[t]);
            km.Add(curve.events[t]).Add(curve.censored[t]);
            km.EndRow();
          }
        }
        groups.Add(cuts.low_cut).Add(cuts.high_cut);
        groups.EndRow();
      }
      lr.Add(s.name).Add("low vs high");
      try {
        const auto res = LogRankTest(by_group[RiskGroup::kLow], by_group[RiskGroup::kHigh]);
        lr.Add(res.chi2).Add(res.p_value).Add(res.observed_a).Add(res.expected_a);
      } catch (const Error& e) {
        std::cerr << "note: log-rank for " << s.name << ": " << e.what() << "\n";
        lr.Add("").Add("").Add("").Add("");
      }
      lr.EndRow();
    }
  }
}

// ---------------------------------------------------------------------------

void CmdExplain(RunContext& ctx, const ExplainOptions& opt) {
  if (opt.fit_sample < 1) throw ValidationError("--fit-sample must be >= 1");
  if (opt.n_select < 1) throw ValidationError("--n-select must be >= 1");
  if (opt.splits.empty()) throw ValidationError("--splits must name at least one split");
  Dataset ds = LoadDataset(ctx, opt.data_dir);
  ctx.AddInput("features", opt.data_dir / "features");
  ctx.AddInput("ensemble", opt.ensemble);
  const auto roi = LoadRoi(ctx, opt.roi);
  const Ensemble ensemble = io::ReadEnsemble(opt.ensemble);
  const std::uint64_t seed = ctx.SeedOr(0);
  const json coding = ctx.Section("covariates");
  const auto specs = ClinicoSpecs(ds.cohort, coding);

  const LoadedSplit train = LoadSplit(ds, "train", roi);
  const LoadedSplit tune = LoadSplit(ds, "tune", roi);
  std::vector<LoadedSplit> evals;
  for (const auto& s : opt.splits) evals.push_back(LoadSplit(ds, s, roi));

  // Cluster fit on a sample of training patch features.
  Eigen::MatrixXd fit_points;
  {
    std::vector<Eigen::MatrixXd> blocks;
    Eigen::Index total = 0;
    for (const auto& b : train.cases.bags) {
      blocks.push_back(b.AllPatches());
      total += blocks.back().rows();
    }
    Eigen::MatrixXd all(total, train.cases.bags.front().feature_dim);
    Eigen::Index row = 0;
    for (const auto& b : blocks) {
      all.middleRows(row, b.rows()) = b;
      row += b.rows();
    }
    if (total <= opt.fit_sample) {
      fit_points = std::move(all);
    } else {
      Rng rng(DeriveSeed(seed, 2));
      std::vector<Eigen::Index> idx(static_cast<std::size_t>(total));
      std::iota(idx.begin(), idx.end(), 0);
      for (std::size_t i = 0; i < static_cast<std::size_t>(opt.fit_sample); ++i) {
        std::swap(idx[i], idx[i + UniformIndex(rng, idx.size() - i)]);
      }
      idx.resize(static_cast<std::size_t>(opt.fit_sample));
      std::sort(idx.begin(), idx.end());
      fit_points.resize(static_cast<Eigen::Index>(idx.size()), all.cols());
      for (std::size_t i = 0; i < idx.size(); ++i) fit_points.row(static_cast<Eigen::Index>(i)) = all.row(idx[i]);
    }
  }

  auto case_scores = [&](const LoadedSplit& s) {
    std::vector<CaseInference> out;
    for (const auto& b : s.cases.bags) out.push_back(InferCase(ensemble, b));
    return out;
  };
  const auto tune_inf = case_scores(tune);
  std::vector<double> tune_scores;
  for (const auto& c : tune_inf) tune_scores.push_back(c.case_score);

  int k = opt.k.value_or(10);
  if (!opt.k_candidates.empty()) {
    SelectKInput in;
    in.fit_embeddings = &fit_points;
    for (const auto& b : tune.cases.bags) in.tune_case_patches.push_back(b.AllPatches());
    in.tune_scores = tune_scores;
    in.n_select = opt.n_select;
    const SelectKResult sk = SelectK(opt.k_candidates, in, DeriveSeed(seed, 1));
    k = sk.k;
    CsvWriter w(ctx.out_dir / "select_k.csv", {"k", "tune_adjusted_r2", "selected"});
    for (const auto& [cand, r2] : sk.adjusted_r2_by_k) {
      w.Add(cand).Add(r2).Add(cand == k ? "yes" : "no");
      w.EndRow();
    }
  }
  if (k < 1) throw ValidationError("--k must be >= 1");
  ctx.resolved_config = {{"k", k},
                         {"k_candidates", opt.k_candidates},
                         {"splits", opt.splits},
                         {"fit_sample", opt.fit_sample},
                         {"n_select", opt.n_select},
                         {"bootstrap", opt.bootstrap},
                         {"covariates", coding}};
  ctx.seeds = {{"base", seed},
               {"kmeans", DeriveSeed(seed, 1)},
               {"fit_sample", DeriveSeed(seed, 2)},
               {"bootstrap", DeriveSeed(seed, 3)}};

  const ClusterModel clusters = KMeansFit(fit_points, k, DeriveSeed(seed, 1));
  io::WriteClusterModel(ctx.out_dir / "cluster_model", clusters);

  auto quantitate = [&](const LoadedSplit& s) {
    std::vector<std::vector<double>> q;
    for (const auto& b : s.cases.bags) q.push_back(Quantitate(AssignClusters(clusters, b.AllPatches()), k));
    return q;
  };
  const auto tune_q = quantitate(tune);
  std::vector<std::vector<std::vector<double>>> eval_q;
  std::vector<std::vector<CaseInference>> eval_inf;
  for (const auto& s : evals) {
    eval_q.push_back(quantitate(s));
    eval_inf.push_back(case_scores(s));
  }

  {
    std::vector<std::string> header{"case_id", "split"};
    for (int j = 0; j < k; ++j) header.push_back("cluster_" + std::to_string(j));
    CsvWriter w(ctx.out_dir / "quantitation.csv", header);
    auto emit = [&](const LoadedSplit& s, const std::string& name,
                    const std::vector<std::vector<double>>& q) {
      for (std::size_t i = 0; i < q.size(); ++i) {
        w.Add(s.cases.records[i].case_id).Add(name);
        for (double v : q[i]) w.Add(v);
        w.EndRow();
      }
    };
    emit(tune, "tune", tune_q);
    for (std::size_t e = 0; e < evals.size(); ++e) emit(evals[e], opt.splits[e], eval_q[e]);
  }

  // Standardization uses tune statistics throughout.
  const std::vector<double> tune_y = Standardize(tune_scores);
  double mean = 0.0, sd = 0.0;
  for (double v : tune_scores) mean += v;
  mean /= static_cast<double>(tune_scores.size());
  for (double v : tune_scores) sd += (v - mean) * (v - mean);
  sd = std::sqrt(sd / static_cast<double>(tune_scores.size() - 1));
  auto standardized = [&](const std::vector<CaseInference>& inf) {
    std::vector<double> y;
    for (const auto& c : inf) y.push_back((c.case_score - mean) / sd);
    return y;
  };

  // Stepwise selection on tune, refit on each evaluation split.
  const CovariateMatrix tune_x = QuantitationMatrix(tune_q);
  const auto usable = VaryingColumns(tune_x);
  if (usable.empty()) {
    throw ValidationError("degenerate regression: no informative cluster features (k = " +
                          std::to_string(k) + ")");
  }
  const CovariateMatrix tune_usable = tune_x.SelectColumns(usable);
  const int n_select = std::min<int>(opt.n_select, static_cast<int>(usable.size()));
  const StepwiseResult step = ForwardStepwise(tune_usable, tune_y, n_select);
  std::vector<std::size_t> chosen;
  for (auto c : step.selected) chosen.push_back(usable[c]);
  {
    CsvWriter w(ctx.out_dir / "stepwise_path.csv", {"step", "feature", "tune_adjusted_r2"});
    for (std::size_t i = 0; i < chosen.size(); ++i) {
      w.Add(i + 1).Add(tune_x.columns[chosen[i]].name).Add(step.adjusted_r2_path[i]);
      w.EndRow();
    }
  }

  CsvWriter coef(ctx.out_dir / "regression.csv",
                 {"model", "split", "feature", "coefficient", "std_error", "p_value"});
  CsvWriter summary(ctx.out_dir / "r2_summary.csv",
                    {"model", "split", "cases", "features", "r2", "adjusted_r2"});
  auto report = [&](const std::string& model, const std::string& split, const OlsFit& fit) {
    for (const auto& c : fit.coefficients) {
      coef.Add(model).Add(split).Add(c.name).Add(c.estimate).Add(c.std_error).Add(c.p_value);
      coef.EndRow();
    }
    summary.Add(model).Add(split).Add(fit.n).Add(fit.coefficients.size()).Add(fit.r2).Add(fit.adjusted_r2);
    summary.EndRow();
  };
  for (std::size_t e = 0; e < evals.size(); ++e) {
    const auto y = standardized(eval_inf[e]);
    const CovariateMatrix x = QuantitationMatrix(eval_q[e]);
    std::vector<RawCovariates> clinico;
    for (auto i : evals[e].cohort_index) clinico.push_back(ds.cohort[i].covariates);
    report("clinicopathologic", opt.splits[e], ClinicoRegression(clinico, specs, y));
    report("clusters_stepwise", opt.splits[e], FitOls(x.SelectColumns(chosen), y));
    report("clusters_full", opt.splits[e], FitOls(x.SelectColumns(IndependentColumns(x)), y));
  }

  // Patch-level scores per cluster, pooled over evaluation splits.
  std::vector<double> patch_scores;
  std::vector<int> patch_clusters;
  std::vector<std::string> patch_slides;
  for (std::size_t e = 0; e < evals.size(); ++e) {
    for (std::size_t i = 0; i < evals[e].cases.bags.size(); ++i) {
      const CaseBag& b = evals[e].cases.bags[i];
      const auto ids = AssignClusters(clusters, b.AllPatches());
      const auto slides = b.PatchSlideIds();
      const auto& ps = eval_inf[e][i].patch_scores;
      patch_scores.insert(patch_scores.end(), ps.begin(), ps.end());
      patch_clusters.insert(patch_clusters.end(), ids.begin(), ids.end());
      patch_slides.insert(patch_slides.end(), slides.begin(), slides.end());
    }
  }
  const ClusterScoreTable table =
      PatchClusterScores(patch_scores, patch_clusters, patch_slides, k, opt.bootstrap, DeriveSeed(seed, 3));
  auto ranked = table.rows;
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const ClusterScoreSummary& a, const ClusterScoreSummary& b) { return a.mean > b.mean; });
  {
    CsvWriter w(ctx.out_dir / "patch_cluster_scores.csv",
                {"rank", "cluster", "patches", "mean_score", "ci_lower", "ci_upper", "q25", "q75"});
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      const auto& r = ranked[i];
      w.Add(i + 1).Add("cluster_" + std::to_string(r.cluster)).Add(r.patches).Add(r.mean);
      w.Add(r.ci_lower).Add(r.ci_upper).Add(r.q25).Add(r.q75);
      w.EndRow();
    }
    for (int c : table.empty_clusters) {
      w.Add("").Add("cluster_" + std::to_string(c)).Add(0).Add("").Add("").Add("").Add("").Add("");
      w.EndRow();
    }
  }

  // Spearman correlation of each covariate with DLS and with the top cluster.
  {
    CsvWriter w(ctx.out_dir / "spearman.csv", {"split", "covariate", "target", "rho", "p_value"});
    const int top = ranked.empty() ? -1 : ranked.front().cluster;
    std::set<std::string> names;
    for (const auto& s : specs) names.insert(s.name);
    for (std::size_t e = 0; e < evals.size(); ++e) {
      std::vector<double> dls;
      for (const auto& c : eval_inf[e]) dls.push_back(c.case_score);
      std::vector<double> top_q;
      if (top >= 0) {
        for (const auto& q : eval_q[e]) top_q.push_back(q[static_cast<std::size_t>(top)]);
      }
      for (const auto& name : names) {
        std::vector<double> cov;
        for (auto i : evals[e].cohort_index) cov.push_back(ds.cohort[i].covariates.at(name));
        auto emit = [&](const std::string& target, const std::vector<double>& v) {
          w.Add(opt.splits[e]).Add(name).Add(target);
          try {
            const auto r = Spearman(cov, v);
            w.Add(r.rho).Add(r.p_value);
          } catch (const Error&) {
            w.Add("").Add("");
          }
          w.EndRow();
        };
        emit("dls", dls);
        if (top >= 0) emit("cluster_" + std::to_string(top), top_q);
      }
    }
  }
}

}  // namespace survmil::cli
