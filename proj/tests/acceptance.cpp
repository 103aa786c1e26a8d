// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Run with no arguments from the build tree.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "mil_fixtures.hpp"
#include "oracles.hpp"
#include "survmil/error.hpp"
#include "survmil/explainer.hpp"
#include "survmil/io.hpp"
#include "survmil/roi_mask.hpp"
#include "survmil/survival.hpp"
#include "survmil/synth.hpp"

using namespace survmil;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double Seconds(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string Fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

double PlantedSexCoefficient(double hr, std::uint64_t seed, double* seconds = nullptr) {
  GeneratorConfig g;
  g.n_cases = 2000;
  g.slides_min = g.slides_max = 1;
  g.patches_min = g.patches_max = 1;
  g.feature_dim = 2;
  g.n_prototypes = 1;
  g.prototype_risk_betas = {0.0};
  g.covariate_betas.sex = std::log(hr);
  g.heatmaps = false;
  g.seed = seed;
  const auto s = Generate(g);
  std::vector<SurvivalRecord> records;
  std::vector<RawCovariates> raw;
  for (const auto& e : s.cohort) {
    records.push_back(e.record);
    raw.push_back(e.covariates);
  }
  const std::vector<CovariateSpec> specs{{"sex", CovariateKind::kCategorical}};
  const auto t0 = Clock::now();
  const CoxFit fit = FitCox(records, EncodeCovariates(raw, specs));
  if (seconds) *seconds = Seconds(t0);
  if (!fit.converged) throw NumericalError("Cox fit did not converge");
  return fit.coefficients(0);
}

Outcome CoxRecovery() {
  constexpr int kCalibration = 100;
  constexpr int kTrials = 20;
  bool pass = true;
  std::string detail;
  double slowest = 0.0;
  for (double hr : {1.5, 2.0, 3.0}) {
    // Monte-Carlo SE from seeds disjoint from the trial seeds.
    std::vector<double> cal;
    for (int i = 0; i < kCalibration; ++i) cal.push_back(PlantedSexCoefficient(hr, 900000 + i));
    const double mean = std::accumulate(cal.begin(), cal.end(), 0.0) / kCalibration;
    double ss = 0.0;
    for (double b : cal) ss += (b - mean) * (b - mean);
    const double se = std::sqrt(ss / (kCalibration - 1));
    int hits = 0;
    for (int t = 0; t < kTrials; ++t) {
      double sec = 0.0;
      const double b = PlantedSexCoefficient(hr, 100 + t, &sec);
      slowest = std::max(slowest, sec);
      if (std::abs(b - std::log(hr)) <= 2.0 * se) ++hits;
    }
    pass = pass && hits >= 18;
    detail += Fmt("HR %.1f: %d/20 within 2*SE (SE %.4f); ", hr, hits, se);
  }
  pass = pass && slowest < 5.0;
  detail += Fmt("slowest fit %.3fs", slowest);
  return {pass, detail};
}

Outcome GradientOracle() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    worst = std::max(worst, fixtures::MaxGradientRelativeError(fixtures::RandomGradInstance(seed)));
  }
  const double sec = Seconds(t0);
  return {worst < 1e-6 && sec < 30.0, Fmt("max relative error %.3g over 100 instances in %.2fs", worst, sec)};
}

Outcome SmallInstanceOracles() {
  int mismatches = 0;
  double km_err = 0.0, lr_err = 0.0;
  auto expect_throw = [&](const std::function<void()>& f) {
    try {
      f();
      ++mismatches;
    } catch (const Error&) {
    }
  };
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const auto f = oracle::Fuzz(seed, 12, 8);
    const auto c = oracle::CIndex(f.scores, f.records);
    if (c) {
      mismatches += ConcordanceIndex(f.scores, f.records) != *c;
    } else {
      expect_throw([&] { ConcordanceIndex(f.scores, f.records); });
    }
    for (int horizon : {2, 4, 6}) {
      const auto a = oracle::HorizonAuc(f.scores, f.records, horizon);
      if (a) {
        mismatches += AucAtHorizon(f.scores, f.records, horizon) != *a;
      } else {
        expect_throw([&] { AucAtHorizon(f.scores, f.records, horizon); });
      }
    }
    const auto km = KaplanMeier(f.records);
    const auto ref = oracle::KaplanMeier(f.records);
    if (km.times.size() != ref.size()) {
      ++mismatches;
    } else {
      for (std::size_t k = 0; k < ref.size(); ++k) {
        mismatches += km.times[k] != ref[k].time || km.at_risk[k] != ref[k].at_risk || km.events[k] != ref[k].events;
        km_err = std::max(km_err, std::abs(km.survival[k] - ref[k].survival));
      }
    }
    std::vector<SurvivalRecord> ga, gb;
    for (std::size_t i = 0; i < f.records.size(); ++i) (f.scores[i] < 0.5 ? ga : gb).push_back(f.records[i]);
    const auto lr = oracle::LogRankTest(ga, gb);
    if (ga.empty() || gb.empty() || !lr) {
      expect_throw([&] { LogRankTest(ga, gb); });
    } else {
      const auto res = LogRankTest(ga, gb);
      lr_err = std::max({lr_err, std::abs(res.chi2 - lr->chi2), std::abs(res.observed_a - lr->observed_a),
                         std::abs(res.expected_a - lr->expected_a), std::abs(res.variance - lr->variance)});
    }
  }
  return {mismatches == 0 && km_err <= 1e-12 && lr_err <= 1e-12,
          Fmt("10000 instances: %d exact mismatches, KM max error %.2g, log-rank max error %.2g", mismatches, km_err,
              lr_err)};
}

Outcome BreslowTiedExample() {
  const std::vector<SurvivalRecord> r{{"a", 1, true}, {"b", 1, true}, {"c", 2, true}};
  const std::vector<double> zero{0.0, 0.0, 0.0};
  const double v = BreslowLogLik(zero, r);
  const double err = std::abs(v - (-2.0 * std::log(3.0)));
  return {err <= 1e-12, Fmt("loss %.15f, error %.2g", v, err)};
}

Outcome MaskExamples() {
  RoiMaskGrid comps(20, 20);
  for (int x = 0; x < 7; ++x) comps.set(x + 1, 2);
  for (int x = 0; x < 8; ++x) comps.set(x + 1, 10);
  const auto kept = Denoise(comps, 8);
  bool denoise_ok = kept.count() == 8;
  for (int x = 0; x < 8; ++x) denoise_ok = denoise_ok && kept.at(x + 1, 10);

  RoiMaskGrid dot(41, 41);
  dot.set(20, 20);
  const std::size_t disk = Dilate(dot, 4).count();

  RoiMaskGrid half(32, 16);
  for (int i = 0; i < 128; ++i) half.set(i % 16, i / 16);
  for (int i = 0; i < 127; ++i) half.set(16 + i % 16, i / 16);
  const auto inc = PatchInclusion(half, 16);
  const bool half_ok = inc.size() == 1 && inc[0] == PatchCoord{0, 0};

  return {denoise_ok && disk == 49 && half_ok,
          Fmt("7/8 components kept %zu cells; radius-4 disk %zu cells; blocks at 128 and 127 of 256 -> %zu kept",
              kept.count(), disk, inc.size())};
}

// ---------------------------------------------------------------------------

struct TrainedEnsemble {
  fixtures::GatedCohort cohort;
  Ensemble ensemble;
};

TrainedEnsemble TrainEnsemble(const GeneratorConfig& g, std::uint64_t seed, int models = 5) {
  TrainedEnsemble out{fixtures::GateCohort(Generate(g)), {}};
  const CaseSet& train = out.cohort.splits.at("train");
  const CaseSet& tune = out.cohort.splits.at("tune");
  std::vector<ScoredModel> candidates;
  for (int m = 0; m < models; ++m) {
    const TrainConfig cfg = fixtures::DeskConfig(DeriveSeed(seed, static_cast<std::uint64_t>(m)));
    const TrainResult r = Train(train, tune, cfg);
    const Checkpoint& best = SelectCheckpoint(r.checkpoints, cfg.rolling_window);
    auto scores = ScoreForEvaluation(best.model, tune, cfg.eval_patches_per_case, cfg.eval_seed);
    const double c = ConcordanceIndex(scores, tune.records);
    candidates.push_back({best.model, c, std::move(scores)});
  }
  out.ensemble = EnsembleTop(candidates, models);
  return out;
}

// Held-out cases: the two validation splits pooled.
CaseSet HeldOut(const fixtures::GatedCohort& c, std::vector<std::size_t>* rows = nullptr) {
  CaseSet out;
  for (const char* s : {"val1", "val2"}) {
    const auto& set = c.splits.at(s);
    out.bags.insert(out.bags.end(), set.bags.begin(), set.bags.end());
    out.records.insert(out.records.end(), set.records.begin(), set.records.end());
    if (rows) rows->insert(rows->end(), c.index.at(s).begin(), c.index.at(s).end());
  }
  return out;
}

Outcome EndToEnd() {
  const auto t0 = Clock::now();
  GeneratorConfig g;
  g.n_cases = 600;
  g.feature_dim = 16;
  g.prototype_risk_betas.assign(static_cast<std::size_t>(g.n_prototypes), 0.0);
  g.prototype_risk_betas[0] = 1.5;
  g.seed = 2024;
  const auto t = TrainEnsemble(g, 77);
  std::vector<std::size_t> rows;
  const CaseSet held = HeldOut(t.cohort, &rows);
  std::vector<double> scores, oracle_eta;
  for (const auto& b : held.bags) scores.push_back(InferCase(t.ensemble, b).case_score);
  for (auto i : rows) oracle_eta.push_back(t.cohort.syn.truth.eta[i]);
  const double c = ConcordanceIndex(scores, held.records);
  const double c_oracle = ConcordanceIndex(oracle_eta, held.records);
  const double sec = Seconds(t0);
  return {c >= 0.65 && c >= 0.8 * c_oracle && sec < 600.0,
          Fmt("held-out c-index %.4f, oracle %.4f (ratio %.3f), %zu cases, %.1fs", c, c_oracle, c / c_oracle,
              held.records.size(), sec)};
}

Eigen::MatrixXd StackPatches(const CaseSet& s) {
  Eigen::Index total = 0;
  for (const auto& b : s.bags) total += b.PatchCount();
  Eigen::MatrixXd all(total, s.bags.front().feature_dim);
  Eigen::Index row = 0;
  for (const auto& b : s.bags) {
    const Eigen::MatrixXd p = b.AllPatches();
    all.middleRows(row, p.rows()) = p;
    row += p.rows();
  }
  return all;
}

struct ExplainCheck {
  bool in_first_three = false;
  bool tops_ranking = false;
  double full_adj_r2 = 0.0;
  double clinico_adj_r2 = 0.0;
  bool ok() const { return in_first_three && tops_ranking && full_adj_r2 > clinico_adj_r2; }
};

ExplainCheck ExplainSeed(std::uint64_t seed) {
  GeneratorConfig g;
  g.seed = seed;
  const auto t = TrainEnsemble(g, seed + 500);
  const auto& c = t.cohort;
  const int k = g.n_prototypes;
  const ClusterModel clusters = KMeansFit(StackPatches(c.splits.at("train")), k, DeriveSeed(seed, 1));
  Eigen::Index planted = 0;
  (clusters.centroids.rowwise() - c.syn.truth.prototype_centroids.row(0)).rowwise().squaredNorm().minCoeff(&planted);

  auto quantitate = [&](const CaseSet& s) {
    std::vector<std::vector<double>> q;
    for (const auto& b : s.bags) q.push_back(Quantitate(AssignClusters(clusters, b.AllPatches()), k));
    return q;
  };

  // Stepwise on tune, with scores standardized by tune statistics.
  const CaseSet& tune = c.splits.at("tune");
  std::vector<double> tune_scores;
  for (const auto& b : tune.bags) tune_scores.push_back(InferCase(t.ensemble, b).case_score);
  const double mean = std::accumulate(tune_scores.begin(), tune_scores.end(), 0.0) / tune_scores.size();
  double ss = 0.0;
  for (double v : tune_scores) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (tune_scores.size() - 1));
  const CovariateMatrix tune_x = QuantitationMatrix(quantitate(tune));
  const auto usable = VaryingColumns(tune_x);
  const StepwiseResult step =
      ForwardStepwise(tune_x.SelectColumns(usable), Standardize(tune_scores), std::min<int>(10, usable.size()));

  ExplainCheck out;
  for (std::size_t i = 0; i < std::min<std::size_t>(3, step.selected.size()); ++i) {
    out.in_first_three = out.in_first_three || usable[step.selected[i]] == static_cast<std::size_t>(planted);
  }

  std::vector<std::size_t> rows;
  const CaseSet held = HeldOut(c, &rows);
  std::vector<double> y, patch_scores;
  std::vector<int> patch_clusters;
  std::vector<std::string> patch_slides;
  for (const auto& b : held.bags) {
    const auto inf = InferCase(t.ensemble, b);
    y.push_back((inf.case_score - mean) / sd);
    const auto ids = AssignClusters(clusters, b.AllPatches());
    const auto slides = b.PatchSlideIds();
    patch_scores.insert(patch_scores.end(), inf.patch_scores.begin(), inf.patch_scores.end());
    patch_clusters.insert(patch_clusters.end(), ids.begin(), ids.end());
    patch_slides.insert(patch_slides.end(), slides.begin(), slides.end());
  }
  const CovariateMatrix x = QuantitationMatrix(quantitate(held));
  out.full_adj_r2 = FitOls(x.SelectColumns(IndependentColumns(x)), y).adjusted_r2;
  std::vector<RawCovariates> clinico;
  for (auto i : rows) clinico.push_back(c.syn.cohort[i].covariates);
  const std::vector<CovariateSpec> specs{{"age", CovariateKind::kAgeDecade},
                                         {"sex", CovariateKind::kCategorical},
                                         {"stage", CovariateKind::kCategorical}};
  out.clinico_adj_r2 = ClinicoRegression(clinico, specs, y).adjusted_r2;

  const auto table = PatchClusterScores(patch_scores, patch_clusters, patch_slides, k, 200, DeriveSeed(seed, 3));
  const auto top = std::max_element(table.rows.begin(), table.rows.end(),
                                    [](const auto& a, const auto& b) { return a.mean < b.mean; });
  out.tops_ranking = top != table.rows.end() && top->cluster == static_cast<int>(planted);
  return out;
}

Outcome ExplainPattern() {
  int good = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const ExplainCheck e = ExplainSeed(seed);
    good += e.ok();
    detail += Fmt("[%d%d%d %.2f/%.2f]", e.in_first_three ? 1 : 0, e.tops_ranking ? 1 : 0,
                  e.full_adj_r2 > e.clinico_adj_r2 ? 1 : 0, e.full_adj_r2, e.clinico_adj_r2);
  }
  return {good >= 9, Fmt("%d/10 seeds ", good) + detail};
}

// ---------------------------------------------------------------------------

int RunCli(const std::vector<std::string>& args, const fs::path& log) {
  std::string cmd = "'" + std::string(SURVMIL_CLI) + "'";
  for (const auto& a : args) cmd += " '" + a + "'";
  cmd += " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> Hashes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).generic_string();
    if (rel != "run_manifest.json") out[rel] = io::HashFile(e.path());
  }
  return out;
}

Outcome ReplayDeterminism() {
  const fs::path root = fs::temp_directory_path() / "survmil_acceptance_replay";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string data = (root / "data").string(), mask = (root / "mask").string(),
                    model = (root / "model").string(), eval = (root / "eval").string(),
                    expl = (root / "explain").string();
  struct Step {
    std::string name;
    std::string out;
    std::vector<std::string> args;
  };
  const std::vector<Step> steps{
      {"generate", data, {"--seed", "11", "--out-dir", data, "generate", "--cases", "200"}},
      {"mask", mask, {"--out-dir", mask, "mask", "--data-dir", data, "--recall-target", "0.9"}},
      {"train", model,
       {"--seed", "4", "--threads", "2", "--out-dir", model, "train", "--data-dir", data, "--roi",
        mask + "/roi_patches.json", "--models", "2", "--ensemble-k", "2", "--steps", "200", "--eval-every", "20",
        "--batch-size", "16"}},
      {"eval", eval,
       {"--seed", "2", "--out-dir", eval, "eval", "--data-dir", data, "--scores", model + "/case_scores.csv",
        "--bootstrap", "200"}},
      {"explain", expl,
       {"--seed", "3", "--out-dir", expl, "explain", "--data-dir", data, "--roi", mask + "/roi_patches.json",
        "--ensemble", model + "/ensemble.json", "--k", "8", "--bootstrap", "200"}},
  };
  std::string detail;
  bool pass = true;
  int n = 0;
  for (const auto& [name, out_dir, args] : steps) {
    const fs::path out = out_dir;
    if (RunCli(args, root / (name + ".log")) != 0) {
      detail += name + ": run failed; ";
      pass = false;
      continue;
    }
    const fs::path again = root / (name + "_replay");
    const int code = RunCli({"replay", (out / "run_manifest.json").string(), "--into", again.string()},
                            root / (name + "_replay.log"));
    const bool same = code == 0 && Hashes(out) == Hashes(again);
    pass = pass && same;
    detail += name + (same ? ": identical; " : ": differs; ");
    ++n;
  }
  if (pass) fs::remove_all(root);
  return {pass && n == 5, detail};
}

Outcome BootstrapSanity() {
  Rng rng(31);
  std::vector<double> x(200);
  for (double& v : x) v = StandardNormal(rng);
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  const double analytic = 2.0 * 1.959963984540054 * std::sqrt(ss / (n - 1)) / std::sqrt(n);
  const auto ci = BootstrapCi(
      x.size(),
      [&](std::span<const std::size_t> idx) {
        double s = 0.0;
        for (auto i : idx) s += x[i];
        return std::optional<double>(s / static_cast<double>(idx.size()));
      },
      9999, 7);
  const double width = ci.upper - ci.lower;
  const double rel = std::abs(width / analytic - 1.0);

  const std::vector<std::string> one_block(x.size(), "slide");
  const auto blocked = BlockedBootstrapMean(x, one_block, 9999, 7);
  const bool point = blocked.lower == blocked.upper && blocked.lower == blocked.mean;
  return {rel <= 0.2 && point, Fmt("width %.4f vs analytic %.4f (%.1f%% off); one block -> [%.6f, %.6f]", width,
                                   analytic, 100.0 * rel, blocked.lower, blocked.upper)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"1 cox hazard ratio recovery", CoxRecovery},
      {"2 gradient vs finite differences", GradientOracle},
      {"3 small-instance brute-force oracles", SmallInstanceOracles},
      {"4 tied Breslow example", BreslowTiedExample},
      {"5 mask morphology examples", MaskExamples},
      {"6 end-to-end learning", EndToEnd},
      {"7 explainability pattern", ExplainPattern},
      {"8 replay determinism", ReplayDeterminism},
      {"9 bootstrap sanity", BootstrapSanity},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s [%s] %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), Seconds(t0));
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
