#include <benchmark/benchmark.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "survmil/mil.hpp"
#include "survmil/random.hpp"
#include "survmil/roi_mask.hpp"
#include "survmil/survival.hpp"
#include "survmil/synth.hpp"

using namespace survmil;

namespace {

std::vector<SurvivalRecord> RandomRecords(std::size_t n, Rng& rng) {
  std::vector<SurvivalRecord> r(n);
  for (std::size_t i = 0; i < n; ++i) {
    r[i] = {"c" + std::to_string(i), 1 + static_cast<int>(UniformIndex(rng, 120)), UniformUnit(rng) < 0.5};
  }
  return r;
}

void BM_ConcordanceIndex(benchmark::State& state) {
  Rng rng(1);
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto records = RandomRecords(n, rng);
  std::vector<double> scores(n);
  for (double& s : scores) s = StandardNormal(rng);
  for (auto _ : state) benchmark::DoNotOptimize(ConcordanceIndex(scores, records));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_ConcordanceIndex)->RangeMultiplier(4)->Range(256, 65536)->Complexity();

void BM_FitCox(benchmark::State& state) {
  GeneratorConfig g;
  g.n_cases = static_cast<int>(state.range(0));
  g.slides_min = g.slides_max = 1;
  g.patches_min = g.patches_max = 1;
  g.feature_dim = 2;
  g.n_prototypes = 1;
  g.prototype_risk_betas = {0.0};
  g.covariate_betas.sex = std::log(2.0);
  g.heatmaps = false;
  const auto syn = Generate(g);
  std::vector<SurvivalRecord> records;
  std::vector<RawCovariates> raw;
  for (const auto& e : syn.cohort) {
    records.push_back(e.record);
    raw.push_back(e.covariates);
  }
  const std::vector<CovariateSpec> specs{{"age", CovariateKind::kAgeDecade},
                                         {"sex", CovariateKind::kCategorical},
                                         {"stage", CovariateKind::kCategorical}};
  const CovariateMatrix x = EncodeCovariates(raw, specs);
  for (auto _ : state) benchmark::DoNotOptimize(FitCox(records, x));
}
BENCHMARK(BM_FitCox)->Arg(500)->Arg(2000)->Arg(8000)->Unit(benchmark::kMillisecond);

void BM_MilGradient(benchmark::State& state) {
  Rng rng(3);
  const int batch = static_cast<int>(state.range(0));
  const int bag = 16, dim = 16;
  const MilModel model = MilModel::Initialize(dim, EncoderShape{}, 7);
  std::vector<Eigen::MatrixXd> bags;
  std::vector<SurvivalRecord> records = RandomRecords(static_cast<std::size_t>(batch), rng);
  records[0].event = true;
  for (int b = 0; b < batch; ++b) {
    Eigen::MatrixXd p(bag, dim);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = StandardNormal(rng);
    bags.push_back(std::move(p));
  }
  for (auto _ : state) benchmark::DoNotOptimize(ComputeGradient(model, bags, records, 1e-4));
}
BENCHMARK(BM_MilGradient)->Arg(32)->Arg(64)->Arg(256);

void BM_BuildMask(benchmark::State& state) {
  Rng rng(5);
  HeatmapGrid h;
  h.width = h.height = static_cast<int>(state.range(0));
  h.values.resize(static_cast<std::size_t>(h.width) * h.height);
  // Smooth blobs plus noise, so every morphology stage has work to do.
  for (int y = 0; y < h.height; ++y) {
    for (int x = 0; x < h.width; ++x) {
      const double v = 0.5 + 0.35 * std::sin(x * 0.07) * std::cos(y * 0.05) + 0.15 * (UniformUnit(rng) - 0.5);
      h.values[static_cast<std::size_t>(y) * h.width + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  MaskParams params;
  params.dilation_radius = 3;
  for (auto _ : state) benchmark::DoNotOptimize(PatchInclusion(BuildMask(h, params)));
}
BENCHMARK(BM_BuildMask)->Arg(128)->Arg(512)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
