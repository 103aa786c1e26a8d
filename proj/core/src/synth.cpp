#include "survmil/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "survmil/error.hpp"
#include "survmil/random.hpp"

namespace survmil {
namespace {

enum Stream : std::uint64_t {
  kCentroids = 1,
  kCase = 2,
  kSplit = 3,
  kTimes = 4,
};

int UniformInt(Rng& rng, int lo, int hi) {
  return lo + static_cast<int>(UniformIndex(rng, static_cast<std::size_t>(hi - lo + 1)));
}

// Expected censored share for censor hazard `lc` under exponential event
// times with per-case hazards `lambda` and administrative cutoff `admin`.
double ExpectedCensorRate(const std::vector<double>& lambda, double lc, double admin) {
  double observed = 0.0;
  for (double l : lambda) {
    observed += l / (l + lc) * (1.0 - std::exp(-(l + lc) * admin));
  }
  return 1.0 - observed / static_cast<double>(lambda.size());
}

struct SlideLayout {
  int grid = 0;                     // blocks per side
  std::vector<PatchCoord> tumor;    // block coords
  std::vector<PatchCoord> background;
};

SlideLayout LayoutSlide(int n_tumor, double background_fraction, Rng& rng) {
  SlideLayout layout;
  const double total = std::ceil(n_tumor / (1.0 - background_fraction));
  layout.grid = std::max(1, static_cast<int>(std::ceil(std::sqrt(total))));
  std::vector<PatchCoord> all;
  for (int y = 0; y < layout.grid; ++y) {
    for (int x = 0; x < layout.grid; ++x) all.push_back({x, y});
  }
  for (std::size_t i = 0; i < static_cast<std::size_t>(n_tumor); ++i) {
    std::swap(all[i], all[i + UniformIndex(rng, all.size() - i)]);
  }
  layout.tumor.assign(all.begin(), all.begin() + n_tumor);
  layout.background.assign(all.begin() + n_tumor, all.end());
  std::sort(layout.tumor.begin(), layout.tumor.end());
  std::sort(layout.background.begin(), layout.background.end());
  return layout;
}

void PaintSlide(const SlideLayout& layout, int side, int speckles, Rng& rng,
                HeatmapGrid& heat, RoiMaskGrid& truth) {
  const int w = layout.grid * side;
  heat.width = heat.height = w;
  heat.values.assign(static_cast<std::size_t>(w) * w, 0.0f);
  truth = RoiMaskGrid(w, w);
  for (auto& v : heat.values) {
    const double u = UniformUnit(rng);
    v = static_cast<float>(0.45 * u * u);
  }
  for (const auto& b : layout.tumor) {
    for (int y = b.y * side; y < (b.y + 1) * side; ++y) {
      for (int x = b.x * side; x < (b.x + 1) * side; ++x) {
        heat.values[static_cast<std::size_t>(y) * w + x] =
            static_cast<float>(0.55 + 0.45 * UniformUnit(rng));
        truth.set(x, y);
      }
    }
  }
  // Short bright runs inside background blocks, away from block edges, that
  // the component filter must remove.
  if (layout.background.empty() || side < 12) return;
  for (int s = 0; s < speckles; ++s) {
    const auto& b = layout.background[UniformIndex(rng, layout.background.size())];
    const int len = UniformInt(rng, 2, 7);
    const int y = b.y * side + UniformInt(rng, 2, side - 3);
    const int x0 = b.x * side + UniformInt(rng, 2, side - 3 - len);
    for (int x = x0; x < x0 + len; ++x) {
      heat.values[static_cast<std::size_t>(y) * w + x] = 0.9f;
    }
  }
}

}  // namespace

void GeneratorConfig::Validate() const {
  if (n_cases < 1 || slides_min < 1 || slides_max < slides_min || patches_min < 1 ||
      patches_max < patches_min || feature_dim < 1 || n_prototypes < 1 || patch_side < 1 ||
      admin_censor_months < 1) {
    throw ValidationError("generator config: counts must be positive and ranges ordered");
  }
  if (static_cast<int>(prototype_risk_betas.size()) != n_prototypes) {
    throw ValidationError("generator config: need one risk beta per prototype");
  }
  if (!(baseline_hazard > 0.0)) throw ValidationError("generator config: baseline_hazard must be > 0");
  if (!(prototype_spread > 0.0)) throw ValidationError("generator config: prototype_spread must be > 0");
  if (!(mixture_concentration > 0.0)) {
    throw ValidationError("generator config: mixture_concentration must be > 0");
  }
  if (!(zero_inflation >= 0.0 && zero_inflation < 1.0)) {
    throw ValidationError("generator config: zero_inflation must lie in [0, 1)");
  }
  if (!(background_fraction >= 0.0 && background_fraction < 1.0)) {
    throw ValidationError("generator config: background_fraction must lie in [0, 1)");
  }
  const double s = splits.train + splits.tune + splits.val1 + splits.val2;
  if (splits.train < 0 || splits.tune < 0 || splits.val1 < 0 || splits.val2 < 0 ||
      std::abs(s - 1.0) > 1e-9) {
    throw ValidationError("generator config: split fractions must be >= 0 and sum to 1");
  }
}

SyntheticCohort Generate(const GeneratorConfig& config) {
  config.Validate();
  const int n = config.n_cases;
  const int d = config.feature_dim;
  const int k = config.n_prototypes;
  SyntheticCohort out;
  GroundTruth& truth = out.truth;
  truth.betas = config.prototype_risk_betas;

  {
    Rng rng(DeriveSeed(config.seed, kCentroids));
    truth.prototype_centroids.resize(k, d);
    for (Eigen::Index i = 0; i < truth.prototype_centroids.size(); ++i) {
      truth.prototype_centroids.data()[i] = config.centroid_scale * StandardNormal(rng);
    }
    truth.background_centroid.resize(d);
    for (int j = 0; j < d; ++j) truth.background_centroid(j) = config.centroid_scale * StandardNormal(rng);
  }

  out.cohort.resize(static_cast<std::size_t>(n));
  out.bags.resize(static_cast<std::size_t>(n));
  truth.patch_prototype.resize(static_cast<std::size_t>(n));
  if (config.heatmaps) {
    out.heatmaps.resize(static_cast<std::size_t>(n));
    out.truth_masks.resize(static_cast<std::size_t>(n));
  }
  std::vector<std::vector<double>> fractions(static_cast<std::size_t>(n));

  for (int c = 0; c < n; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    Rng rng(DeriveSeed(config.seed, kCase, ci));
    CohortEntry& entry = out.cohort[ci];
    entry.record.case_id = "case_" + std::to_string(c);
    entry.covariates["age"] = std::round(65.0 + 10.0 * StandardNormal(rng));
    entry.covariates["sex"] = UniformUnit(rng) < 0.5 ? 0.0 : 1.0;
    entry.covariates["stage"] = UniformUnit(rng) < 0.5 ? 2.0 : 3.0;

    // Mixture weights: Dirichlet draw, then prototypes dropped at random.
    std::vector<double> weights(static_cast<std::size_t>(k));
    for (auto& w : weights) w = Gamma(rng, config.mixture_concentration);
    for (auto& w : weights) {
      if (UniformUnit(rng) < config.zero_inflation) w = 0.0;
    }
    if (std::all_of(weights.begin(), weights.end(), [](double w) { return w <= 0.0; })) {
      weights[UniformIndex(rng, weights.size())] = 1.0;
    }
    const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<double> cumulative(weights.size());
    double acc = 0.0;
    for (std::size_t j = 0; j < weights.size(); ++j) {
      acc += weights[j] / wsum;
      cumulative[j] = acc;
    }

    CaseBag& bag = out.bags[ci];
    bag.case_id = entry.record.case_id;
    bag.feature_dim = d;
    std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
    double tumor_total = 0.0;
    const int n_slides = UniformInt(rng, config.slides_min, config.slides_max);
    for (int s = 0; s < n_slides; ++s) {
      const int n_tumor = UniformInt(rng, config.patches_min, config.patches_max);
      const SlideLayout layout = LayoutSlide(n_tumor, config.background_fraction, rng);
      Slide slide;
      slide.slide_id = bag.case_id + "_s" + std::to_string(s);
      const std::size_t n_patches = layout.tumor.size() + layout.background.size();
      slide.patches.resize(static_cast<Eigen::Index>(n_patches), d);
      std::vector<int> labels;
      labels.reserve(n_patches);
      Eigen::Index row = 0;
      for (const auto& coord : layout.tumor) {
        const double u = UniformUnit(rng);
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
        int proto = static_cast<int>(std::min<std::ptrdiff_t>(it - cumulative.begin(), k - 1));
        while (weights[static_cast<std::size_t>(proto)] <= 0.0) --proto;  // u at a flat step
        for (int j = 0; j < d; ++j) {
          slide.patches(row, j) =
              truth.prototype_centroids(proto, j) + config.prototype_spread * StandardNormal(rng);
        }
        slide.coords.push_back(coord);
        labels.push_back(proto);
        counts[static_cast<std::size_t>(proto)] += 1.0;
        tumor_total += 1.0;
        ++row;
      }
      for (const auto& coord : layout.background) {
        for (int j = 0; j < d; ++j) {
          slide.patches(row, j) =
              truth.background_centroid(j) + config.prototype_spread * StandardNormal(rng);
        }
        slide.coords.push_back(coord);
        labels.push_back(-1);
        ++row;
      }
      if (config.heatmaps) {
        HeatmapGrid heat;
        RoiMaskGrid mask;
        PaintSlide(layout, config.patch_side, config.speckles_per_slide, rng, heat, mask);
        out.heatmaps[ci].push_back(std::move(heat));
        out.truth_masks[ci].push_back(std::move(mask));
      }
      bag.slides.push_back(std::move(slide));
      truth.patch_prototype[ci].push_back(std::move(labels));
    }
    for (auto& cnt : counts) cnt /= tumor_total;
    fractions[ci] = std::move(counts);
  }

  // Linear predictor on cohort-standardized prototype fractions.
  truth.fraction_mean.assign(static_cast<std::size_t>(k), 0.0);
  truth.fraction_sd.assign(static_cast<std::size_t>(k), 0.0);
  for (int j = 0; j < k; ++j) {
    const auto jj = static_cast<std::size_t>(j);
    double m = 0.0;
    for (const auto& f : fractions) m += f[jj];
    m /= n;
    double v = 0.0;
    for (const auto& f : fractions) v += (f[jj] - m) * (f[jj] - m);
    truth.fraction_mean[jj] = m;
    truth.fraction_sd[jj] = std::sqrt(v / n);
  }
  truth.eta.resize(static_cast<std::size_t>(n));
  truth.covariate_term.resize(static_cast<std::size_t>(n));
  std::vector<double> lambda(static_cast<std::size_t>(n));
  for (int c = 0; c < n; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    double eta = 0.0;
    for (int j = 0; j < k; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      if (truth.fraction_sd[jj] > 0.0) {
        eta += truth.betas[jj] * (fractions[ci][jj] - truth.fraction_mean[jj]) / truth.fraction_sd[jj];
      }
    }
    const auto& cov = out.cohort[ci].covariates;
    const double cterm = config.covariate_betas.age_per_decade * (cov.at("age") - 65.0) / 10.0 +
                         config.covariate_betas.sex * cov.at("sex") +
                         config.covariate_betas.stage * (cov.at("stage") == 3.0 ? 1.0 : 0.0);
    truth.covariate_term[ci] = cterm;
    truth.eta[ci] = eta + cterm;
    lambda[ci] = config.baseline_hazard * std::exp(truth.eta[ci]);
  }

  // Censor hazard solving E[censored share] = censor_rate.
  const double admin = config.admin_censor_months;
  const double floor_rate = ExpectedCensorRate(lambda, 0.0, admin);
  if (!(config.censor_rate >= floor_rate - 1e-12 && config.censor_rate < 1.0)) {
    throw ValidationError("infeasible censor_rate " + std::to_string(config.censor_rate) +
                          ": administrative censoring alone gives " + std::to_string(floor_rate));
  }
  double lo = 0.0;
  double hi = 1e-3;
  while (ExpectedCensorRate(lambda, hi, admin) < config.censor_rate) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (ExpectedCensorRate(lambda, mid, admin) < config.censor_rate ? lo : hi) = mid;
  }
  truth.censor_hazard = config.censor_rate <= floor_rate ? 0.0 : 0.5 * (lo + hi);

  for (int c = 0; c < n; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    Rng rng(DeriveSeed(config.seed, kTimes, ci));
    const double t_event = Exponential(rng, lambda[ci]);
    double t_censor = admin;
    if (truth.censor_hazard > 0.0) t_censor = std::min(admin, Exponential(rng, truth.censor_hazard));
    const double t = std::min(t_event, t_censor);
    out.cohort[ci].record.event = t_event <= t_censor;
    out.cohort[ci].record.time_months = std::max(1, static_cast<int>(std::ceil(t)));
  }

  // Splits: a seeded permutation cut by the configured fractions.
  {
    Rng rng(DeriveSeed(config.seed, kSplit));
    std::vector<std::size_t> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[UniformIndex(rng, i)]);
    const double fr[] = {config.splits.train, config.splits.tune, config.splits.val1, config.splits.val2};
    std::size_t at = 0;
    double cum = 0.0;
    for (int s = 0; s < 4; ++s) {
      cum += fr[s];
      const std::size_t end =
          s == 3 ? perm.size() : static_cast<std::size_t>(std::llround(cum * n));
      for (; at < end; ++at) out.cohort[perm[at]].split = kSplits[s];
    }
  }
  return out;
}

double AdministrativeCensorShare(const GeneratorConfig& config) {
  // Censoring draws come last, so eta does not depend on censor_rate.
  GeneratorConfig probe = config;
  probe.censor_rate = 0.999999;
  const SyntheticCohort s = Generate(probe);
  std::vector<double> lambda;
  lambda.reserve(s.truth.eta.size());
  for (double e : s.truth.eta) lambda.push_back(config.baseline_hazard * std::exp(e));
  return ExpectedCensorRate(lambda, 0.0, config.admin_censor_months);
}

std::vector<double> OracleScores(const GroundTruth& truth) { return truth.eta; }

std::vector<std::vector<double>> PrototypeFractions(const GroundTruth& truth, int n_prototypes) {
  std::vector<std::vector<double>> out;
  out.reserve(truth.patch_prototype.size());
  for (const auto& slides : truth.patch_prototype) {
    std::vector<double> counts(static_cast<std::size_t>(n_prototypes), 0.0);
    double total = 0.0;
    for (const auto& labels : slides) {
      for (int p : labels) {
        if (p < 0) continue;
        counts[static_cast<std::size_t>(p)] += 1.0;
        total += 1.0;
      }
    }
    for (auto& c : counts) c /= total;
    out.push_back(std::move(counts));
  }
  return out;
}

}  // namespace survmil
