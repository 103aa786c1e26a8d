#pragma once

// Synthetic cohorts with planted prognostic patch prototypes,
// proportional-hazards event times and random plus administrative censoring.

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "survmil/cohort.hpp"
#include "survmil/mil.hpp"
#include "survmil/roi_mask.hpp"

namespace survmil {

struct CovariateEffects {
  double age_per_decade = 0.0;  // on (age - 65) / 10
  double sex = 0.0;             // sex in {0, 1}
  double stage = 0.0;           // indicator of stage 3 vs 2
};

struct SplitFractions {
  double train = 0.6;
  double tune = 0.2;
  double val1 = 0.1;
  double val2 = 0.1;
};

struct GeneratorConfig {
  int n_cases = 600;
  int slides_min = 1;
  int slides_max = 3;
  int patches_min = 8;  // tumor patches per slide
  int patches_max = 24;
  int feature_dim = 16;
  int n_prototypes = 8;
  std::vector<double> prototype_risk_betas{1.5, 0, 0, 0, 0, 0, 0, 0};
  double prototype_spread = 0.5;
  double centroid_scale = 2.0;
  double mixture_concentration = 0.5;  // symmetric Dirichlet parameter
  double zero_inflation = 0.3;         // chance a prototype is absent from a case
  double baseline_hazard = 0.01;       // per month
  int admin_censor_months = 120;
  double censor_rate = 0.5;
  CovariateEffects covariate_betas;
  double background_fraction = 0.5;  // share of non-tumor blocks on a slide
  int patch_side = 16;               // superpixels per patch edge
  int speckles_per_slide = 3;
  bool heatmaps = true;
  SplitFractions splits;
  std::uint64_t seed = 0;

  void Validate() const;
};

struct GroundTruth {
  std::vector<double> eta;                          // per case
  std::vector<std::vector<std::vector<int>>> patch_prototype;  // case, slide, patch; -1 = background
  std::vector<double> betas;                        // per prototype
  std::vector<double> fraction_mean;                // cohort mean tumor fraction per prototype
  std::vector<double> fraction_sd;                  // cohort sd (population) per prototype
  std::vector<double> covariate_term;               // per case
  Eigen::MatrixXd prototype_centroids;              // n_prototypes x d
  Eigen::VectorXd background_centroid;
  double censor_hazard = 0.0;
};

struct SyntheticCohort {
  std::vector<CohortEntry> cohort;
  std::vector<CaseBag> bags;  // every tissue patch, tumor and background
  std::vector<std::vector<HeatmapGrid>> heatmaps;     // per case, per slide
  std::vector<std::vector<RoiMaskGrid>> truth_masks;  // per case, per slide
  GroundTruth truth;
};

// Deterministic per seed. Throws "infeasible censor_rate" when the target
// cannot be met given administrative censoring.
SyntheticCohort Generate(const GeneratorConfig& config);

// Expected censored share with administrative censoring only. Passing this
// value as censor_rate disables random censoring.
double AdministrativeCensorShare(const GeneratorConfig& config);

// The true linear predictor.
std::vector<double> OracleScores(const GroundTruth& truth);

// Per-case tumor fraction of each prototype, from patch labels.
std::vector<std::vector<double>> PrototypeFractions(const GroundTruth& truth, int n_prototypes);

}  // namespace survmil
