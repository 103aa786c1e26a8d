#pragma once

// Survival statistics over month-discretized follow-up: Kaplan-Meier,
// log-rank, Breslow Cox regression, concordance, horizon AUC, bootstrap
// intervals, risk stratification and rank correlation.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace survmil {

struct SurvivalRecord {
  std::string case_id;
  int time_months = 1;  // event time or last follow-up, >= 1
  bool event = false;   // disease-specific death observed
};

// Throws ValidationError on time < 1 or duplicate case ids.
void ValidateRecords(std::span<const SurvivalRecord> records);

enum class ColumnEncoding { kNumeric, kIndicator };

struct ColumnMeta {
  std::string name;
  ColumnEncoding encoding = ColumnEncoding::kNumeric;
  std::string reference_level;  // indicator columns only
};

// Design matrix aligned row-for-row with a record list.
struct CovariateMatrix {
  Eigen::MatrixXd values;  // rows x columns
  std::vector<ColumnMeta> columns;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }

  CovariateMatrix SelectRows(std::span<const std::size_t> rows) const;
  CovariateMatrix SelectColumns(std::span<const std::size_t> cols) const;
  // Horizontal concatenation; both must have the same row count.
  CovariateMatrix Append(const CovariateMatrix& other) const;
};

// How a raw covariate enters a design matrix.
enum class CovariateKind {
  kNumeric,      // as is
  kCategorical,  // indicator per non-reference level; first sorted level is reference
  kAgeDecade,    // (x - mean) / 10
  kStandardized  // (x - mean) / sd
};

struct CovariateSpec {
  std::string name;
  CovariateKind kind = CovariateKind::kNumeric;
};

using RawCovariates = std::map<std::string, double>;

// Errors: missing covariate, or a column constant across all rows
// ("constant column: <name>").
CovariateMatrix EncodeCovariates(std::span<const RawCovariates> raw,
                                 std::span<const CovariateSpec> specs);

// ---------------------------------------------------------------------------
// Kaplan-Meier

struct KmCurve {
  std::vector<int> times;  // distinct observed times, ascending
  std::vector<double> survival;
  std::vector<double> ci_lower;
  std::vector<double> ci_upper;
  std::vector<int> at_risk;
  std::vector<int> events;
  std::vector<int> censored;

  // Step-function value at month t (1 before the first time).
  double SurvivalAt(int t) const;
};

// Product-limit estimate with Greenwood variance and log(-log) 95% bounds.
KmCurve KaplanMeier(std::span<const SurvivalRecord> records);

// ---------------------------------------------------------------------------
// Log-rank

struct LogRankResult {
  double chi2 = 0.0;
  double p_value = 1.0;
  double observed_a = 0.0;
  double expected_a = 0.0;
  double variance = 0.0;
};

LogRankResult LogRankTest(std::span<const SurvivalRecord> group_a,
                          std::span<const SurvivalRecord> group_b);

// ---------------------------------------------------------------------------
// Cox proportional hazards, Breslow ties

// Breslow partial log-likelihood of per-record linear predictors. When
// `gradient` is non-null it receives d(loglik)/d(score_i).
// Throws "no events" when no record has an event.
double BreslowLogLik(std::span<const double> scores,
                     std::span<const SurvivalRecord> records,
                     std::vector<double>* gradient = nullptr);

struct CoxDerivatives {
  double loglik = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd information;  // negative Hessian
};

CoxDerivatives CoxEvaluate(std::span<const SurvivalRecord> records,
                           const Eigen::MatrixXd& x,
                           const Eigen::VectorXd& beta);

struct CoxOptions {
  int max_iterations = 100;
  double gradient_tolerance = 1e-7;
  double step_tolerance = 1e-4;
  int max_halvings = 20;
  double separation_bound = 20.0;
};

struct CoxFit {
  std::vector<std::string> names;
  Eigen::VectorXd coefficients;
  Eigen::VectorXd std_errors;
  double loglik = 0.0;
  double loglik_null = 0.0;
  bool converged = false;
  int iterations = 0;

  double HazardRatio(Eigen::Index j) const;
  double WaldZ(Eigen::Index j) const;
  double WaldP(Eigen::Index j) const;
  // exp(beta +- 1.96 se)
  std::pair<double, double> HazardRatioCi(Eigen::Index j) const;
  Eigen::VectorXd LinearPredictor(const Eigen::MatrixXd& x) const;
};

// Newton-Raphson with step halving from beta = 0.
// Errors: "collinear covariates" (singular information at the start),
// "complete separation" (monotone likelihood), "no events".
CoxFit FitCox(std::span<const SurvivalRecord> records,
              const CovariateMatrix& x, const CoxOptions& options = {});

// ---------------------------------------------------------------------------
// Discrimination

// Harrell's c: pairs where the earlier time is an event; tied scores 0.5.
// Higher score means higher risk.
double ConcordanceIndex(std::span<const double> scores,
                        std::span<const SurvivalRecord> records);

// ROC AUC for "event by horizon", dropping cases censored before it.
double AucAtHorizon(std::span<const double> scores,
                    std::span<const SurvivalRecord> records,
                    int horizon_months = 60);

// ---------------------------------------------------------------------------
// Bootstrap

// A statistic over a case-index resample; nullopt marks a degenerate
// replicate (skipped and counted).
using ResampleMetric =
    std::function<std::optional<double>(std::span<const std::size_t>)>;

struct BootstrapInterval {
  double lower = 0.0;
  double upper = 0.0;
  int skipped = 0;
  int used = 0;
};

// Percentile 95% interval. Fails when more than half the replicates are
// degenerate. Replicate r draws from DeriveSeed(seed, r).
BootstrapInterval BootstrapCi(std::size_t n, const ResampleMetric& metric,
                              int n_samples = 9999, std::uint64_t seed = 0,
                              int threads = 1);

// Paired variant: both metrics see the same resample; interval of a - b.
BootstrapInterval PairedBootstrapDeltaCi(std::size_t n,
                                         const ResampleMetric& metric_a,
                                         const ResampleMetric& metric_b,
                                         int n_samples = 9999,
                                         std::uint64_t seed = 0,
                                         int threads = 1);

// Wraps a metric that throws survmil::Error on degenerate input.
ResampleMetric SkipOnError(
    std::function<double(std::span<const std::size_t>)> metric);

struct BlockedMean {
  double mean = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

// Resamples whole blocks with replacement and recomputes the pooled mean.
BlockedMean BlockedBootstrapMean(std::span<const double> values,
                                 std::span<const std::string> block_ids,
                                 int n_samples = 9999, std::uint64_t seed = 0);

// Replicate pooled means, exposed for distribution checks.
std::vector<double> BlockedBootstrapReplicates(
    std::span<const double> values, std::span<const std::string> block_ids,
    int n_samples, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Risk groups and ranks

struct RiskThresholds {
  double low_cut = 0.0;
  double high_cut = 0.0;
};

enum class RiskGroup { kLow, kMedium, kHigh };

const char* RiskGroupName(RiskGroup g);

// Linear interpolation between order statistics (q in [0, 1]).
double Quantile(std::span<const double> values, double q);

// 25th / 75th percentiles of tune-set scores.
RiskThresholds ThresholdsFromTune(std::span<const double> tune_scores);

std::vector<RiskGroup> StratifyRisk(std::span<const double> scores,
                                    const RiskThresholds& thresholds);

// 1-based average ranks.
std::vector<double> AverageRanks(std::span<const double> values);

struct SpearmanResult {
  double rho = 0.0;
  double p_value = 1.0;
};

SpearmanResult Spearman(std::span<const double> a, std::span<const double> b);

// Tail probabilities.
double NormalTwoSidedP(double z);
double StudentTwoSidedP(double t, double dof);
double ChiSquareSf(double x, double dof);

}  // namespace survmil
