#pragma once

// Clustering-derived case features and regression-based explanation of
// case risk scores.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "survmil/survival.hpp"

namespace survmil {

struct ClusterModel {
  Eigen::MatrixXd centroids;  // k x d
  std::size_t fit_sample_size = 0;
  std::vector<double> inertia_history;  // one entry per Lloyd iteration
  int iterations = 0;

  int k() const { return static_cast<int>(centroids.rows()); }
};

struct KMeansOptions {
  int max_iterations = 300;
};

// k-means++ seeding then Lloyd iterations to an assignment fixpoint. Empty
// clusters are re-seeded from the point farthest from its centroid.
ClusterModel KMeansFit(const Eigen::MatrixXd& embeddings, int k, std::uint64_t seed,
                       const KMeansOptions& options = {});

// Nearest centroid; ties go to the lowest cluster id.
std::vector<int> AssignClusters(const ClusterModel& model, const Eigen::MatrixXd& patches);

double Inertia(const ClusterModel& model, const Eigen::MatrixXd& points);

// Percent of a case's patches in each cluster; throws on zero patches.
std::vector<double> Quantitate(std::span<const int> assignments, int k);

// Case x cluster percentage matrix with columns named "cluster_<j>".
CovariateMatrix QuantitationMatrix(std::span<const std::vector<double>> per_case);

struct OlsCoefficient {
  std::string name;
  double estimate = 0.0;
  double std_error = 0.0;
  double p_value = 1.0;
};

struct OlsFit {
  std::vector<OlsCoefficient> coefficients;  // excludes the intercept
  double intercept = 0.0;
  double r2 = 0.0;
  double adjusted_r2 = 0.0;
  std::size_t n = 0;
  Eigen::VectorXd residuals;
};

// Least squares with intercept via column-pivoted QR.
// Errors: rows < columns + 2; "collinear features" on rank deficiency.
OlsFit FitOls(const CovariateMatrix& x, std::span<const double> y);

// Zero-mean, unit (sample) variance copy.
std::vector<double> Standardize(std::span<const double> y);

struct StepwiseResult {
  std::vector<std::size_t> selected;  // column indices in selection order
  std::vector<double> adjusted_r2_path;
  OlsFit fit;
};

// Greedy forward selection on adjusted R^2; ties go to the lowest column.
// Candidates that would make the design rank deficient are skipped, and
// selection stops early when none remain.
StepwiseResult ForwardStepwise(const CovariateMatrix& features, std::span<const double> y,
                               int n_select = 10);

// Drops constant columns, then any column linearly dependent on earlier
// ones (together with the intercept). Returns the kept indices.
std::vector<std::size_t> IndependentColumns(const CovariateMatrix& x);

// Indices of the non-constant columns. Stepwise candidates: quantitations
// sum to 100, so IndependentColumns would hide one cluster from selection.
std::vector<std::size_t> VaryingColumns(const CovariateMatrix& x);

struct ClusterScoreSummary {
  int cluster = 0;
  std::size_t patches = 0;
  double mean = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
};

struct ClusterScoreTable {
  std::vector<ClusterScoreSummary> rows;  // present clusters, ascending id
  std::vector<int> empty_clusters;
};

ClusterScoreTable PatchClusterScores(std::span<const double> patch_scores,
                                     std::span<const int> cluster_ids,
                                     std::span<const std::string> slide_ids, int k,
                                     int n_samples = 9999, std::uint64_t seed = 0);

// OLS of standardized scores on encoded clinicopathologic covariates.
OlsFit ClinicoRegression(std::span<const RawCovariates> clinico,
                         std::span<const CovariateSpec> specs, std::span<const double> scores);

// Data needed to evaluate one candidate k.
struct SelectKInput {
  const Eigen::MatrixXd* fit_embeddings = nullptr;  // training patch sample
  std::vector<Eigen::MatrixXd> tune_case_patches;   // per tune case
  std::vector<double> tune_scores;                  // per tune case
  int n_select = 10;
};

struct SelectKResult {
  int k = 0;
  std::vector<std::pair<int, double>> adjusted_r2_by_k;
};

SelectKResult SelectK(std::span<const int> candidates, const SelectKInput& input,
                      std::uint64_t seed);

}  // namespace survmil
