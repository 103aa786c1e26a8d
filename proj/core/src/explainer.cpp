#include "survmil/explainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "survmil/error.hpp"
#include "survmil/random.hpp"

namespace survmil {
namespace {

double SquaredDistance(const Eigen::MatrixXd& a, Eigen::Index i,
                       const Eigen::MatrixXd& b, Eigen::Index j) {
  double s = 0.0;
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    const double d = a(i, c) - b(j, c);
    s += d * d;
  }
  return s;
}

// Returns the nearest centroid and its squared distance for row i.
std::pair<int, double> Nearest(const Eigen::MatrixXd& centroids,
                               const Eigen::MatrixXd& points, Eigen::Index i) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const double d = SquaredDistance(points, i, centroids, c);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return {best, best_d};
}

Eigen::MatrixXd SeedPlusPlus(const Eigen::MatrixXd& x, int k, Rng& rng) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd centroids(k, x.cols());
  std::vector<bool> chosen(static_cast<std::size_t>(n), false);
  Eigen::Index first = static_cast<Eigen::Index>(UniformIndex(rng, static_cast<std::size_t>(n)));
  centroids.row(0) = x.row(first);
  chosen[static_cast<std::size_t>(first)] = true;
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = SquaredDistance(x, i, centroids, 0);
  for (int c = 1; c < k; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    Eigen::Index pick = -1;
    if (total > 0.0) {
      double target = UniformUnit(rng) * total;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= d2[static_cast<std::size_t>(i)];
        if (target < 0.0 && d2[static_cast<std::size_t>(i)] > 0.0) {
          pick = i;
          break;
        }
      }
      if (pick < 0) {
        for (Eigen::Index i = n; i-- > 0;) {
          if (d2[static_cast<std::size_t>(i)] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    } else {
      // All remaining points coincide with a centroid.
      for (Eigen::Index i = 0; i < n && pick < 0; ++i) {
        if (!chosen[static_cast<std::size_t>(i)]) pick = i;
      }
    }
    chosen[static_cast<std::size_t>(pick)] = true;
    centroids.row(c) = x.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[static_cast<std::size_t>(i)] =
          std::min(d2[static_cast<std::size_t>(i)], SquaredDistance(x, i, centroids, c));
    }
  }
  return centroids;
}

}  // namespace

ClusterModel KMeansFit(const Eigen::MatrixXd& embeddings, int k, std::uint64_t seed,
                       const KMeansOptions& options) {
  const Eigen::Index n = embeddings.rows();
  if (k < 1) throw ValidationError("k must be >= 1");
  if (n < k) {
    throw ValidationError("k-means: k=" + std::to_string(k) + " exceeds sample size " +
                          std::to_string(n));
  }
  Rng rng(DeriveSeed(seed, 0x6b6d));
  ClusterModel model;
  model.fit_sample_size = static_cast<std::size_t>(n);
  model.centroids = SeedPlusPlus(embeddings, k, rng);

  std::vector<int> labels(static_cast<std::size_t>(n), -1);
  std::vector<double> dist(static_cast<std::size_t>(n));
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    bool changed = false;
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto [c, d] = Nearest(model.centroids, embeddings, i);
      if (labels[static_cast<std::size_t>(i)] != c) changed = true;
      labels[static_cast<std::size_t>(i)] = c;
      dist[static_cast<std::size_t>(i)] = d;
      inertia += d;
    }
    model.inertia_history.push_back(inertia);
    model.iterations = iter + 1;
    if (!changed) break;

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, embeddings.cols());
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(labels[static_cast<std::size_t>(i)]) += embeddings.row(i);
      ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        model.centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        continue;
      }
      // Re-seed from the point farthest from its centroid.
      const auto far = static_cast<Eigen::Index>(
          std::max_element(dist.begin(), dist.end()) - dist.begin());
      model.centroids.row(c) = embeddings.row(far);
      dist[static_cast<std::size_t>(far)] = 0.0;
      labels[static_cast<std::size_t>(far)] = c;
    }
  }
  return model;
}

std::vector<int> AssignClusters(const ClusterModel& model, const Eigen::MatrixXd& patches) {
  std::vector<int> out(static_cast<std::size_t>(patches.rows()));
  if (patches.rows() == 0) return out;
  if (patches.cols() != model.centroids.cols()) {
    throw ValidationError("assign: patch dimension does not match centroids");
  }
  for (Eigen::Index i = 0; i < patches.rows(); ++i) {
    out[static_cast<std::size_t>(i)] = Nearest(model.centroids, patches, i).first;
  }
  return out;
}

double Inertia(const ClusterModel& model, const Eigen::MatrixXd& points) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) s += Nearest(model.centroids, points, i).second;
  return s;
}

std::vector<double> Quantitate(std::span<const int> assignments, int k) {
  if (assignments.empty()) throw ValidationError("quantitate: case has no patches");
  std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
  for (int a : assignments) {
    if (a < 0 || a >= k) throw ValidationError("quantitate: cluster id out of range");
    counts[static_cast<std::size_t>(a)] += 1.0;
  }
  const double total = static_cast<double>(assignments.size());
  for (auto& c : counts) c = 100.0 * c / total;
  return counts;
}

CovariateMatrix QuantitationMatrix(std::span<const std::vector<double>> per_case) {
  CovariateMatrix out;
  if (per_case.empty()) return out;
  const std::size_t k = per_case.front().size();
  out.values.resize(static_cast<Eigen::Index>(per_case.size()), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < per_case.size(); ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = per_case[i][j];
    }
  }
  for (std::size_t j = 0; j < k; ++j) {
    out.columns.push_back({"cluster_" + std::to_string(j), ColumnEncoding::kNumeric, {}});
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kRankThreshold = 1e-9;

Eigen::MatrixXd WithIntercept(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd design(x.rows(), x.cols() + 1);
  design.col(0).setOnes();
  design.rightCols(x.cols()) = x;
  return design;
}

bool FullRank(const Eigen::MatrixXd& design) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(kRankThreshold);
  return qr.rank() == design.cols();
}

}  // namespace

OlsFit FitOls(const CovariateMatrix& x, std::span<const double> y) {
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  if (static_cast<std::size_t>(n) != y.size()) throw ValidationError("ols: length mismatch");
  if (n < p + 2) {
    throw ValidationError("ols: need rows >= columns + 2 (" + std::to_string(n) + " rows, " +
                          std::to_string(p) + " columns)");
  }
  const Eigen::MatrixXd design = WithIntercept(x.values);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(kRankThreshold);
  if (qr.rank() < design.cols()) throw NumericalError("collinear features");

  const Eigen::Map<const Eigen::VectorXd> yv(y.data(), n);
  const Eigen::VectorXd beta = qr.solve(yv);
  OlsFit fit;
  fit.n = static_cast<std::size_t>(n);
  fit.residuals = yv - design * beta;
  const double rss = fit.residuals.squaredNorm();
  const double tss = (yv.array() - yv.mean()).square().sum();
  if (!(tss > 0.0)) throw ValidationError("ols: constant response");
  fit.r2 = 1.0 - rss / tss;
  const double dof = static_cast<double>(n - p - 1);
  fit.adjusted_r2 = 1.0 - (1.0 - fit.r2) * static_cast<double>(n - 1) / dof;
  fit.intercept = beta(0);

  // (X'X)^-1 = P R^-1 R^-T P'.
  const Eigen::Index q = design.cols();
  const Eigen::MatrixXd r = qr.matrixR().topLeftCorner(q, q).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd r_inv =
      r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(q, q));
  const Eigen::MatrixXd unpermuted = r_inv * r_inv.transpose();
  const auto& perm = qr.colsPermutation();
  const Eigen::MatrixXd cov_unscaled = perm * unpermuted * perm.transpose();
  const double sigma2 = rss / dof;
  for (Eigen::Index j = 0; j < p; ++j) {
    OlsCoefficient c;
    c.name = x.columns.empty() ? "x" + std::to_string(j) : x.columns[static_cast<std::size_t>(j)].name;
    c.estimate = beta(j + 1);
    c.std_error = std::sqrt(std::max(0.0, sigma2 * cov_unscaled(j + 1, j + 1)));
    c.p_value = c.std_error > 0.0 ? StudentTwoSidedP(c.estimate / c.std_error, dof)
                                  : (c.estimate == 0.0 ? 1.0 : 0.0);
    fit.coefficients.push_back(std::move(c));
  }
  return fit;
}

std::vector<double> Standardize(std::span<const double> y) {
  if (y.size() < 2) throw ValidationError("standardize: need at least 2 values");
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double ss = 0.0;
  for (double v : y) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(y.size() - 1));
  if (!(sd > 0.0)) throw ValidationError("standardize: zero variance");
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = (y[i] - mean) / sd;
  return out;
}

std::vector<std::size_t> IndependentColumns(const CovariateMatrix& x) {
  std::vector<std::size_t> kept;
  Eigen::MatrixXd design = Eigen::MatrixXd::Ones(x.rows(), 1);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if (x.values.col(j).maxCoeff() == x.values.col(j).minCoeff()) continue;
    Eigen::MatrixXd trial(design.rows(), design.cols() + 1);
    trial << design, x.values.col(j);
    if (FullRank(trial)) {
      design = std::move(trial);
      kept.push_back(static_cast<std::size_t>(j));
    }
  }
  return kept;
}

std::vector<std::size_t> VaryingColumns(const CovariateMatrix& x) {
  std::vector<std::size_t> kept;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if (x.values.col(j).maxCoeff() != x.values.col(j).minCoeff()) kept.push_back(static_cast<std::size_t>(j));
  }
  return kept;
}

StepwiseResult ForwardStepwise(const CovariateMatrix& features, std::span<const double> y,
                               int n_select) {
  if (n_select < 1) throw ValidationError("stepwise: n_select must be >= 1");
  if (features.cols() < n_select) {
    throw ValidationError("stepwise: " + std::to_string(features.cols()) +
                          " candidate features, need " + std::to_string(n_select));
  }
  StepwiseResult result;
  std::vector<bool> used(static_cast<std::size_t>(features.cols()), false);
  std::optional<OlsFit> current;
  while (static_cast<int>(result.selected.size()) < n_select) {
    std::optional<std::size_t> best;
    std::optional<OlsFit> best_fit;
    for (Eigen::Index j = 0; j < features.cols(); ++j) {
      if (used[static_cast<std::size_t>(j)]) continue;
      std::vector<std::size_t> cols = result.selected;
      cols.push_back(static_cast<std::size_t>(j));
      try {
        OlsFit fit = FitOls(features.SelectColumns(cols), y);
        if (!best_fit || fit.adjusted_r2 > best_fit->adjusted_r2) {
          best = static_cast<std::size_t>(j);
          best_fit = std::move(fit);
        }
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kNumerical) throw;
      }
    }
    if (!best) break;
    used[*best] = true;
    result.selected.push_back(*best);
    result.adjusted_r2_path.push_back(best_fit->adjusted_r2);
    current = std::move(best_fit);
  }
  if (!current) throw NumericalError("stepwise: no feature could be added");
  result.fit = std::move(*current);
  return result;
}

// ---------------------------------------------------------------------------

ClusterScoreTable PatchClusterScores(std::span<const double> patch_scores,
                                     std::span<const int> cluster_ids,
                                     std::span<const std::string> slide_ids, int k,
                                     int n_samples, std::uint64_t seed) {
  if (patch_scores.size() != cluster_ids.size() || patch_scores.size() != slide_ids.size()) {
    throw ValidationError("patch cluster scores: length mismatch");
  }
  if (patch_scores.empty()) throw ValidationError("patch cluster scores: empty input");
  std::vector<std::vector<double>> values(static_cast<std::size_t>(k));
  std::vector<std::vector<std::string>> blocks(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < patch_scores.size(); ++i) {
    const int c = cluster_ids[i];
    if (c < 0 || c >= k) throw ValidationError("patch cluster scores: cluster id out of range");
    values[static_cast<std::size_t>(c)].push_back(patch_scores[i]);
    blocks[static_cast<std::size_t>(c)].push_back(slide_ids[i]);
  }
  ClusterScoreTable table;
  for (int c = 0; c < k; ++c) {
    const auto& v = values[static_cast<std::size_t>(c)];
    if (v.empty()) {
      table.empty_clusters.push_back(c);
      continue;
    }
    const BlockedMean bm = BlockedBootstrapMean(v, blocks[static_cast<std::size_t>(c)], n_samples,
                                                DeriveSeed(seed, static_cast<std::uint64_t>(c)));
    table.rows.push_back({c, v.size(), bm.mean, bm.lower, bm.upper, Quantile(v, 0.25),
                          Quantile(v, 0.75)});
  }
  return table;
}

OlsFit ClinicoRegression(std::span<const RawCovariates> clinico,
                         std::span<const CovariateSpec> specs, std::span<const double> scores) {
  const CovariateMatrix x = EncodeCovariates(clinico, specs);
  const auto y = Standardize(scores);
  return FitOls(x, y);
}

SelectKResult SelectK(std::span<const int> candidates, const SelectKInput& input,
                      std::uint64_t seed) {
  if (candidates.empty()) throw ValidationError("select_k: no candidates");
  if (input.fit_embeddings == nullptr) throw ValidationError("select_k: no embeddings");
  const auto y = Standardize(input.tune_scores);
  SelectKResult result;
  double best = -std::numeric_limits<double>::infinity();
  for (int k : candidates) {
    const ClusterModel model = KMeansFit(*input.fit_embeddings, k, seed);
    std::vector<std::vector<double>> quant;
    quant.reserve(input.tune_case_patches.size());
    for (const auto& patches : input.tune_case_patches) {
      quant.push_back(Quantitate(AssignClusters(model, patches), k));
    }
    const CovariateMatrix full = QuantitationMatrix(quant);
    const auto cols = VaryingColumns(full);
    const CovariateMatrix usable = full.SelectColumns(cols);
    const int max_select = std::min<int>(
        {input.n_select, static_cast<int>(usable.cols()), static_cast<int>(usable.rows()) - 3});
    double adj = -std::numeric_limits<double>::infinity();
    if (max_select >= 1) adj = ForwardStepwise(usable, y, max_select).fit.adjusted_r2;
    result.adjusted_r2_by_k.emplace_back(k, adj);
    if (adj > best) {
      best = adj;
      result.k = k;
    }
  }
  if (result.k == 0) throw NumericalError("select_k: no candidate produced a usable fit");
  return result;
}

}  // namespace survmil
