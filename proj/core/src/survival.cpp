#include "survmil/survival.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_set>

#include "survmil/error.hpp"
#include "survmil/random.hpp"

namespace survmil {
namespace {

constexpr double kZ975 = 1.959963984540054;

void RequireAligned(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ValidationError(std::string(what) + ": length mismatch (" +
                          std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

// Indices ordered by ascending time.
std::vector<std::size_t> OrderByTime(std::span<const SurvivalRecord> records) {
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return records[a].time_months < records[b].time_months;
  });
  return order;
}

class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}
  void Add(std::size_t i) {
    for (++i; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
  }
  // Count of inserted positions < i.
  std::int64_t Prefix(std::size_t i) const {
    std::int64_t s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

 private:
  std::vector<std::int64_t> tree_;
};

std::vector<std::size_t> DenseRanks(std::span<const double> values) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<std::size_t> ranks(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    ranks[i] = static_cast<std::size_t>(
        std::lower_bound(sorted.begin(), sorted.end(), values[i]) -
        sorted.begin());
  }
  return ranks;
}

}  // namespace

void ValidateRecords(std::span<const SurvivalRecord> records) {
  std::unordered_set<std::string> seen;
  for (const auto& r : records) {
    if (r.time_months < 1) {
      throw ValidationError("case " + r.case_id + ": time_months must be >= 1");
    }
    if (!seen.insert(r.case_id).second) {
      throw ValidationError("duplicate case_id " + r.case_id);
    }
  }
}

// ---------------------------------------------------------------------------

CovariateMatrix CovariateMatrix::SelectRows(
    std::span<const std::size_t> rows) const {
  CovariateMatrix out;
  out.columns = columns;
  out.values.resize(static_cast<Eigen::Index>(rows.size()), cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.values.row(static_cast<Eigen::Index>(i)) =
        values.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

CovariateMatrix CovariateMatrix::SelectColumns(
    std::span<const std::size_t> cols) const {
  CovariateMatrix out;
  out.values.resize(rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    out.values.col(static_cast<Eigen::Index>(j)) =
        values.col(static_cast<Eigen::Index>(cols[j]));
    out.columns.push_back(columns[cols[j]]);
  }
  return out;
}

CovariateMatrix CovariateMatrix::Append(const CovariateMatrix& other) const {
  if (cols() == 0) return other;
  if (other.cols() == 0) return *this;
  RequireAligned(static_cast<std::size_t>(rows()),
                 static_cast<std::size_t>(other.rows()), "covariate append");
  CovariateMatrix out;
  out.values.resize(rows(), cols() + other.cols());
  out.values << values, other.values;
  out.columns = columns;
  out.columns.insert(out.columns.end(), other.columns.begin(),
                     other.columns.end());
  return out;
}

CovariateMatrix EncodeCovariates(std::span<const RawCovariates> raw,
                                 std::span<const CovariateSpec> specs) {
  const auto n = static_cast<Eigen::Index>(raw.size());
  std::vector<Eigen::VectorXd> cols;
  CovariateMatrix out;
  for (const auto& spec : specs) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      auto it = raw[static_cast<std::size_t>(i)].find(spec.name);
      if (it == raw[static_cast<std::size_t>(i)].end()) {
        throw ValidationError("missing covariate " + spec.name);
      }
      v(i) = it->second;
    }
    if (n == 0 || v.maxCoeff() == v.minCoeff()) {
      throw ValidationError("constant column: " + spec.name);
    }
    switch (spec.kind) {
      case CovariateKind::kNumeric:
        cols.push_back(v);
        out.columns.push_back({spec.name, ColumnEncoding::kNumeric, {}});
        break;
      case CovariateKind::kAgeDecade:
        cols.push_back((v.array() - v.mean()) / 10.0);
        out.columns.push_back({spec.name, ColumnEncoding::kNumeric, {}});
        break;
      case CovariateKind::kStandardized: {
        const double mean = v.mean();
        const double sd =
            std::sqrt((v.array() - mean).square().sum() / static_cast<double>(n - 1));
        cols.push_back((v.array() - mean) / sd);
        out.columns.push_back({spec.name, ColumnEncoding::kNumeric, {}});
        break;
      }
      case CovariateKind::kCategorical: {
        std::set<double> levels(v.data(), v.data() + n);
        const double reference = *levels.begin();
        auto level_name = [](double x) {
          if (x == std::floor(x)) return std::to_string(static_cast<long long>(x));
          return std::to_string(x);
        };
        for (auto it = std::next(levels.begin()); it != levels.end(); ++it) {
          cols.push_back((v.array() == *it).cast<double>());
          out.columns.push_back({spec.name + "=" + level_name(*it),
                                 ColumnEncoding::kIndicator,
                                 level_name(reference)});
        }
        break;
      }
    }
  }
  out.values.resize(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    out.values.col(static_cast<Eigen::Index>(j)) = cols[j];
  }
  return out;
}

// ---------------------------------------------------------------------------

double KmCurve::SurvivalAt(int t) const {
  double s = 1.0;
  for (std::size_t i = 0; i < times.size() && times[i] <= t; ++i) s = survival[i];
  return s;
}

KmCurve KaplanMeier(std::span<const SurvivalRecord> records) {
  if (records.empty()) throw ValidationError("empty cohort");
  const auto order = OrderByTime(records);
  KmCurve curve;
  int at_risk = static_cast<int>(records.size());
  double s = 1.0;
  double greenwood = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    const int t = records[order[i]].time_months;
    int d = 0;
    int c = 0;
    std::size_t j = i;
    for (; j < order.size() && records[order[j]].time_months == t; ++j) {
      if (records[order[j]].event) {
        ++d;
      } else {
        ++c;
      }
    }
    if (d > 0) {
      s *= 1.0 - static_cast<double>(d) / at_risk;
      if (at_risk > d) {
        greenwood += static_cast<double>(d) /
                     (static_cast<double>(at_risk) * (at_risk - d));
      }
    }
    double lo = s;
    double hi = s;
    if (s > 0.0 && s < 1.0) {
      const double se = std::sqrt(greenwood) / std::abs(std::log(s));
      lo = std::pow(s, std::exp(kZ975 * se));
      hi = std::pow(s, std::exp(-kZ975 * se));
    }
    curve.times.push_back(t);
    curve.survival.push_back(s);
    curve.ci_lower.push_back(lo);
    curve.ci_upper.push_back(hi);
    curve.at_risk.push_back(at_risk);
    curve.events.push_back(d);
    curve.censored.push_back(c);
    at_risk -= d + c;
    i = j;
  }
  return curve;
}

// ---------------------------------------------------------------------------

LogRankResult LogRankTest(std::span<const SurvivalRecord> group_a,
                          std::span<const SurvivalRecord> group_b) {
  if (group_a.empty() || group_b.empty()) {
    throw ValidationError("log-rank: empty group");
  }
  struct Tagged {
    int time;
    bool event;
    bool in_a;
  };
  std::vector<Tagged> all;
  all.reserve(group_a.size() + group_b.size());
  for (const auto& r : group_a) all.push_back({r.time_months, r.event, true});
  for (const auto& r : group_b) all.push_back({r.time_months, r.event, false});
  std::stable_sort(all.begin(), all.end(),
                   [](const Tagged& x, const Tagged& y) { return x.time < y.time; });

  LogRankResult out;
  double n = static_cast<double>(all.size());
  double n_a = static_cast<double>(group_a.size());
  bool any_event = false;
  std::size_t i = 0;
  while (i < all.size()) {
    const int t = all[i].time;
    double d = 0.0, d_a = 0.0, leave = 0.0, leave_a = 0.0;
    for (; i < all.size() && all[i].time == t; ++i) {
      leave += 1.0;
      if (all[i].in_a) leave_a += 1.0;
      if (all[i].event) {
        d += 1.0;
        if (all[i].in_a) d_a += 1.0;
      }
    }
    if (d > 0.0) {
      any_event = true;
      const double frac = n_a / n;
      out.observed_a += d_a;
      out.expected_a += d * frac;
      if (n > 1.0) out.variance += d * frac * (1.0 - frac) * (n - d) / (n - 1.0);
    }
    n -= leave;
    n_a -= leave_a;
  }
  if (!any_event) throw ValidationError("no events");
  if (out.variance <= 0.0) throw NumericalError("log-rank: zero variance");
  const double diff = out.observed_a - out.expected_a;
  out.chi2 = diff * diff / out.variance;
  out.p_value = ChiSquareSf(out.chi2, 1.0);
  return out;
}

// ---------------------------------------------------------------------------

double BreslowLogLik(std::span<const double> scores,
                     std::span<const SurvivalRecord> records,
                     std::vector<double>* gradient) {
  RequireAligned(scores.size(), records.size(), "Breslow log-likelihood");
  const std::size_t n = records.size();
  if (std::none_of(records.begin(), records.end(),
                   [](const SurvivalRecord& r) { return r.event; })) {
    throw ValidationError("no events");
  }
  const double shift = *std::max_element(scores.begin(), scores.end());
  auto order = OrderByTime(records);
  std::reverse(order.begin(), order.end());  // descending time

  // Risk-set sums accumulate as time decreases.
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = std::exp(scores[i] - shift);

  struct Group {
    double risk_sum;
    double d;
  };
  std::vector<Group> groups;  // descending time
  std::vector<std::size_t> group_of(n);
  double loglik = 0.0;
  double risk_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    const int t = records[order[i]].time_months;
    std::size_t j = i;
    double d = 0.0;
    double event_score_sum = 0.0;
    for (; j < n && records[order[j]].time_months == t; ++j) {
      risk_sum += w[order[j]];
      if (records[order[j]].event) {
        d += 1.0;
        event_score_sum += scores[order[j]] - shift;
      }
    }
    for (std::size_t k = i; k < j; ++k) group_of[order[k]] = groups.size();
    groups.push_back({risk_sum, d});
    if (d > 0.0) loglik += event_score_sum - d * std::log(risk_sum);
    i = j;
  }

  if (gradient != nullptr) {
    // Case k sits in every risk set with time <= t_k, i.e. groups with
    // index >= group_of[k] in descending order.
    std::vector<double> tail(groups.size() + 1, 0.0);
    for (std::size_t g = groups.size(); g-- > 0;) {
      tail[g] = tail[g + 1] + (groups[g].d > 0.0 ? groups[g].d / groups[g].risk_sum : 0.0);
    }
    gradient->assign(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      (*gradient)[k] = (records[k].event ? 1.0 : 0.0) - w[k] * tail[group_of[k]];
    }
  }
  return loglik;
}

CoxDerivatives CoxEvaluate(std::span<const SurvivalRecord> records,
                           const Eigen::MatrixXd& x,
                           const Eigen::VectorXd& beta) {
  const auto n = static_cast<Eigen::Index>(records.size());
  const Eigen::Index p = x.cols();
  RequireAligned(records.size(), static_cast<std::size_t>(x.rows()), "cox");
  const Eigen::VectorXd eta = x * beta;
  const double shift = n > 0 ? eta.maxCoeff() : 0.0;

  auto order = OrderByTime(records);
  std::reverse(order.begin(), order.end());

  CoxDerivatives out;
  out.gradient = Eigen::VectorXd::Zero(p);
  out.information = Eigen::MatrixXd::Zero(p, p);
  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
  std::size_t i = 0;
  while (i < order.size()) {
    const int t = records[order[i]].time_months;
    double d = 0.0;
    Eigen::VectorXd x_events = Eigen::VectorXd::Zero(p);
    double eta_events = 0.0;
    std::size_t j = i;
    for (; j < order.size() && records[order[j]].time_months == t; ++j) {
      const auto r = static_cast<Eigen::Index>(order[j]);
      const double w = std::exp(eta(r) - shift);
      s0 += w;
      s1.noalias() += w * x.row(r).transpose();
      s2.noalias() += w * x.row(r).transpose() * x.row(r);
      if (records[order[j]].event) {
        d += 1.0;
        x_events += x.row(r).transpose();
        eta_events += eta(r) - shift;
      }
    }
    if (d > 0.0) {
      const Eigen::VectorXd mean = s1 / s0;
      out.loglik += eta_events - d * std::log(s0);
      out.gradient += x_events - d * mean;
      out.information += d * (s2 / s0 - mean * mean.transpose());
    }
    i = j;
  }
  return out;
}

double CoxFit::HazardRatio(Eigen::Index j) const {
  return std::exp(coefficients(j));
}

double CoxFit::WaldZ(Eigen::Index j) const {
  return coefficients(j) / std_errors(j);
}

double CoxFit::WaldP(Eigen::Index j) const { return NormalTwoSidedP(WaldZ(j)); }

std::pair<double, double> CoxFit::HazardRatioCi(Eigen::Index j) const {
  return {std::exp(coefficients(j) - kZ975 * std_errors(j)),
          std::exp(coefficients(j) + kZ975 * std_errors(j))};
}

Eigen::VectorXd CoxFit::LinearPredictor(const Eigen::MatrixXd& x) const {
  return x * coefficients;
}

CoxFit FitCox(std::span<const SurvivalRecord> records, const CovariateMatrix& x,
              const CoxOptions& options) {
  RequireAligned(records.size(), static_cast<std::size_t>(x.rows()), "cox_fit");
  if (std::none_of(records.begin(), records.end(),
                   [](const SurvivalRecord& r) { return r.event; })) {
    throw ValidationError("no events");
  }
  const Eigen::Index p = x.cols();
  CoxFit fit;
  for (const auto& c : x.columns) fit.names.push_back(c.name);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  CoxDerivatives cur = CoxEvaluate(records, x.values, beta);
  fit.loglik_null = cur.loglik;

  {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cur.information);
    const double max_ev = eig.eigenvalues().cwiseAbs().maxCoeff();
    if (p > 0 && (max_ev == 0.0 ||
                  eig.eigenvalues().minCoeff() <= 1e-10 * max_ev)) {
      throw NumericalError("collinear covariates");
    }
  }

  for (int iter = 1; iter <= options.max_iterations; ++iter) {
    fit.iterations = iter;
    const Eigen::VectorXd step = cur.information.ldlt().solve(cur.gradient);
    if (!step.allFinite()) throw NumericalError("collinear covariates");
    if (cur.gradient.lpNorm<Eigen::Infinity>() < options.gradient_tolerance &&
        step.lpNorm<Eigen::Infinity>() < options.step_tolerance) {
      fit.converged = true;
      fit.iterations = iter - 1;
      break;
    }
    // Near the optimum the change in loglik falls below its rounding error;
    // a decrease within that slack is not a decrease.
    const double floor = cur.loglik - 64.0 * std::numeric_limits<double>::epsilon() *
                                          std::max(1.0, std::abs(cur.loglik));
    double scale = 1.0;
    Eigen::VectorXd next = beta + step;
    CoxDerivatives trial = CoxEvaluate(records, x.values, next);
    for (int h = 0; h < options.max_halvings && !(trial.loglik >= floor); ++h) {
      scale *= 0.5;
      next = beta + scale * step;
      trial = CoxEvaluate(records, x.values, next);
    }
    if (!(trial.loglik >= floor)) {
      // No ascent along the Newton direction; treat the current point as final.
      break;
    }
    const bool rising = trial.loglik > cur.loglik;
    beta = next;
    cur = std::move(trial);
    if (beta.lpNorm<Eigen::Infinity>() > options.separation_bound && rising) {
      throw NumericalError("complete separation");
    }
  }
  if (!fit.converged &&
      cur.gradient.lpNorm<Eigen::Infinity>() < options.gradient_tolerance) {
    const Eigen::VectorXd step = cur.information.ldlt().solve(cur.gradient);
    fit.converged = step.lpNorm<Eigen::Infinity>() < options.step_tolerance;
  }
  fit.coefficients = beta;
  fit.loglik = cur.loglik;
  const Eigen::MatrixXd cov =
      cur.information.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  fit.std_errors = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  return fit;
}

// ---------------------------------------------------------------------------

double ConcordanceIndex(std::span<const double> scores,
                        std::span<const SurvivalRecord> records) {
  RequireAligned(scores.size(), records.size(), "concordance_index");
  const auto ranks = DenseRanks(scores);
  const auto order = OrderByTime(records);
  Fenwick later(scores.size());
  std::int64_t later_count = 0;
  std::int64_t pairs = 0;
  std::int64_t credit2 = 0;  // 2 * concordant + ties
  std::size_t hi = order.size();
  while (hi > 0) {
    const int t = records[order[hi - 1]].time_months;
    std::size_t lo = hi;
    while (lo > 0 && records[order[lo - 1]].time_months == t) --lo;
    for (std::size_t k = lo; k < hi; ++k) {
      const std::size_t i = order[k];
      if (!records[i].event) continue;
      const std::int64_t below = later.Prefix(ranks[i]);
      const std::int64_t equal = later.Prefix(ranks[i] + 1) - below;
      pairs += later_count;
      credit2 += 2 * below + equal;
    }
    for (std::size_t k = lo; k < hi; ++k) {
      later.Add(ranks[order[k]]);
      ++later_count;
    }
    hi = lo;
  }
  if (pairs == 0) throw ValidationError("no comparable pairs");
  return static_cast<double>(credit2) / (2.0 * static_cast<double>(pairs));
}

double AucAtHorizon(std::span<const double> scores,
                    std::span<const SurvivalRecord> records,
                    int horizon_months) {
  RequireAligned(scores.size(), records.size(), "auc_at_horizon");
  std::vector<double> kept;
  std::vector<bool> positive;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const bool pos = r.event && r.time_months <= horizon_months;
    if (!pos && r.time_months < horizon_months) continue;  // censored early
    kept.push_back(scores[i]);
    positive.push_back(pos);
  }
  const auto n_pos = static_cast<std::int64_t>(
      std::count(positive.begin(), positive.end(), true));
  const auto n_neg = static_cast<std::int64_t>(kept.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ValidationError("degenerate labels");
  // Doubled average ranks are integers, so the U statistic is exact.
  const auto ranks = AverageRanks(kept);
  std::int64_t rank2_sum = 0;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (positive[i]) rank2_sum += static_cast<std::int64_t>(std::llround(2.0 * ranks[i]));
  }
  const std::int64_t u2 = rank2_sum - n_pos * (n_pos + 1);
  return static_cast<double>(u2) /
         (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::size_t> DrawResample(std::size_t n, std::uint64_t seed,
                                      std::uint64_t replicate) {
  Rng rng(DeriveSeed(seed, replicate));
  std::vector<std::size_t> idx(n);
  for (auto& v : idx) v = UniformIndex(rng, n);
  return idx;
}

BootstrapInterval PercentileInterval(const std::vector<std::optional<double>>& reps) {
  BootstrapInterval out;
  std::vector<double> values;
  values.reserve(reps.size());
  for (const auto& r : reps) {
    if (r.has_value()) {
      values.push_back(*r);
    } else {
      ++out.skipped;
    }
  }
  out.used = static_cast<int>(values.size());
  if (values.empty() || 2 * out.skipped > static_cast<int>(reps.size())) {
    throw NumericalError("bootstrap: " + std::to_string(out.skipped) + " of " +
                         std::to_string(reps.size()) +
                         " replicates degenerate");
  }
  out.lower = Quantile(values, 0.025);
  out.upper = Quantile(values, 0.975);
  return out;
}

}  // namespace

ResampleMetric SkipOnError(
    std::function<double(std::span<const std::size_t>)> metric) {
  return [metric = std::move(metric)](
             std::span<const std::size_t> idx) -> std::optional<double> {
    try {
      return metric(idx);
    } catch (const Error&) {
      return std::nullopt;
    }
  };
}

BootstrapInterval BootstrapCi(std::size_t n, const ResampleMetric& metric,
                              int n_samples, std::uint64_t seed, int threads) {
  if (n < 2) throw ValidationError("bootstrap: sample size must be >= 2");
  if (n_samples < 1) throw ValidationError("bootstrap: n_samples must be >= 1");
  std::vector<std::optional<double>> reps(static_cast<std::size_t>(n_samples));
  ParallelFor(reps.size(), threads, [&](std::size_t r) {
    const auto idx = DrawResample(n, seed, r);
    reps[r] = metric(idx);
  });
  return PercentileInterval(reps);
}

BootstrapInterval PairedBootstrapDeltaCi(std::size_t n,
                                         const ResampleMetric& metric_a,
                                         const ResampleMetric& metric_b,
                                         int n_samples, std::uint64_t seed,
                                         int threads) {
  return BootstrapCi(
      n,
      [&](std::span<const std::size_t> idx) -> std::optional<double> {
        const auto a = metric_a(idx);
        if (!a) return std::nullopt;
        const auto b = metric_b(idx);
        if (!b) return std::nullopt;
        return *a - *b;
      },
      n_samples, seed, threads);
}

std::vector<double> BlockedBootstrapReplicates(
    std::span<const double> values, std::span<const std::string> block_ids,
    int n_samples, std::uint64_t seed) {
  RequireAligned(values.size(), block_ids.size(), "blocked bootstrap");
  if (values.empty()) throw ValidationError("blocked bootstrap: empty input");
  // Per-block sums and counts in first-appearance order.
  std::vector<std::string> names;
  std::vector<double> sums;
  std::vector<double> counts;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto [it, inserted] = index.emplace(block_ids[i], names.size());
    if (inserted) {
      names.push_back(block_ids[i]);
      sums.push_back(0.0);
      counts.push_back(0.0);
    }
    sums[it->second] += values[i];
    counts[it->second] += 1.0;
  }
  const std::size_t blocks = names.size();
  std::vector<double> reps(static_cast<std::size_t>(n_samples));
  for (std::size_t r = 0; r < reps.size(); ++r) {
    Rng rng(DeriveSeed(seed, r));
    double s = 0.0;
    double c = 0.0;
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::size_t pick = UniformIndex(rng, blocks);
      s += sums[pick];
      c += counts[pick];
    }
    reps[r] = s / c;
  }
  return reps;
}

BlockedMean BlockedBootstrapMean(std::span<const double> values,
                                 std::span<const std::string> block_ids,
                                 int n_samples, std::uint64_t seed) {
  const auto reps = BlockedBootstrapReplicates(values, block_ids, n_samples, seed);
  BlockedMean out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) /
             static_cast<double>(values.size());
  out.lower = Quantile(reps, 0.025);
  out.upper = Quantile(reps, 0.975);
  return out;
}

// ---------------------------------------------------------------------------

const char* RiskGroupName(RiskGroup g) {
  switch (g) {
    case RiskGroup::kLow:
      return "low";
    case RiskGroup::kMedium:
      return "medium";
    case RiskGroup::kHigh:
      return "high";
  }
  return "?";
}

double Quantile(std::span<const double> values, double q) {
  if (values.empty()) throw ValidationError("quantile of empty sample");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

RiskThresholds ThresholdsFromTune(std::span<const double> tune_scores) {
  return {Quantile(tune_scores, 0.25), Quantile(tune_scores, 0.75)};
}

std::vector<RiskGroup> StratifyRisk(std::span<const double> scores,
                                    const RiskThresholds& thresholds) {
  if (!std::isfinite(thresholds.low_cut) || !std::isfinite(thresholds.high_cut)) {
    throw ValidationError("risk thresholds must be finite");
  }
  std::vector<RiskGroup> out;
  out.reserve(scores.size());
  for (double s : scores) {
    if (s <= thresholds.low_cut) {
      out.push_back(RiskGroup::kLow);
    } else if (s > thresholds.high_cut) {
      out.push_back(RiskGroup::kHigh);
    } else {
      out.push_back(RiskGroup::kMedium);
    }
  }
  return out;
}

std::vector<double> AverageRanks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

SpearmanResult Spearman(std::span<const double> a, std::span<const double> b) {
  RequireAligned(a.size(), b.size(), "spearman");
  if (a.size() < 3) throw ValidationError("spearman: need at least 3 values");
  const auto ra = AverageRanks(a);
  const auto rb = AverageRanks(b);
  const Eigen::Map<const Eigen::VectorXd> va(ra.data(), static_cast<Eigen::Index>(ra.size()));
  const Eigen::Map<const Eigen::VectorXd> vb(rb.data(), static_cast<Eigen::Index>(rb.size()));
  const Eigen::VectorXd ca = va.array() - va.mean();
  const Eigen::VectorXd cb = vb.array() - vb.mean();
  const double saa = ca.squaredNorm();
  const double sbb = cb.squaredNorm();
  if (saa == 0.0 || sbb == 0.0) throw ValidationError("zero rank variance");
  SpearmanResult out;
  out.rho = std::clamp(ca.dot(cb) / std::sqrt(saa * sbb), -1.0, 1.0);
  const double dof = static_cast<double>(a.size()) - 2.0;
  if (std::abs(out.rho) >= 1.0) {
    out.p_value = 0.0;
  } else {
    const double t = out.rho * std::sqrt(dof / (1.0 - out.rho * out.rho));
    out.p_value = StudentTwoSidedP(t, dof);
  }
  return out;
}

double NormalTwoSidedP(double z) {
  return std::erfc(std::abs(z) / std::sqrt(2.0));
}

double StudentTwoSidedP(double t, double dof) {
  if (!std::isfinite(t)) return 0.0;
  boost::math::students_t dist(dof);
  return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
}

double ChiSquareSf(double x, double dof) {
  if (x <= 0.0) return 1.0;
  if (!std::isfinite(x)) return 0.0;
  boost::math::chi_squared dist(dof);
  return boost::math::cdf(boost::math::complement(dist, x));
}

}  // namespace survmil
