#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "survmil/error.hpp"
#include "survmil/survival.hpp"
#include "survmil/synth.hpp"

using namespace survmil;
using oracle::Rec;

namespace {

std::vector<SurvivalRecord> Records(const std::vector<int>& t, const std::vector<bool>& e) {
  std::vector<SurvivalRecord> r;
  for (std::size_t i = 0; i < t.size(); ++i) r.push_back(Rec("c" + std::to_string(i), t[i], e[i]));
  return r;
}

CovariateMatrix Column(const std::string& name, const std::vector<double>& v) {
  CovariateMatrix x;
  x.values = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  x.columns = {{name, ColumnEncoding::kNumeric, ""}};
  return x;
}

}  // namespace

// --- records and covariates -------------------------------------------------

TEST(Records, RejectsNonPositiveTimeAndDuplicates) {
  EXPECT_THROW(ValidateRecords(Records({0}, {true})), Error);
  std::vector<SurvivalRecord> dup{Rec("a", 1, true), Rec("a", 2, false)};
  EXPECT_THROW(ValidateRecords(dup), Error);
  EXPECT_NO_THROW(ValidateRecords(Records({1, 2}, {true, false})));
}

TEST(Covariates, CategoricalUsesFirstSortedLevelAsReference) {
  std::vector<RawCovariates> raw{{{"stage", 3}}, {{"stage", 2}}, {{"stage", 4}}, {{"stage", 2}}};
  std::vector<CovariateSpec> specs{{"stage", CovariateKind::kCategorical}};
  const auto x = EncodeCovariates(raw, specs);
  ASSERT_EQ(x.cols(), 2);
  EXPECT_EQ(x.columns[0].name, "stage=3");
  EXPECT_EQ(x.columns[1].name, "stage=4");
  EXPECT_EQ(x.columns[0].reference_level, "2");
  EXPECT_EQ(x.values(0, 0), 1.0);
  EXPECT_EQ(x.values(2, 1), 1.0);
  EXPECT_EQ(x.values(1, 0) + x.values(1, 1), 0.0);
}

TEST(Covariates, AgeDecadeCentersAndScales) {
  std::vector<RawCovariates> raw{{{"age", 50}}, {{"age", 70}}};
  std::vector<CovariateSpec> specs{{"age", CovariateKind::kAgeDecade}};
  const auto x = EncodeCovariates(raw, specs);
  EXPECT_DOUBLE_EQ(x.values(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(x.values(1, 0), 1.0);
}

TEST(Covariates, ConstantColumnIsAnError) {
  std::vector<RawCovariates> raw{{{"sex", 1}}, {{"sex", 1}}};
  std::vector<CovariateSpec> specs{{"sex", CovariateKind::kCategorical}};
  try {
    EncodeCovariates(raw, specs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("constant column"), std::string::npos);
  }
}

// --- Kaplan-Meier ------------------------------------------------------------

TEST(KaplanMeier, HandExample) {
  const auto km = KaplanMeier(Records({1, 2, 3}, {true, false, true}));
  EXPECT_NEAR(km.SurvivalAt(1), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(km.SurvivalAt(2), 2.0 / 3.0, 1e-15);
  EXPECT_EQ(km.SurvivalAt(3), 0.0);
}

TEST(KaplanMeier, NoEventsStaysAtOne) {
  const auto km = KaplanMeier(Records({3, 5, 9}, {false, false, false}));
  for (double s : km.survival) EXPECT_EQ(s, 1.0);
}

TEST(KaplanMeier, UncensoredEqualsEmpirical) {
  const auto km = KaplanMeier(Records({1, 2}, {true, true}));
  EXPECT_EQ(km.SurvivalAt(1), 0.5);
  EXPECT_EQ(km.SurvivalAt(2), 0.0);
}

TEST(KaplanMeier, EmptyCohortIsAnError) {
  EXPECT_THROW(KaplanMeier(std::vector<SurvivalRecord>{}), Error);
}

TEST(KaplanMeier, GreenwoodLogLogBounds) {
  const auto r = Records({2, 3, 3, 5, 7, 8, 8, 10}, {true, true, false, true, false, true, true, false});
  const auto km = KaplanMeier(r);
  double greenwood = 0.0;
  double s = 1.0;
  for (std::size_t k = 0; k < km.times.size(); ++k) {
    const double n = km.at_risk[k], d = km.events[k];
    s *= 1.0 - d / n;
    if (d > 0 && n > d) greenwood += d / (n * (n - d));
    if (s <= 0.0 || s >= 1.0) continue;
    const double se = std::sqrt(greenwood) / std::abs(std::log(s));
    EXPECT_NEAR(km.ci_lower[k], std::pow(s, std::exp(1.959963984540054 * se)), 1e-12);
    EXPECT_NEAR(km.ci_upper[k], std::pow(s, std::exp(-1.959963984540054 * se)), 1e-12);
  }
}

TEST(KaplanMeier, MatchesProductLimitOracleAndInvariants) {
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    const auto f = oracle::Fuzz(seed, 30, 15);
    const auto km = KaplanMeier(f.records);
    const auto ref = oracle::KaplanMeier(f.records);
    ASSERT_EQ(km.times.size(), ref.size());
    for (std::size_t k = 0; k < ref.size(); ++k) {
      EXPECT_EQ(km.times[k], ref[k].time);
      EXPECT_EQ(km.at_risk[k], ref[k].at_risk);
      EXPECT_NEAR(km.survival[k], ref[k].survival, 1e-12);
      EXPECT_LE(km.ci_lower[k], km.survival[k] + 1e-15);
      EXPECT_GE(km.ci_upper[k], km.survival[k] - 1e-15);
      if (k > 0) EXPECT_LE(km.survival[k], km.survival[k - 1]);
    }
  }
}

// --- log-rank ----------------------------------------------------------------

TEST(LogRank, IdenticalGroupsGiveZero) {
  const auto a = Records({1, 3, 4, 6}, {true, false, true, true});
  auto b = a;
  for (auto& r : b) r.case_id += "b";
  const auto res = LogRankTest(a, b);
  EXPECT_NEAR(res.chi2, 0.0, 1e-15);
  EXPECT_NEAR(res.p_value, 1.0, 1e-12);
}

TEST(LogRank, SeparatedGroupsAreSignificant) {
  std::vector<SurvivalRecord> a, b;
  for (int i = 0; i < 10; ++i) {
    a.push_back(Rec("a" + std::to_string(i), 1, true));
    b.push_back(Rec("b" + std::to_string(i), 10, true));
  }
  const auto res = LogRankTest(a, b);
  // At month 1: d = 10, n = 20, n_a = 10 -> O - E = 5, V = 10 * .5 * .5 * 10 / 19.
  // At month 10 only group b remains, contributing nothing.
  const double v = 10.0 * 0.25 * 10.0 / 19.0;
  EXPECT_NEAR(res.chi2, 25.0 / v, 1e-12);
  EXPECT_LT(res.p_value, 1e-3);
}

TEST(LogRank, Errors) {
  const auto a = Records({1, 2}, {true, false});
  EXPECT_THROW(LogRankTest(a, std::vector<SurvivalRecord>{}), Error);
  const auto none = Records({1, 2}, {false, false});
  auto none_b = none;
  for (auto& r : none_b) r.case_id += "b";
  try {
    LogRankTest(none, none_b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("no events"), std::string::npos);
  }
}

TEST(LogRank, MatchesOracle) {
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    const auto f = oracle::Fuzz(seed, 24, 10);
    std::vector<SurvivalRecord> a, b;
    for (std::size_t i = 0; i < f.records.size(); ++i) (f.scores[i] < 0.5 ? a : b).push_back(f.records[i]);
    const auto ref = oracle::LogRankTest(a, b);
    if (a.empty() || b.empty() || !ref) {
      EXPECT_THROW(LogRankTest(a, b), Error);
      continue;
    }
    const auto res = LogRankTest(a, b);
    EXPECT_NEAR(res.chi2, ref->chi2, 1e-12 * std::max(1.0, ref->chi2));
    EXPECT_NEAR(res.observed_a, ref->observed_a, 1e-12);
    EXPECT_NEAR(res.expected_a, ref->expected_a, 1e-12);
  }
}

// --- Cox ---------------------------------------------------------------------

TEST(Breslow, TiedThreeRecordExample) {
  const auto r = Records({1, 1, 2}, {true, true, true});
  const std::vector<double> at_zero{0.0, 0.0, 0.0};
  EXPECT_NEAR(BreslowLogLik(at_zero, r), -2.0 * std::log(3.0), 1e-12);
  // The covariate enters only through beta; beta = 0 is the stated point.
  const auto d = CoxEvaluate(r, Column("x", {1.0, 0.0, 0.5}).values, Eigen::VectorXd::Zero(1));
  EXPECT_NEAR(d.loglik, -2.0 * std::log(3.0), 1e-12);
}

TEST(Breslow, MatchesDefinitionOnRandomInputs) {
  Rng rng(11);
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const auto f = oracle::Fuzz(seed, 20, 6);
    if (std::none_of(f.records.begin(), f.records.end(), [](auto& r) { return r.event; })) continue;
    std::vector<double> eta;
    for (std::size_t i = 0; i < f.records.size(); ++i) eta.push_back(StandardNormal(rng));
    EXPECT_NEAR(BreslowLogLik(eta, f.records), oracle::BreslowLogLik(eta, f.records), 1e-11);
  }
}

TEST(Breslow, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto f = oracle::Fuzz(seed + 1000, 15, 5);
    f.records[0].event = true;
    std::vector<double> eta;
    for (std::size_t i = 0; i < f.records.size(); ++i) eta.push_back(StandardNormal(rng));
    std::vector<double> g;
    BreslowLogLik(eta, f.records, &g);
    for (std::size_t i = 0; i < eta.size(); ++i) {
      auto up = eta, dn = eta;
      up[i] += 1e-5;
      dn[i] -= 1e-5;
      const double fd = (oracle::BreslowLogLik(up, f.records) - oracle::BreslowLogLik(dn, f.records)) / 2e-5;
      EXPECT_NEAR(g[i], fd, 1e-7);
    }
  }
}

TEST(Cox, GradientAndInformationMatchFiniteDifferences) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto f = oracle::Fuzz(500 + trial, 25, 8);
    f.records[0].event = true;
    const auto n = static_cast<Eigen::Index>(f.records.size());
    Eigen::MatrixXd x(n, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = StandardNormal(rng);
    Eigen::VectorXd beta(3);
    for (int j = 0; j < 3; ++j) beta(j) = 0.5 * StandardNormal(rng);
    const auto d = CoxEvaluate(f.records, x, beta);
    for (int j = 0; j < 3; ++j) {
      Eigen::VectorXd up = beta, dn = beta;
      up(j) += 1e-5;
      dn(j) -= 1e-5;
      const auto du = CoxEvaluate(f.records, x, up);
      const auto dd = CoxEvaluate(f.records, x, dn);
      const double fd = (du.loglik - dd.loglik) / 2e-5;
      EXPECT_LE(std::abs(d.gradient(j) - fd) / std::max({std::abs(fd), std::abs(d.gradient(j)), 1e-6}), 1e-6);
      for (int k = 0; k < 3; ++k) {
        const double fd2 = -(du.gradient(k) - dd.gradient(k)) / 2e-5;
        EXPECT_NEAR(d.information(k, j), fd2, 1e-5 * std::max(1.0, std::abs(fd2)));
      }
    }
  }
}

TEST(Cox, TwoRecordSeparation) {
  const auto r = Records({1, 2}, {true, true});
  try {
    FitCox(r, Column("x", {1.0, 0.0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("complete separation"), std::string::npos);
  }
}

TEST(Cox, CollinearCovariates) {
  const auto r = Records({1, 2, 3, 4, 5}, {true, true, false, true, true});
  CovariateMatrix x;
  x.values.resize(5, 2);
  x.values << 1, 2, 2, 4, 3, 6, 4, 8, 0, 0;
  x.columns = {{"a", ColumnEncoding::kNumeric, ""}, {"b", ColumnEncoding::kNumeric, ""}};
  try {
    FitCox(r, x);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("collinear covariates"), std::string::npos);
  }
}

TEST(Cox, NoEvents) {
  EXPECT_THROW(FitCox(Records({1, 2, 3}, {false, false, false}), Column("x", {0, 1, 2})), Error);
}

TEST(Cox, LocalMaximumAndConvergedGradient) {
  Rng rng(21);
  std::vector<SurvivalRecord> r;
  CovariateMatrix x;
  x.values.resize(300, 2);
  x.columns = {{"a", ColumnEncoding::kNumeric, ""}, {"b", ColumnEncoding::kNumeric, ""}};
  for (int i = 0; i < 300; ++i) {
    x.values(i, 0) = StandardNormal(rng);
    x.values(i, 1) = UniformUnit(rng) < 0.5 ? 1.0 : 0.0;
    const double hazard = 0.02 * std::exp(0.7 * x.values(i, 0) - 0.4 * x.values(i, 1));
    const double t = Exponential(rng, hazard), c = Exponential(rng, 0.01);
    r.push_back(Rec("c" + std::to_string(i), std::max(1, static_cast<int>(std::ceil(std::min(t, c)))), t <= c));
  }
  const CoxFit fit = FitCox(r, x);
  ASSERT_TRUE(fit.converged);
  const auto d = CoxEvaluate(r, x.values, fit.coefficients);
  EXPECT_LT(d.gradient.cwiseAbs().maxCoeff(), 1e-7);
  EXPECT_GE(fit.loglik, fit.loglik_null);
  for (int j = 0; j < 2; ++j) {
    for (double eps : {1e-3, -1e-3}) {
      Eigen::VectorXd b = fit.coefficients;
      b(j) += eps;
      EXPECT_GE(fit.loglik, CoxEvaluate(r, x.values, b).loglik);
    }
    EXPECT_GT(fit.HazardRatio(j), 0.0);
    const auto [lo, hi] = fit.HazardRatioCi(j);
    EXPECT_LT(lo, fit.HazardRatio(j));
    EXPECT_GT(hi, fit.HazardRatio(j));
    EXPECT_GE(fit.WaldP(j), 0.0);
    EXPECT_LE(fit.WaldP(j), 1.0);
  }
  // Standard errors come from the inverse information diagonal.
  const Eigen::MatrixXd cov = d.information.inverse();
  for (int j = 0; j < 2; ++j) EXPECT_NEAR(fit.std_errors(j), std::sqrt(cov(j, j)), 1e-9);
}

namespace {

CoxFit FitPlantedSex(double hr, std::uint64_t seed) {
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
  const auto syn = Generate(g);
  std::vector<SurvivalRecord> r;
  std::vector<RawCovariates> raw;
  for (const auto& e : syn.cohort) {
    r.push_back(e.record);
    raw.push_back(e.covariates);
  }
  const std::vector<CovariateSpec> specs{{"sex", CovariateKind::kCategorical}};
  return FitCox(r, EncodeCovariates(raw, specs));
}

}  // namespace

TEST(Cox, RecoversPlantedHazardRatio) {
  const CoxFit fit = FitPlantedSex(2.0, 2024);
  EXPECT_TRUE(fit.converged);
  EXPECT_LT(std::abs(fit.coefficients(0) - std::log(2.0)), 0.15);
}

// Here the last Newton steps change the loglik by less than its rounding
// error; the fit must still reach the gradient tolerance.
TEST(Cox, ConvergesWhenLoglikGainIsBelowRounding) {
  const CoxFit fit = FitPlantedSex(1.5, 118);
  EXPECT_TRUE(fit.converged);
}

// --- discrimination ------------------------------------------------------------

TEST(CIndex, Examples) {
  const auto r = Records({1, 2, 3, 4}, {true, true, true, true});
  EXPECT_EQ(ConcordanceIndex(std::vector<double>{-1, -2, -3, -4}, r), 1.0);
  EXPECT_EQ(ConcordanceIndex(std::vector<double>{7, 7, 7, 7}, r), 0.5);
  EXPECT_DOUBLE_EQ(ConcordanceIndex(std::vector<double>{3, 1, 2}, Records({1, 2, 3}, {true, true, false})),
                   2.0 / 3.0);
  EXPECT_THROW(ConcordanceIndex(std::vector<double>{1, 2}, Records({1, 2}, {false, false})), Error);
}

TEST(CIndex, ExactlyMatchesPairEnumeration) {
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    const auto f = oracle::Fuzz(seed);
    const auto ref = oracle::CIndex(f.scores, f.records);
    if (!ref) {
      EXPECT_THROW(ConcordanceIndex(f.scores, f.records), Error);
    } else {
      EXPECT_EQ(ConcordanceIndex(f.scores, f.records), *ref) << "seed " << seed;
    }
  }
}

TEST(HorizonAuc, Examples) {
  const std::vector<SurvivalRecord> r{Rec("a", 12, true), Rec("b", 12, true), Rec("c", 80, false),
                                      Rec("d", 80, false), Rec("e", 30, false)};
  EXPECT_EQ(AucAtHorizon(std::vector<double>{0.9, 0.8, 0.1, 0.2, 0.5}, r, 60), 1.0);
  EXPECT_EQ(AucAtHorizon(std::vector<double>{1, 1, 1, 1, 1}, r, 60), 0.5);
  const std::vector<SurvivalRecord> all_pos{Rec("a", 12, true), Rec("b", 20, true), Rec("e", 30, false)};
  try {
    AucAtHorizon(std::vector<double>{1, 2, 3}, all_pos, 60);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("degenerate labels"), std::string::npos);
  }
}

TEST(HorizonAuc, ExactlyMatchesMannWhitneyCount) {
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    const auto f = oracle::Fuzz(seed, 12, 8);
    for (int horizon : {2, 4, 6}) {
      const auto ref = oracle::HorizonAuc(f.scores, f.records, horizon);
      if (!ref) {
        EXPECT_THROW(AucAtHorizon(f.scores, f.records, horizon), Error);
      } else {
        EXPECT_EQ(AucAtHorizon(f.scores, f.records, horizon), *ref) << "seed " << seed;
      }
    }
  }
}

TEST(CIndex, CoxLinearPredictorMatchesEnumeration) {
  Rng rng(8);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto f = oracle::Fuzz(seed + 77, 12, 6);
    if (f.records.size() < 4) continue;
    std::vector<double> xv;
    for (std::size_t i = 0; i < f.records.size(); ++i) xv.push_back(StandardNormal(rng));
    CoxFit fit;
    try {
      fit = FitCox(f.records, Column("x", xv));
    } catch (const Error&) {
      continue;  // separation and event-free cohorts are covered elsewhere
    }
    const Eigen::VectorXd lp =
        fit.LinearPredictor(Eigen::Map<const Eigen::VectorXd>(xv.data(), static_cast<Eigen::Index>(xv.size())));
    const std::vector<double> s(lp.data(), lp.data() + lp.size());
    const auto ref = oracle::CIndex(s, f.records);
    if (ref) EXPECT_EQ(ConcordanceIndex(s, f.records), *ref);
  }
}

// --- bootstrap ---------------------------------------------------------------

TEST(Bootstrap, ConstantMetricGivesPointInterval) {
  const auto ci = BootstrapCi(10, [](std::span<const std::size_t>) { return std::optional<double>(0.3); }, 500, 1);
  EXPECT_EQ(ci.lower, 0.3);
  EXPECT_EQ(ci.upper, 0.3);
}

TEST(Bootstrap, DeterministicAcrossRunsAndThreads) {
  Rng rng(4);
  std::vector<double> v(50);
  for (auto& x : v) x = StandardNormal(rng);
  auto mean = [&](std::span<const std::size_t> idx) {
    double s = 0;
    for (auto i : idx) s += v[i];
    return std::optional<double>(s / static_cast<double>(idx.size()));
  };
  const auto a = BootstrapCi(v.size(), mean, 999, 42, 1);
  const auto b = BootstrapCi(v.size(), mean, 999, 42, 4);
  EXPECT_EQ(a.lower, b.lower);
  EXPECT_EQ(a.upper, b.upper);
  const auto c = BootstrapCi(v.size(), mean, 999, 43, 1);
  EXPECT_NE(a.lower, c.lower);
}

TEST(Bootstrap, GaussianMeanWidthMatchesAnalytic) {
  Rng rng(99);
  std::vector<double> v(200);
  for (auto& x : v) x = StandardNormal(rng);
  auto mean = [&](std::span<const std::size_t> idx) {
    double s = 0;
    for (auto i : idx) s += v[i];
    return std::optional<double>(s / static_cast<double>(idx.size()));
  };
  const auto ci = BootstrapCi(v.size(), mean, 9999, 7, 4);
  const double analytic = 2.0 * 1.959963984540054 / std::sqrt(200.0);
  EXPECT_NEAR((ci.upper - ci.lower) / analytic, 1.0, 0.2);
}

TEST(Bootstrap, SkipsDegenerateReplicatesAndFailsPastHalf) {
  int calls = 0;
  auto sometimes = [&](std::span<const std::size_t> idx) -> std::optional<double> {
    ++calls;
    if (idx[0] % 4 == 0) return std::nullopt;
    return 1.0;
  };
  const auto ci = BootstrapCi(8, sometimes, 400, 3);
  EXPECT_GT(ci.skipped, 0);
  EXPECT_EQ(ci.skipped + ci.used, 400);
  auto mostly = [](std::span<const std::size_t> idx) -> std::optional<double> {
    if (idx[0] % 4 != 0) return std::nullopt;
    return 1.0;
  };
  EXPECT_THROW(BootstrapCi(8, mostly, 400, 3), Error);
}

TEST(Bootstrap, PairedDeltaOfIdenticalMetricsIsZero) {
  auto m = [](std::span<const std::size_t> idx) {
    return std::optional<double>(static_cast<double>(std::accumulate(idx.begin(), idx.end(), std::size_t{0})));
  };
  const auto ci = PairedBootstrapDeltaCi(20, m, m, 300, 5);
  EXPECT_EQ(ci.lower, 0.0);
  EXPECT_EQ(ci.upper, 0.0);
}

TEST(BlockedBootstrap, SingleBlockCollapses) {
  const std::vector<double> v{0.1, 0.4, 0.9};
  const std::vector<std::string> b{"s", "s", "s"};
  const auto res = BlockedBootstrapMean(v, b, 999, 1);
  EXPECT_DOUBLE_EQ(res.lower, res.mean);
  EXPECT_DOUBLE_EQ(res.upper, res.mean);
}

TEST(BlockedBootstrap, TwoBlocksGiveThreeReplicateValues) {
  std::vector<double> v;
  std::vector<std::string> b;
  for (int i = 0; i < 50; ++i) {
    v.push_back(0.0);
    b.push_back("a");
    v.push_back(1.0);
    b.push_back("b");
  }
  const auto reps = BlockedBootstrapReplicates(v, b, 2000, 9);
  std::set<double> seen(reps.begin(), reps.end());
  EXPECT_EQ(seen, (std::set<double>{0.0, 0.5, 1.0}));
  const double half = static_cast<double>(std::count(reps.begin(), reps.end(), 0.5)) / 2000.0;
  EXPECT_NEAR(half, 0.5, 0.05);
  const auto x = BlockedBootstrapMean(v, b, 999, 3), y = BlockedBootstrapMean(v, b, 999, 3);
  EXPECT_EQ(x.lower, y.lower);
  EXPECT_EQ(x.upper, y.upper);
  EXPECT_THROW(BlockedBootstrapMean(std::vector<double>{}, std::vector<std::string>{}, 10, 1), Error);
}

// --- risk groups and ranks ---------------------------------------------------------

TEST(Risk, QuartileExample) {
  const std::vector<double> s{1, 2, 3, 4};
  const auto cuts = ThresholdsFromTune(s);
  EXPECT_DOUBLE_EQ(cuts.low_cut, 1.75);
  EXPECT_DOUBLE_EQ(cuts.high_cut, 3.25);
  const auto g = StratifyRisk(s, cuts);
  EXPECT_EQ(g, (std::vector<RiskGroup>{RiskGroup::kLow, RiskGroup::kMedium, RiskGroup::kMedium, RiskGroup::kHigh}));
}

TEST(Risk, EqualCutsAndAllLow) {
  const RiskThresholds same{2.0, 2.0};
  const auto g = StratifyRisk(std::vector<double>{1, 2, 3}, same);
  EXPECT_EQ(g, (std::vector<RiskGroup>{RiskGroup::kLow, RiskGroup::kLow, RiskGroup::kHigh}));
  const auto low = StratifyRisk(std::vector<double>{-5, -4}, RiskThresholds{0, 1});
  EXPECT_EQ(low, (std::vector<RiskGroup>{RiskGroup::kLow, RiskGroup::kLow}));
}

TEST(Risk, InvariantUnderMonotoneTransform) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> tune(20), eval(30);
    for (auto& v : tune) v = StandardNormal(rng);
    for (auto& v : eval) v = StandardNormal(rng);
    const auto cuts = ThresholdsFromTune(tune);
    const auto g = StratifyRisk(eval, cuts);
    auto f = [](double x) { return std::exp(2.0 * x) + 3.0; };
    std::vector<double> eval_t;
    for (double v : eval) eval_t.push_back(f(v));
    EXPECT_EQ(StratifyRisk(eval_t, RiskThresholds{f(cuts.low_cut), f(cuts.high_cut)}), g);
  }
}

TEST(Spearman, Examples) {
  const std::vector<double> a{1, 2, 3, 4};
  EXPECT_NEAR(Spearman(a, std::vector<double>{2, 4, 6, 8}).rho, 1.0, 1e-15);
  EXPECT_NEAR(Spearman(a, std::vector<double>{4, 3, 2, 1}).rho, -1.0, 1e-15);
  EXPECT_NEAR(Spearman(a, std::vector<double>{1, 3, 2, 4}).rho, 0.8, 1e-15);
  try {
    Spearman(a, std::vector<double>{1, 1, 1, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("zero rank variance"), std::string::npos);
  }
}

TEST(Spearman, PValueFromTApproximation) {
  const std::vector<double> a{1, 2, 3, 4, 5, 6}, b{2, 1, 4, 3, 6, 5};
  const auto r = Spearman(a, b);
  const double rho = r.rho;
  const double t = rho * std::sqrt(4.0 / (1.0 - rho * rho));
  EXPECT_NEAR(r.p_value, StudentTwoSidedP(t, 4.0), 1e-12);
  EXPECT_GT(r.p_value, 0.0);
  EXPECT_LT(r.p_value, 1.0);
}

TEST(Ranks, AverageTies) {
  EXPECT_EQ(AverageRanks(std::vector<double>{10, 20, 20, 5}), (std::vector<double>{2, 3.5, 3.5, 1}));
}

TEST(Tails, KnownValues) {
  EXPECT_NEAR(NormalTwoSidedP(1.959963984540054), 0.05, 1e-12);
  EXPECT_NEAR(ChiSquareSf(3.841458820694124, 1), 0.05, 1e-12);
  EXPECT_NEAR(StudentTwoSidedP(2.2281388519649385, 10), 0.05, 1e-10);
}
