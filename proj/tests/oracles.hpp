#pragma once

// Brute-force reference implementations used as oracles. They favour the
// most literal formulation over speed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "survmil/random.hpp"
#include "survmil/survival.hpp"

namespace oracle {

using survmil::SurvivalRecord;

// Every ordered pair (i, j) with t_i < t_j and an event at t_i; score ties
// earn half credit. Returned as (2 * concordant + ties) / (2 * comparable).
inline std::optional<double> CIndex(const std::vector<double>& s,
                                    const std::vector<SurvivalRecord>& r) {
  long long twice_num = 0;
  long long comparable = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (!(r[i].event && r[i].time_months < r[j].time_months)) continue;
      ++comparable;
      if (s[i] > s[j]) {
        twice_num += 2;
      } else if (s[i] == s[j]) {
        twice_num += 1;
      }
    }
  }
  if (comparable == 0) return std::nullopt;
  return static_cast<double>(twice_num) / static_cast<double>(2 * comparable);
}

// Positive: event by the horizon. Negative: followed beyond it or event
// after it. Others are dropped. Every (positive, negative) pair is counted.
inline std::optional<double> HorizonAuc(const std::vector<double>& s,
                                        const std::vector<SurvivalRecord>& r, int horizon) {
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r[i].event && r[i].time_months <= horizon) {
      pos.push_back(s[i]);
    } else if (r[i].time_months > horizon || (r[i].time_months == horizon && !r[i].event)) {
      neg.push_back(s[i]);
    }
  }
  if (pos.empty() || neg.empty()) return std::nullopt;
  long long twice = 0;
  for (double p : pos) {
    for (double q : neg) twice += p > q ? 2 : (p == q ? 1 : 0);
  }
  return static_cast<double>(twice) /
         (2.0 * static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

struct KmPoint {
  int time;
  double survival;
  int at_risk;
  int events;
};

// Product-limit estimate at each distinct observed time.
inline std::vector<KmPoint> KaplanMeier(const std::vector<SurvivalRecord>& r) {
  std::set<int> times;
  for (const auto& x : r) times.insert(x.time_months);
  std::vector<KmPoint> out;
  double s = 1.0;
  for (int t : times) {
    int n = 0, d = 0;
    for (const auto& x : r) {
      if (x.time_months >= t) ++n;
      if (x.time_months == t && x.event) ++d;
    }
    s *= 1.0 - static_cast<double>(d) / n;
    out.push_back({t, s, n, d});
  }
  return out;
}

struct LogRank {
  double observed_a = 0.0;
  double expected_a = 0.0;
  double variance = 0.0;
  double chi2 = 0.0;
};

// Sums observed-minus-expected and hypergeometric variance over the event
// times of the pooled sample.
inline std::optional<LogRank> LogRankTest(const std::vector<SurvivalRecord>& a,
                                          const std::vector<SurvivalRecord>& b) {
  std::set<int> times;
  for (const auto& x : a) {
    if (x.event) times.insert(x.time_months);
  }
  for (const auto& x : b) {
    if (x.event) times.insert(x.time_months);
  }
  LogRank out;
  for (int t : times) {
    double na = 0, nb = 0, da = 0, db = 0;
    for (const auto& x : a) {
      na += x.time_months >= t;
      da += x.time_months == t && x.event;
    }
    for (const auto& x : b) {
      nb += x.time_months >= t;
      db += x.time_months == t && x.event;
    }
    const double n = na + nb, d = da + db;
    out.observed_a += da;
    out.expected_a += d * na / n;
    if (n > 1) out.variance += d * (na / n) * (nb / n) * (n - d) / (n - 1);
  }
  if (times.empty() || !(out.variance > 0)) return std::nullopt;
  const double diff = out.observed_a - out.expected_a;
  out.chi2 = diff * diff / out.variance;
  return out;
}

// Breslow log partial likelihood straight from the definition: for each
// distinct event time, sum of event scores minus d * log(sum over the risk set).
inline double BreslowLogLik(const std::vector<double>& eta, const std::vector<SurvivalRecord>& r) {
  std::set<int> times;
  for (const auto& x : r) {
    if (x.event) times.insert(x.time_months);
  }
  double ll = 0.0;
  for (int t : times) {
    double d = 0, sum_events = 0, risk = 0;
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (r[i].time_months == t && r[i].event) {
        d += 1;
        sum_events += eta[i];
      }
      if (r[i].time_months >= t) risk += std::exp(eta[i]);
    }
    ll += sum_events - d * std::log(risk);
  }
  return ll;
}

// Small random cohort: sizes 1..max_n, times in 1..max_time, scores drawn
// from a handful of values so ties are frequent.
struct FuzzCase {
  std::vector<SurvivalRecord> records;
  std::vector<double> scores;
};

inline FuzzCase Fuzz(std::uint64_t seed, int max_n = 12, int max_time = 8) {
  survmil::Rng rng(seed);
  FuzzCase f;
  const int n = 1 + static_cast<int>(survmil::UniformIndex(rng, static_cast<std::size_t>(max_n)));
  for (int i = 0; i < n; ++i) {
    SurvivalRecord r;
    r.case_id = "c" + std::to_string(i);
    r.time_months = 1 + static_cast<int>(survmil::UniformIndex(rng, static_cast<std::size_t>(max_time)));
    r.event = survmil::UniformUnit(rng) < 0.6;
    f.records.push_back(r);
    f.scores.push_back(static_cast<double>(survmil::UniformIndex(rng, 5)) * 0.25);
  }
  return f;
}

inline SurvivalRecord Rec(const std::string& id, int t, bool e) { return {id, t, e}; }

}  // namespace oracle
