#pragma once

// Nonparametric statistics used by the measurement harness and the strategy
// comparison: nearest-rank quantiles, order-statistic confidence intervals,
// the Wilcoxon rank-sum test, CI-overlap significance and geometric means.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "hostile/errors.hpp"

namespace hostile::stats {

// 1-based nearest-rank index ceil(q*n), clamped to [1, n].
inline std::size_t nearest_rank(std::size_t n, double q) {
  const double r = std::ceil(q * static_cast<double>(n) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(r, 1.0)), 1, n);
}

template <class T>
T quantile(std::span<const T> samples, double q) {
  if (samples.empty()) throw InputError("quantile of empty sample");
  if (!(q > 0.0 && q < 1.0)) throw InputError("quantile level must be in (0, 1)");
  std::vector<T> sorted(samples.begin(), samples.end());
  const auto k = nearest_rank(sorted.size(), q) - 1;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
  return sorted[k];
}

template <class T>
T quantile(const std::vector<T>& samples, double q) {
  return quantile(std::span<const T>(samples), q);
}

// log C(n, k) q^k (1-q)^(n-k)
inline double binomial_log_pmf(std::size_t n, std::size_t k, double q) {
  const double dn = static_cast<double>(n), dk = static_cast<double>(k);
  double lp = std::lgamma(dn + 1) - std::lgamma(dk + 1) - std::lgamma(dn - dk + 1);
  if (k > 0) lp += dk * std::log(q);
  if (k < n) lp += (dn - dk) * std::log1p(-q);
  return lp;
}

// P(B <= k) for B ~ Binomial(n, q).
inline double binomial_cdf(std::size_t n, std::size_t k, double q) {
  if (k >= n) return 1.0;
  double s = 0.0;
  for (std::size_t i = 0; i <= k; ++i) s += std::exp(binomial_log_pmf(n, i, q));
  return std::min(s, 1.0);
}

template <class T>
struct QuantileInterval {
  T low{};
  T high{};
  std::size_t low_rank = 0;   // 1-based order statistic
  std::size_t high_rank = 0;  // 1-based order statistic
  // False when a tail cannot reach the requested confidence with this n; the
  // deficient side is then pinned to the sample extreme.
  bool informative = true;
};

// Order-statistic ranks (l, u) of the equal-tailed distribution-free
// interval: l is the largest rank with P(B < l) <= alpha/2 and u the
// smallest with P(B >= u) <= alpha/2, B ~ Binomial(n, q) counting samples
// at or below the true quantile.
inline QuantileInterval<std::size_t> quantile_ci_ranks(std::size_t n, double q, double confidence) {
  if (n == 0) throw InputError("confidence interval of empty sample");
  if (!(q > 0.0 && q < 1.0)) throw InputError("quantile level must be in (0, 1)");
  if (!(confidence > 0.0 && confidence < 1.0)) throw InputError("confidence must be in (0, 1)");
  const double tail = (1.0 - confidence) / 2.0;
  const std::size_t k = nearest_rank(n, q);
  QuantileInterval<std::size_t> r;

  // P(B <= l-1) is increasing in l; walk up while it stays within the tail.
  std::size_t l = 0;
  for (std::size_t cand = 1; cand <= k; ++cand) {
    if (binomial_cdf(n, cand - 1, q) <= tail) l = cand;
    else break;
  }
  if (l == 0) {
    l = 1;
    r.informative = false;
  }
  // P(B >= u) = 1 - P(B <= u-1) is decreasing in u.
  std::size_t u = 0;
  for (std::size_t cand = k; cand <= n; ++cand) {
    if (1.0 - binomial_cdf(n, cand - 1, q) <= tail) {
      u = cand;
      break;
    }
  }
  if (u == 0) {
    u = n;
    r.informative = false;
  }
  r.low_rank = r.low = l;
  r.high_rank = r.high = u;
  return r;
}

// Exact coverage P(l <= B <= u-1) of the order-statistic interval (X_(l),
// X_(u)) for a continuous distribution.
inline double order_statistic_coverage(std::size_t n, std::size_t l, std::size_t u, double q) {
  const double upper = binomial_cdf(n, u - 1, q);
  const double lower = l >= 1 ? binomial_cdf(n, l - 1, q) : 0.0;
  if (l == 1) return upper - std::pow(1.0 - q, static_cast<double>(n));
  return upper - lower;
}

template <class T>
QuantileInterval<T> quantile_ci(std::span<const T> samples, double q, double confidence) {
  const auto ranks = quantile_ci_ranks(samples.size(), q, confidence);
  std::vector<T> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  return {sorted[ranks.low_rank - 1], sorted[ranks.high_rank - 1], ranks.low_rank, ranks.high_rank,
          ranks.informative};
}

template <class T>
QuantileInterval<T> quantile_ci(const std::vector<T>& samples, double q, double confidence) {
  return quantile_ci(std::span<const T>(samples), q, confidence);
}

// ---------------------------------------------------------------------------
// Wilcoxon rank-sum
// ---------------------------------------------------------------------------

enum class Alternative { TwoSided, Greater, Less };

inline constexpr std::size_t kExactWilcoxonLimit = 12;

// Midranks of the pooled sample, doubled so they are integers.
inline std::vector<std::int64_t> doubled_midranks(const std::vector<double>& pooled) {
  const std::size_t n = pooled.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return pooled[a] < pooled[b]; });
  std::vector<std::int64_t> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && pooled[idx[j + 1]] == pooled[idx[i]]) ++j;
    // ranks i+1..j+1 share (i+1 + j+1)/2; doubled: i+j+2
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = static_cast<std::int64_t>(i + j + 2);
    i = j + 1;
  }
  return ranks;
}

namespace detail {

// Tail probabilities P(W <= w) and P(W >= w) of the doubled rank sum W of a
// uniformly random k-subset of `ranks`, by dynamic programming over counts.
inline std::pair<double, double> exact_rank_sum_tails(const std::vector<std::int64_t>& ranks, std::size_t k,
                                                      std::int64_t w) {
  const std::int64_t max_sum = std::accumulate(ranks.begin(), ranks.end(), std::int64_t{0});
  const std::size_t width = static_cast<std::size_t>(max_sum) + 1;
  std::vector<double> ways((k + 1) * width, 0.0);
  ways[0] = 1.0;
  std::size_t seen = 0;
  for (auto r : ranks) {
    ++seen;
    for (std::size_t c = std::min(k, seen); c >= 1; --c) {
      double* dst = &ways[c * width];
      const double* src = &ways[(c - 1) * width];
      for (std::size_t s = width; s-- > static_cast<std::size_t>(r);) dst[s] += src[s - static_cast<std::size_t>(r)];
    }
  }
  double total = 0.0, le = 0.0, ge = 0.0;
  const double* row = &ways[k * width];
  for (std::size_t s = 0; s < width; ++s) {
    if (row[s] == 0.0) continue;
    total += row[s];
    if (static_cast<std::int64_t>(s) <= w) le += row[s];
    if (static_cast<std::int64_t>(s) >= w) ge += row[s];
  }
  return {le / total, ge / total};
}

inline double normal_upper_tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace detail

// p-value of the rank-sum test of `a` against `b`. Greater tests whether
// values of `a` tend to be larger. Exact permutation distribution (midranks
// for ties) when min(n, m) <= 12, otherwise the normal approximation with
// tie and continuity corrections. Two-sided p doubles the smaller tail.
inline double wilcoxon_rank_sum(const std::vector<double>& a, const std::vector<double>& b,
                                Alternative alt = Alternative::TwoSided) {
  if (a.empty() || b.empty()) throw InputError("rank-sum test needs two nonempty samples");
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto ranks = doubled_midranks(pooled);
  const std::size_t n = a.size(), m = b.size(), big_n = n + m;

  std::int64_t w_a = 0;
  for (std::size_t i = 0; i < n; ++i) w_a += ranks[i];

  double p_le = 0.0, p_ge = 0.0;  // tails of a's rank sum
  if (std::min(n, m) <= kExactWilcoxonLimit) {
    if (n <= m) {
      std::tie(p_le, p_ge) = detail::exact_rank_sum_tails(ranks, n, w_a);
    } else {
      // a's sum is total - b's sum; enumerate the smaller group.
      const std::int64_t total = std::accumulate(ranks.begin(), ranks.end(), std::int64_t{0});
      const auto [b_le, b_ge] = detail::exact_rank_sum_tails(ranks, m, total - w_a);
      p_le = b_ge;
      p_ge = b_le;
    }
  } else {
    const double dn = static_cast<double>(n), dm = static_cast<double>(m), dN = static_cast<double>(big_n);
    const double w = static_cast<double>(w_a) / 2.0;
    const double mean = dn * (dN + 1.0) / 2.0;
    std::map<std::int64_t, double> tie_counts;
    for (auto r : ranks) tie_counts[r] += 1.0;
    double tie_term = 0.0;
    for (const auto& [r, t] : tie_counts) tie_term += t * t * t - t;
    const double var = dn * dm / 12.0 * ((dN + 1.0) - tie_term / (dN * (dN - 1.0)));
    if (var <= 0.0) return 1.0;
    const double sd = std::sqrt(var);
    p_ge = detail::normal_upper_tail((w - mean - 0.5) / sd);
    p_le = detail::normal_upper_tail((mean - w - 0.5) / sd);
  }

  double p = 0.0;
  switch (alt) {
    case Alternative::TwoSided: p = 2.0 * std::min(p_le, p_ge); break;
    case Alternative::Greater: p = p_ge; break;
    case Alternative::Less: p = p_le; break;
  }
  return std::clamp(p, std::numeric_limits<double>::min(), 1.0);
}

// ---------------------------------------------------------------------------
// Interval overlap, geometric mean
// ---------------------------------------------------------------------------

// Closed intervals: touching endpoints count as overlap.
inline bool ci_overlap_significant(double a_low, double a_high, double b_low, double b_high) {
  return a_high < b_low || b_high < a_low;
}

inline double geometric_mean(std::span<const double> xs) {
  if (xs.empty()) throw InputError("geometric mean of empty list");
  double acc = 0.0;
  for (double x : xs) {
    if (!(x > 0.0)) throw InputError("geometric mean needs positive values");
    acc += std::log(x);
  }
  return std::exp(acc / static_cast<double>(xs.size()));
}

inline double geometric_mean(const std::vector<double>& xs) { return geometric_mean(std::span<const double>(xs)); }

// Variance across `sets` disjoint consecutive chunks of `set_size` samples of
// the q-quantile estimate, for each q in `levels`.
inline std::vector<double> quantile_variance_curve(const std::vector<double>& samples, std::size_t sets,
                                                   std::size_t set_size, const std::vector<double>& levels) {
  if (sets < 2 || set_size == 0 || samples.size() < sets * set_size)
    throw InputError("not enough samples for the requested quantile-variance sets");
  std::vector<double> out;
  for (double q : levels) {
    std::vector<double> est;
    for (std::size_t s = 0; s < sets; ++s) {
      std::span<const double> chunk(samples.data() + s * set_size, set_size);
      est.push_back(q >= 1.0 ? *std::max_element(chunk.begin(), chunk.end()) : quantile(chunk, q));
    }
    const double mean = std::accumulate(est.begin(), est.end(), 0.0) / static_cast<double>(est.size());
    double var = 0.0;
    for (double e : est) var += (e - mean) * (e - mean);
    out.push_back(var / static_cast<double>(est.size() - 1));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Strategy comparison verdicts
// ---------------------------------------------------------------------------

struct ComparisonVerdict {
  std::vector<std::string> ordering;    // worst first
  std::vector<std::string> separators;  // "<" or "≈", one per adjacent pair
  std::vector<double> p_values;         // one per adjacent pair

  // e.g. "SA<BO≈RAN"
  std::string render() const {
    std::string s;
    for (std::size_t i = 0; i < ordering.size(); ++i) {
      if (i > 0) s += separators[i - 1];
      s += ordering[i];
    }
    return s;
  }
  const std::string& winner() const { return ordering.back(); }
};

inline void to_json(nlohmann::json& j, const ComparisonVerdict& v) {
  j = nlohmann::json{{"verdict", v.render()}, {"ordering", v.ordering}, {"separators", v.separators},
                     {"p_values", v.p_values}};
}

inline void from_json(const nlohmann::json& j, ComparisonVerdict& v) {
  v.ordering = j.at("ordering").get<std::vector<std::string>>();
  v.separators = j.at("separators").get<std::vector<std::string>>();
  v.p_values = j.at("p_values").get<std::vector<double>>();
}

template <class T>
double median_of(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? static_cast<double>(v[n / 2]) : (static_cast<double>(v[n / 2 - 1]) + static_cast<double>(v[n / 2])) / 2.0;
}

// Orders strategies by median result (ascending, ties keep input order) and
// marks each adjacent pair "<" when its two-sided rank-sum p-value is below
// `threshold`, "≈" otherwise.
inline ComparisonVerdict compare_strategies(const std::vector<std::pair<std::string, std::vector<double>>>& results,
                                            double threshold) {
  if (results.empty()) throw InputError("nothing to compare");
  std::vector<std::size_t> order(results.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> medians;
  for (const auto& [name, values] : results) {
    if (values.empty()) throw InputError("strategy " + name + " has no results");
    medians.push_back(median_of(values));
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return medians[a] < medians[b]; });
  ComparisonVerdict v;
  for (std::size_t i = 0; i < order.size(); ++i) {
    v.ordering.push_back(results[order[i]].first);
    if (i == 0) continue;
    const double p = wilcoxon_rank_sum(results[order[i - 1]].second, results[order[i]].second);
    v.p_values.push_back(p);
    v.separators.push_back(p < threshold ? "<" : "≈");
  }
  return v;
}

}  // namespace hostile::stats
