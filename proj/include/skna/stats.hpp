#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "skna/error.hpp"
#include "skna/features.hpp"
#include "skna/signal.hpp"

namespace skna::stats {

/// Sentinel reported when a reconstruction matches its reference exactly.
constexpr double kSnrCapDb = 99.0;

struct MetricSet {
  double corr = 0;
  double corr_iskna = 0;
  double mse = 0;
  double mae = 0;
  double snr_db = 0;
};

struct ReconMetrics {
  MetricSet baseline;
  MetricSet stimulation;
  MetricSet overall;
};

/// Zero-lag Pearson correlation over the samples where `mask` is set (all when empty).
inline double pearson(std::span<const double> a, std::span<const double> b, const std::vector<bool>& mask = {}) {
  if (a.size() != b.size()) throw Error(ErrorKind::invalid_argument, "pearson: length mismatch");
  double ma = 0, mb = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (mask.empty() || mask[i]) {
      ma += a[i];
      mb += b[i];
      ++n;
    }
  if (n == 0) throw Error(ErrorKind::undefined_correlation, "no samples");
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (mask.empty() || mask[i]) {
      sab += (a[i] - ma) * (b[i] - mb);
      saa += (a[i] - ma) * (a[i] - ma);
      sbb += (b[i] - mb) * (b[i] - mb);
    }
  if (saa == 0 || sbb == 0) throw Error(ErrorKind::undefined_correlation, "zero-variance input");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

namespace detail {

inline MetricSet metrics_on(const SampledSignal& cand, const SampledSignal& clean, const SampledSignal& icand,
                            const SampledSignal& iclean, const std::vector<bool>& mask) {
  MetricSet m;
  m.corr = pearson(cand.samples, clean.samples, mask);
  m.corr_iskna = pearson(icand.samples, iclean.samples, mask);
  double se = 0, ae = 0, pc = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const double e = cand.samples[i] - clean.samples[i];
    se += e * e;
    ae += std::abs(e);
    pc += clean.samples[i] * clean.samples[i];
    ++n;
  }
  m.mse = se / static_cast<double>(n);
  m.mae = ae / static_cast<double>(n);
  m.snr_db = se == 0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(pc / se);
  return m;
}

}  // namespace detail

/// Fidelity of `candidate` against `clean`, per condition (from the clean
/// signal's periods) and overall. Identical inputs give snr_db = +inf.
inline ReconMetrics recon_metrics(const SampledSignal& candidate, const SampledSignal& clean,
                                  const features::IntegratorConfig& icfg = {}) {
  if (candidate.size() != clean.size() || candidate.fs != clean.fs)
    throw Error(ErrorKind::invalid_argument, "recon_metrics: length or rate mismatch");
  const auto ic = features::iskna(candidate, icfg);
  const auto ik = features::iskna(clean, icfg);
  ReconMetrics r;
  r.overall = detail::metrics_on(candidate, clean, ic, ik, {});
  r.baseline = detail::metrics_on(candidate, clean, ic, ik, clean.condition_mask(Condition::baseline));
  r.stimulation = detail::metrics_on(candidate, clean, ic, ik, clean.condition_mask(Condition::stimulation));
  return r;
}

inline double capped_snr(double snr_db) { return std::min(snr_db, kSnrCapDb); }

struct TestResult {
  double statistic = 0;
  double p_value = 1;
  std::size_t n = 0;
  std::string method;
  std::string warning;
};

/// "***" for p <= .001, "**" for p <= .01, "*" for p <= .05, otherwise "n.s.".
inline std::string stars(double p) {
  if (p <= 0.001) return "***";
  if (p <= 0.01) return "**";
  if (p <= 0.05) return "*";
  return "n.s.";
}

/// 1-based mid-ranks of `x`, plus the tie-group sizes.
inline std::vector<double> midranks(std::span<const double> x, std::vector<std::size_t>* ties = nullptr) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = rank;
    if (ties && j > i) ties->push_back(j - i + 1);
    i = j + 1;
  }
  return r;
}

/// Kruskal-Wallis H with tie correction; p from chi-square with k - 1 df.
inline TestResult kruskal_wallis(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) throw Error(ErrorKind::invalid_argument, "Kruskal-Wallis needs at least 2 groups");
  std::vector<double> pooled;
  for (const auto& g : groups) {
    if (g.empty()) throw Error(ErrorKind::invalid_argument, "Kruskal-Wallis group is empty");
    pooled.insert(pooled.end(), g.begin(), g.end());
  }
  std::vector<std::size_t> ties;
  const auto r = midranks(pooled, &ties);
  const double N = static_cast<double>(pooled.size());
  double h = 0;
  std::size_t off = 0;
  for (const auto& g : groups) {
    double rs = 0;
    for (std::size_t i = 0; i < g.size(); ++i) rs += r[off + i];
    off += g.size();
    h += rs * rs / static_cast<double>(g.size());
  }
  h = 12.0 / (N * (N + 1)) * h - 3.0 * (N + 1);
  double tsum = 0;
  for (auto t : ties) tsum += std::pow(static_cast<double>(t), 3) - static_cast<double>(t);
  const double c = 1.0 - tsum / (N * N * N - N);
  TestResult res;
  res.method = "kruskal-wallis";
  res.n = pooled.size();
  if (c <= 0) {
    res.statistic = 0;
    res.p_value = 1;
    res.warning = "all values tied";
    return res;
  }
  h = std::max(0.0, h / c);
  res.statistic = h;
  boost::math::chi_squared chi(static_cast<double>(groups.size() - 1));
  res.p_value = std::clamp(boost::math::cdf(boost::math::complement(chi, h)), 0.0, 1.0);
  return res;
}

constexpr std::size_t kWilcoxonExactMaxN = 25;

/// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences are
/// dropped. Exact null distribution (ties via doubled mid-ranks) up to n = 25,
/// normal approximation with continuity and tie correction above. The
/// statistic is min(W+, W-).
inline TestResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::pairing, "Wilcoxon inputs have different lengths");
  std::vector<double> d;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] - y[i] != 0) d.push_back(x[i] - y[i]);
  TestResult res;
  res.method = "wilcoxon-signed-rank";
  res.n = d.size();
  if (d.empty()) {
    res.p_value = 1;
    res.warning = "all differences are zero";
    return res;
  }
  if (d.size() < 5)
    throw Error(ErrorKind::insufficient_pairs, "need at least 5 non-zero differences, got " + std::to_string(d.size()));
  std::vector<double> a(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) a[i] = std::abs(d[i]);
  std::vector<std::size_t> ties;
  const auto r = midranks(a, &ties);
  double wplus = 0;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d[i] > 0) wplus += r[i];
  const double n = static_cast<double>(d.size());
  const double total = n * (n + 1) / 2;
  res.statistic = std::min(wplus, total - wplus);

  if (d.size() <= kWilcoxonExactMaxN) {
    // doubled ranks are integers even with ties
    std::vector<std::size_t> r2(d.size());
    std::size_t max_sum = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      r2[i] = static_cast<std::size_t>(std::llround(2 * r[i]));
      max_sum += r2[i];
    }
    std::vector<double> count(max_sum + 1, 0.0);
    count[0] = 1;
    for (auto v : r2)
      for (std::size_t s = max_sum; s >= v; --s) {
        count[s] += count[s - v];
        if (s == v) break;
      }
    const auto t = static_cast<std::size_t>(std::llround(2 * wplus));
    double lo = 0, hi = 0;
    for (std::size_t s = 0; s <= max_sum; ++s) {
      if (s <= t) lo += count[s];
      if (s >= t) hi += count[s];
    }
    const double all = std::ldexp(1.0, static_cast<int>(d.size()));
    res.p_value = std::min(1.0, 2.0 * std::min(lo, hi) / all);
    res.method += " (exact)";
  } else {
    double tsum = 0;
    for (auto t : ties) tsum += std::pow(static_cast<double>(t), 3) - static_cast<double>(t);
    const double mean = total / 2;
    const double var = n * (n + 1) * (2 * n + 1) / 24.0 - tsum / 48.0;
    const double z = std::max(0.0, std::abs(wplus - mean) - 0.5) / std::sqrt(var);
    boost::math::normal nd;
    res.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(nd, z)));
    res.method += " (normal)";
  }
  return res;
}

inline double mean_of(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Sample variance (n - 1 denominator); 0 for a single value.
inline double variance_of(std::span<const double> x) {
  if (x.size() < 2) return 0;
  const double m = mean_of(x);
  double s = 0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

/// (mean_a - mean_b)^2 / (var_a + var_b).
inline double fishers_ratio(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw Error(ErrorKind::invalid_argument, "Fisher's ratio needs non-empty groups");
  const double den = variance_of(a) + variance_of(b);
  if (den == 0) throw Error(ErrorKind::degenerate_variance, "both groups have zero variance");
  const double diff = mean_of(a) - mean_of(b);
  return diff * diff / den;
}

/// Mann-Whitney U / (n_pos n_neg); ties count one half.
inline double auroc(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty() || neg.empty()) throw Error(ErrorKind::invalid_argument, "AUROC needs non-empty classes");
  std::vector<double> pooled(pos.begin(), pos.end());
  pooled.insert(pooled.end(), neg.begin(), neg.end());
  const auto r = midranks(pooled);
  double rp = 0;
  for (std::size_t i = 0; i < pos.size(); ++i) rp += r[i];
  const double np = static_cast<double>(pos.size()), nn = static_cast<double>(neg.size());
  return (rp - np * (np + 1) / 2) / (np * nn);
}

struct Summary {
  double mean = 0;
  double std = 0;  // sample std
  double ci_lo = 0;
  double ci_hi = 0;
  std::size_t n = 0;
};

/// Mean, sample std and a two-sided t-based 95% interval for the mean.
inline Summary summarize(std::span<const double> x) {
  Summary s;
  s.n = x.size();
  if (x.empty()) return s;
  s.mean = mean_of(x);
  s.std = std::sqrt(variance_of(x));
  if (x.size() < 2) {
    s.ci_lo = s.ci_hi = s.mean;
    return s;
  }
  boost::math::students_t t(static_cast<double>(x.size() - 1));
  const double q = boost::math::quantile(boost::math::complement(t, 0.025));
  const double half = q * s.std / std::sqrt(static_cast<double>(x.size()));
  s.ci_lo = s.mean - half;
  s.ci_hi = s.mean + half;
  return s;
}

}  // namespace skna::stats
