#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "skna/error.hpp"
#include "skna/signal.hpp"

namespace skna::features {

enum class SignalType : unsigned char { bpf = 0, recon = 1, clean = 2 };

inline std::string_view to_string(SignalType t) {
  switch (t) {
    case SignalType::bpf: return "bpf";
    case SignalType::recon: return "recon";
    case SignalType::clean: return "clean";
  }
  return "?";
}

inline SignalType signal_type_from_string(std::string_view s) {
  if (s == "bpf") return SignalType::bpf;
  if (s == "recon") return SignalType::recon;
  if (s == "clean") return SignalType::clean;
  throw Error(ErrorKind::invalid_argument, "unknown signal type '" + std::string(s) + "'");
}

constexpr std::array<SignalType, 3> kSignalTypes{SignalType::bpf, SignalType::clean, SignalType::recon};

struct IntegratorConfig {
  double tau = 0.1;  // s
};

/// Leaky integrator of the rectified input:
/// y[n] = a y[n-1] + (1 - a)|x[n]|, a = exp(-1 / (fs tau)), y[-1] = 0.
inline SampledSignal iskna(const SampledSignal& sig, const IntegratorConfig& cfg = {}) {
  if (!(cfg.tau > 0)) throw Error(ErrorKind::invalid_argument, "tau must be positive");
  if (!(sig.fs > 0)) throw Error(ErrorKind::invalid_argument, "fs must be positive");
  const double a = std::exp(-1.0 / (sig.fs * cfg.tau));
  SampledSignal out;
  out.fs = sig.fs;
  out.periods = sig.periods;
  out.samples.resize(sig.size());
  double y = 0;
  for (std::size_t n = 0; n < sig.size(); ++n) {
    y = a * y + (1 - a) * std::abs(sig.samples[n]);
    out.samples[n] = y;
  }
  return out;
}

/// Centered moving average over round(window_s * fs) samples; the window
/// shrinks at the edges.
inline SampledSignal askna(const SampledSignal& x, double window_s = 5.0) {
  const auto w = static_cast<std::size_t>(std::llround(window_s * x.fs));
  if (w < 1) throw Error(ErrorKind::invalid_argument, "moving-average window is shorter than one sample");
  if (x.samples.empty()) throw Error(ErrorKind::invalid_argument, "empty signal");
  const std::size_t n = x.size();
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x.samples[i];
  SampledSignal out;
  out.fs = x.fs;
  out.periods = x.periods;
  out.samples.resize(n);
  const std::size_t left = w / 2;
  for (std::size_t i = 0; i < n; ++i) {
    // [i - left, i - left + w) clipped to [0, n)
    const std::size_t lo = i >= left ? i - left : 0;
    const std::size_t end = std::min(n, i + w - left);
    out.samples[i] = (prefix[end] - prefix[lo]) / static_cast<double>(end - lo);
  }
  return out;
}

struct BurstThreshold {
  double value = 0;
  double source_mean = 0;
  double source_std = 0;
  std::string subject_id;
  SignalType signal_type = SignalType::clean;
};

/// mean + 3 std (population) of pooled baseline iSKNA samples.
inline BurstThreshold burst_threshold(std::span<const double> baseline, const std::string& subject,
                                      SignalType type) {
  if (baseline.empty()) throw Error(ErrorKind::invalid_argument, "empty baseline for threshold");
  double mean = 0;
  for (double v : baseline) mean += v;
  mean /= static_cast<double>(baseline.size());
  double sq = 0;
  for (double v : baseline) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(baseline.size()));
  return {mean + 3.0 * sd, mean, sd, subject, type};
}

/// Samples of every baseline period, in order.
inline std::vector<double> baseline_samples(const SampledSignal& sig) {
  std::vector<double> out;
  for (const auto& p : sig.periods)
    if (p.condition == Condition::baseline)
      out.insert(out.end(), sig.samples.begin() + static_cast<std::ptrdiff_t>(p.start),
                 sig.samples.begin() + static_cast<std::ptrdiff_t>(p.end));
  return out;
}

constexpr std::size_t kNumFeatures = 6;
constexpr std::array<std::string_view, kNumFeatures> kFeatureNames{
    "burst_count", "burst_duration", "burst_amplitude", "burst_total_area", "mean_iskna", "std_iskna"};

struct FeatureRow {
  std::string subject;
  SignalType signal_type = SignalType::clean;
  Condition condition = Condition::baseline;
  std::size_t window_index = 0;
  std::array<double, kNumFeatures> values{};
};

struct FeatureTable {
  std::vector<FeatureRow> rows;

  bool empty() const { return rows.empty(); }
  std::size_t size() const { return rows.size(); }

  void append(const FeatureTable& other) { rows.insert(rows.end(), other.rows.begin(), other.rows.end()); }

  /// Column `f` restricted to one signal type and condition.
  std::vector<double> column(std::size_t f, SignalType t, Condition c) const {
    std::vector<double> out;
    for (const auto& r : rows)
      if (r.signal_type == t && r.condition == c) out.push_back(r.values[f]);
    return out;
  }

  FeatureTable filter(SignalType t) const {
    FeatureTable out;
    for (const auto& r : rows)
      if (r.signal_type == t) out.rows.push_back(r);
    return out;
  }
};

inline void write_csv_header(std::ostream& os) {
  os << "subject,signal_type,condition,window_index";
  for (auto n : kFeatureNames) os << ',' << n;
  os << '\n';
}

/// Per-window burst features on non-overlapping windows inside each labeled
/// period; incomplete tail windows are dropped.
///
/// A burst is a maximal run of samples strictly above the threshold.
inline FeatureTable extract_features(const SampledSignal& isk, const BurstThreshold& thr, const std::string& subject,
                                     SignalType type, double window_s = 10.0) {
  FeatureTable table;
  const auto W = static_cast<std::size_t>(std::llround(window_s * isk.fs));
  if (W == 0) throw Error(ErrorKind::invalid_argument, "feature window shorter than one sample");
  const double dt = 1.0 / isk.fs;
  std::size_t index = 0;
  for (const auto& p : isk.periods) {
    for (std::size_t s = p.start; s + W <= p.end; s += W) {
      std::size_t runs = 0, above = 0;
      double peak_sum = 0, area = 0, run_peak = 0;
      bool in_run = false;
      double sum = 0, sq = 0;
      for (std::size_t n = s; n < s + W; ++n) {
        const double v = isk.samples[n];
        sum += v;
        if (v > thr.value) {
          if (!in_run) {
            in_run = true;
            ++runs;
            run_peak = v;
          }
          run_peak = std::max(run_peak, v);
          ++above;
          area += (v - thr.value) * dt;
        } else if (in_run) {
          in_run = false;
          peak_sum += run_peak;
        }
      }
      if (in_run) peak_sum += run_peak;
      const double mean = sum / static_cast<double>(W);
      for (std::size_t n = s; n < s + W; ++n) sq += (isk.samples[n] - mean) * (isk.samples[n] - mean);
      FeatureRow row;
      row.subject = subject;
      row.signal_type = type;
      row.condition = p.condition;
      row.window_index = index++;
      row.values = {static_cast<double>(runs) * 60.0 / window_s,
                    100.0 * static_cast<double>(above) / static_cast<double>(W),
                    runs ? peak_sum / static_cast<double>(runs) : 0.0,
                    area / 60.0,
                    mean,
                    std::sqrt(sq / static_cast<double>(W))};
      table.rows.push_back(row);
    }
  }
  return table;
}

}  // namespace skna::features
