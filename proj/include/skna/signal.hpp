#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "skna/error.hpp"

namespace skna {

enum class Condition : unsigned char { baseline = 0, stimulation = 1 };

inline std::string_view to_string(Condition c) {
  return c == Condition::baseline ? "baseline" : "stimulation";
}

inline Condition condition_from_string(std::string_view s) {
  if (s == "baseline") return Condition::baseline;
  if (s == "stimulation") return Condition::stimulation;
  throw Error(ErrorKind::invalid_argument, "unknown condition '" + std::string(s) + "'");
}

/// Half-open sample range [start, end) recorded under one condition.
struct Period {
  std::size_t start = 0;
  std::size_t end = 0;
  Condition condition = Condition::baseline;

  std::size_t length() const { return end - start; }
  bool operator==(const Period&) const = default;
};

/// Uniformly sampled trace in microvolts with its condition annotations.
struct SampledSignal {
  std::vector<double> samples;
  double fs = 0.0;
  std::vector<Period> periods;

  std::size_t size() const { return samples.size(); }
  double duration() const { return static_cast<double>(samples.size()) / fs; }

  /// Throws if fs, sample finiteness or the period table is malformed.
  void validate() const {
    if (!(fs > 0.0) || !std::isfinite(fs))
      throw Error(ErrorKind::invalid_argument, "sampling rate must be positive");
    std::size_t prev_end = 0;
    for (const auto& p : periods) {
      if (p.start >= p.end || p.start < prev_end || p.end > samples.size())
        throw Error(ErrorKind::invalid_argument, "periods must be sorted, non-overlapping and in bounds");
      prev_end = p.end;
    }
    for (double v : samples)
      if (!std::isfinite(v)) throw Error(ErrorKind::invalid_argument, "non-finite sample");
  }

  /// Per-sample condition mask; samples outside every period are flagged false in both masks.
  std::vector<bool> condition_mask(Condition c) const {
    std::vector<bool> mask(samples.size(), false);
    for (const auto& p : periods)
      if (p.condition == c) std::fill(mask.begin() + p.start, mask.begin() + p.end, true);
    return mask;
  }
};

/// Fixed-length labeled windows cut from one or more signals.
struct SegmentSet {
  std::size_t window_len = 0;
  double fs = 0.0;
  double overlap = 0.0;
  std::vector<double> data;  // row-major, size() x window_len
  std::vector<Condition> labels;
  std::vector<std::string> subject_ids;
  std::vector<std::size_t> starts;        // first sample in the source signal
  std::vector<std::size_t> period_index;  // index into the source period table

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }

  std::span<double> segment(std::size_t i) {
    return {data.data() + i * window_len, window_len};
  }
  std::span<const double> segment(std::size_t i) const {
    return {data.data() + i * window_len, window_len};
  }

  /// Appends segment i of `other` (metadata included).
  void push_from(const SegmentSet& other, std::size_t i) {
    auto s = other.segment(i);
    data.insert(data.end(), s.begin(), s.end());
    labels.push_back(other.labels[i]);
    subject_ids.push_back(other.subject_ids[i]);
    starts.push_back(other.starts[i]);
    period_index.push_back(other.period_index[i]);
  }

  /// Empty set sharing geometry with `other`.
  static SegmentSet like(const SegmentSet& other) {
    SegmentSet s;
    s.window_len = other.window_len;
    s.fs = other.fs;
    s.overlap = other.overlap;
    return s;
  }

  std::size_t count(Condition c) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), c));
  }
};

/// Pooled z-score parameters fitted on training data.
struct NormStats {
  double mean = 0.0;
  double std = 1.0;
};

}  // namespace skna
