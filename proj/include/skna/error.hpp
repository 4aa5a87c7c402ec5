#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace skna {

enum class ErrorKind {
  invalid_argument,
  invalid_band,
  empty_segmentation,
  degenerate_data,
  infinite_snr,
  invalid_offset,
  insufficient_subjects,
  insufficient_noise_subjects,
  shape,
  state,
  non_finite,
  insufficient_class,
  pairing,
  discontinuity,
  undefined_correlation,
  insufficient_pairs,
  degenerate_variance,
  single_class,
  format,
  io,
  config,
};

inline std::string_view to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::invalid_band: return "invalid-band";
    case ErrorKind::empty_segmentation: return "empty-segmentation";
    case ErrorKind::degenerate_data: return "degenerate-data";
    case ErrorKind::infinite_snr: return "infinite-snr";
    case ErrorKind::invalid_offset: return "invalid-offset";
    case ErrorKind::insufficient_subjects: return "insufficient-subjects";
    case ErrorKind::insufficient_noise_subjects: return "insufficient-noise-subjects";
    case ErrorKind::shape: return "shape";
    case ErrorKind::state: return "state";
    case ErrorKind::non_finite: return "non-finite";
    case ErrorKind::insufficient_class: return "insufficient-class";
    case ErrorKind::pairing: return "pairing";
    case ErrorKind::discontinuity: return "discontinuity";
    case ErrorKind::undefined_correlation: return "undefined-correlation";
    case ErrorKind::insufficient_pairs: return "insufficient-pairs";
    case ErrorKind::degenerate_variance: return "degenerate-variance";
    case ErrorKind::single_class: return "single-class";
    case ErrorKind::format: return "format";
    case ErrorKind::io: return "io";
    case ErrorKind::config: return "config";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-checkable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace skna
