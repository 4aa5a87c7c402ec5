#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "skna/signal.hpp"

namespace skna::dsp {

/// Second-order section, a0 normalized to 1.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
};

struct SosFilter {
  std::vector<Biquad> sections;

  std::size_t order() const { return 2 * sections.size(); }
};

/// Complex response of the cascade at frequency f (single pass).
inline std::complex<double> response(const SosFilter& f, double freq, double fs) {
  const double w = 2.0 * std::numbers::pi * freq / fs;
  const std::complex<double> z1 = std::polar(1.0, -w), z2 = z1 * z1;
  std::complex<double> h = 1.0;
  for (const auto& s : f.sections) h *= (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
  return h;
}

/// Butterworth bandpass from an order-N analog lowpass prototype (2N poles in total).
inline SosFilter butter_bandpass(int prototype_order, double lo, double hi, double fs) {
  if (!(lo > 0 && lo < hi && hi < fs / 2))
    throw Error(ErrorKind::invalid_band, "bandpass edges must satisfy 0 < lo < hi < fs/2 (lo=" + std::to_string(lo) +
                                             ", hi=" + std::to_string(hi) + ", fs=" + std::to_string(fs) + ")");
  using cd = std::complex<double>;
  const double pi = std::numbers::pi;
  const double wlo = 2 * fs * std::tan(pi * lo / fs);
  const double whi = 2 * fs * std::tan(pi * hi / fs);
  const double w0sq = wlo * whi;
  const double bw = whi - wlo;

  SosFilter filt;
  for (int k = 0; k < prototype_order; ++k) {
    const cd p = std::polar(1.0, pi * (2.0 * k + 1.0 + prototype_order) / (2.0 * prototype_order));
    const cd pb = p * bw;
    const cd disc = std::sqrt(pb * pb - 4.0 * w0sq);
    for (const cd s : {(pb + disc) / 2.0, (pb - disc) / 2.0}) {
      if (s.imag() < 0) continue;  // keep one of each conjugate pair
      const cd z = (2 * fs + s) / (2 * fs - s);
      filt.sections.push_back({1.0, 0.0, -1.0, -2.0 * z.real(), std::norm(z)});
    }
  }
  const double fc = std::atan(std::sqrt(w0sq) / (2 * fs)) * fs / pi;
  const double g = std::abs(response(filt, fc, fs));
  filt.sections.front().b0 /= g;
  filt.sections.front().b2 /= g;
  return filt;
}

/// Second-order IIR notch with quality factor q (bandwidth f0/q).
inline SosFilter iir_notch(double f0, double q, double fs) {
  if (!(f0 > 0 && f0 < fs / 2)) throw Error(ErrorKind::invalid_band, "notch frequency must satisfy 0 < f0 < fs/2");
  if (!(q > 0)) throw Error(ErrorKind::invalid_argument, "notch q must be positive");
  const double w0 = 2 * std::numbers::pi * f0 / fs;
  const double bw = w0 / q;
  const double gain = 1.0 / (1.0 + std::tan(bw / 2));
  const double c = std::cos(w0);
  return {{{gain, -2 * c * gain, gain, -2 * gain * c, 2 * gain - 1}}};
}

namespace detail {

/// Steady-state direct-form-II-transposed states for a unit step input.
inline std::vector<std::array<double, 2>> step_states(const SosFilter& f) {
  std::vector<std::array<double, 2>> zi;
  double scale = 1.0;
  for (const auto& s : f.sections) {
    const double g = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    zi.push_back({scale * (g - s.b0), scale * (s.b2 - s.a2 * g)});
    scale *= g;
  }
  return zi;
}

inline void sos_pass(const SosFilter& f, std::vector<double>& x, const std::vector<std::array<double, 2>>& zi,
                     double x0) {
  for (std::size_t k = 0; k < f.sections.size(); ++k) {
    const auto& s = f.sections[k];
    double z1 = zi[k][0] * x0, z2 = zi[k][1] * x0;
    for (double& v : x) {
      const double in = v;
      const double y = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * y + z2;
      z2 = s.b2 * in - s.a2 * y;
      v = y;
    }
  }
}

}  // namespace detail

/// Forward-backward filtering with odd reflection padding of 3x the filter
/// order and step-response initial states, giving zero phase.
inline std::vector<double> filtfilt(const SosFilter& f, const std::vector<double>& x) {
  if (x.empty()) return {};
  const std::size_t n = x.size();
  const std::size_t pad = std::min<std::size_t>(3 * f.order(), n - 1);
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2 * x[n - 1] - x[n - 1 - i]);

  const auto zi = detail::step_states(f);
  detail::sos_pass(f, ext, zi, ext.front());
  std::reverse(ext.begin(), ext.end());
  detail::sos_pass(f, ext, zi, ext.front());
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(pad), ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

constexpr int kBandpassPrototypeOrder = 4;
constexpr double kNotchQ = 35.0;

/// Zero-phase 4th-order Butterworth bandpass.
inline SampledSignal bandpass_filter(const SampledSignal& sig, double lo, double hi) {
  const auto f = butter_bandpass(kBandpassPrototypeOrder, lo, hi, sig.fs);
  SampledSignal out = sig;
  out.samples = filtfilt(f, sig.samples);
  return out;
}

/// Zero-phase narrowband rejection at f0.
inline SampledSignal notch_filter(const SampledSignal& sig, double f0, double q = kNotchQ) {
  const auto f = iir_notch(f0, q, sig.fs);
  SampledSignal out = sig;
  out.samples = filtfilt(f, sig.samples);
  return out;
}

/// Smallest up/down with up/down == ratio (integer rates reduce exactly).
inline std::pair<std::uint64_t, std::uint64_t> rational_ratio(double fs_in, double fs_out) {
  auto is_int = [](double v) { return std::abs(v - std::round(v)) < 1e-9; };
  if (is_int(fs_in) && is_int(fs_out)) {
    auto a = static_cast<std::uint64_t>(std::llround(fs_out));
    auto b = static_cast<std::uint64_t>(std::llround(fs_in));
    auto g = std::gcd(a, b);
    return {a / g, b / g};
  }
  // continued fraction, denominators bounded
  const double r = fs_out / fs_in;
  std::uint64_t h0 = 0, h1 = 1, k0 = 1, k1 = 0;
  double x = r;
  for (int it = 0; it < 64; ++it) {
    const auto a = static_cast<std::uint64_t>(std::floor(x));
    const std::uint64_t h2 = a * h1 + h0, k2 = a * k1 + k0;
    if (k2 > 100000) break;
    h0 = h1, h1 = h2, k0 = k1, k1 = k2;
    const double frac = x - std::floor(x);
    if (frac < 1e-12 || std::abs(static_cast<double>(h1) / static_cast<double>(k1) - r) < 1e-12 * r) break;
    x = 1.0 / frac;
  }
  return {h1, k1};
}

/// Kaiser-windowed sinc prototype for an up/down polyphase resampler, with
/// each polyphase branch normalized to unit DC gain.
inline std::vector<double> resample_kernel(std::uint64_t up, std::uint64_t down, double beta = 5.0) {
  const std::uint64_t m = std::max(up, down);
  const std::size_t half = 10 * m;
  const std::size_t taps = 2 * half + 1;
  const double cutoff = 1.0 / static_cast<double>(m);
  const double i0b = std::cyl_bessel_i(0.0, beta);
  std::vector<double> h(taps);
  for (std::size_t k = 0; k < taps; ++k) {
    const double t = static_cast<double>(k) - static_cast<double>(half);
    const double arg = std::numbers::pi * cutoff * t;
    const double sinc = t == 0 ? 1.0 : std::sin(arg) / arg;
    const double r = t / static_cast<double>(half);
    const double win = std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0b;
    h[k] = cutoff * sinc * win;
  }
  for (std::uint64_t phase = 0; phase < up; ++phase) {
    double sum = 0;
    for (std::size_t k = phase; k < taps; k += up) sum += h[k];
    for (std::size_t k = phase; k < taps; k += up) h[k] /= sum;
  }
  return h;
}

/// Polyphase rational resampling; output length round(n * fs_out / fs_in).
inline SampledSignal resample(const SampledSignal& sig, double fs_out) {
  if (!(fs_out > 0)) throw Error(ErrorKind::invalid_argument, "output rate must be positive");
  const auto [up, down] = rational_ratio(sig.fs, fs_out);
  SampledSignal out;
  out.fs = fs_out;
  const double ratio = static_cast<double>(up) / static_cast<double>(down);
  for (const auto& p : sig.periods) {
    out.periods.push_back({static_cast<std::size_t>(std::llround(static_cast<double>(p.start) * ratio)),
                           static_cast<std::size_t>(std::llround(static_cast<double>(p.end) * ratio)), p.condition});
  }
  const std::size_t n_in = sig.samples.size();
  const auto n_out = static_cast<std::size_t>(std::llround(static_cast<double>(n_in) * ratio));
  for (auto& p : out.periods) p.end = std::min(p.end, n_out);
  if (up == 1 && down == 1) {
    out.samples = sig.samples;
    return out;
  }
  const auto h = resample_kernel(up, down);
  const auto half = static_cast<std::int64_t>((h.size() - 1) / 2);
  const auto taps = static_cast<std::int64_t>(h.size());
  const auto U = static_cast<std::int64_t>(up), D = static_cast<std::int64_t>(down);
  out.samples.assign(n_out, 0.0);
  for (std::size_t m = 0; m < n_out; ++m) {
    const std::int64_t pos = static_cast<std::int64_t>(m) * D + half;  // index into h for j = 0
    std::int64_t jlo = pos - taps + 1 <= 0 ? 0 : (pos - taps + 1 + U - 1) / U;
    std::int64_t jhi = std::min<std::int64_t>(pos / U, static_cast<std::int64_t>(n_in) - 1);
    double acc = 0;
    for (std::int64_t j = jlo; j <= jhi; ++j) acc += sig.samples[static_cast<std::size_t>(j)] * h[static_cast<std::size_t>(pos - j * U)];
    out.samples[m] = acc;
  }
  return out;
}

/// Cuts windows that tile each labeled period with stride window * (1 - overlap).
/// Windows that would cross a period boundary are dropped.
inline SegmentSet segment(const SampledSignal& sig, double window_s, double overlap,
                          const std::string& subject_id = "") {
  if (overlap != 0.0 && overlap != 0.5) throw Error(ErrorKind::invalid_argument, "overlap must be 0 or 0.5");
  const double exact = window_s * sig.fs;
  if (!(window_s > 0) || std::abs(exact - std::round(exact)) > 1e-6)
    throw Error(ErrorKind::invalid_argument, "window_s * fs must be a positive integer");
  const auto L = static_cast<std::size_t>(std::llround(exact));
  if (overlap == 0.5 && L % 2 != 0) throw Error(ErrorKind::invalid_argument, "50% overlap needs an even window");
  const std::size_t stride = overlap == 0.5 ? L / 2 : L;

  SegmentSet out;
  out.window_len = L;
  out.fs = sig.fs;
  out.overlap = overlap;
  for (std::size_t pi = 0; pi < sig.periods.size(); ++pi) {
    const auto& p = sig.periods[pi];
    for (std::size_t s = p.start; s + L <= p.end; s += stride) {
      out.data.insert(out.data.end(), sig.samples.begin() + static_cast<std::ptrdiff_t>(s),
                      sig.samples.begin() + static_cast<std::ptrdiff_t>(s + L));
      out.labels.push_back(p.condition);
      out.subject_ids.push_back(subject_id);
      out.starts.push_back(s);
      out.period_index.push_back(pi);
    }
  }
  if (out.empty()) throw Error(ErrorKind::empty_segmentation, "no labeled period is at least one window long");
  return out;
}

/// Single pooled (mean, std) over every training sample.
inline NormStats normalize_fit(const SegmentSet& train) {
  if (train.data.empty()) throw Error(ErrorKind::degenerate_data, "empty training set");
  const double n = static_cast<double>(train.data.size());
  double mean = 0;
  for (double v : train.data) mean += v;
  mean /= n;
  double sq = 0;
  for (double v : train.data) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / n);
  if (!(sd > 0)) throw Error(ErrorKind::degenerate_data, "training samples have zero variance");
  return {mean, sd};
}

inline SegmentSet normalize_apply(const SegmentSet& set, const NormStats& stats) {
  SegmentSet out = set;
  for (double& v : out.data) v = (v - stats.mean) / stats.std;
  return out;
}

inline SegmentSet normalize_invert(const SegmentSet& set, const NormStats& stats) {
  SegmentSet out = set;
  for (double& v : out.data) v = v * stats.std + stats.mean;
  return out;
}

}  // namespace skna::dsp
