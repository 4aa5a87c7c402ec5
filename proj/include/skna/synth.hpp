#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "skna/container.hpp"
#include "skna/dsp.hpp"
#include "skna/random.hpp"
#include "skna/signal.hpp"

namespace skna::synth {

/// Burst phenomenology of one synthetic subject.
struct SubjectProfile {
  std::string subject_id;
  double baseline_burst_rate = 4.0;  // bursts/min
  double stim_burst_rate = 12.0;     // bursts/min
  double burst_amp_mean = 4.0;       // uV, peak envelope in carrier-RMS units
  double burst_dur_mean = 0.8;       // s
  double noise_floor_amp = 1.0;      // uV RMS
  std::uint64_t seed = 0;

  void validate() const {
    if (!(baseline_burst_rate > 0 && stim_burst_rate > 0 && burst_amp_mean > 0 && burst_dur_mean > 0 &&
          noise_floor_amp > 0))
      throw Error(ErrorKind::invalid_argument, "profile rates, amplitudes and durations must be positive");
    if (!(stim_burst_rate > baseline_burst_rate))
      throw Error(ErrorKind::invalid_argument, "stimulation burst rate must exceed the baseline rate");
  }
};

struct ProtocolSpec {
  std::vector<std::pair<Condition, double>> periods;  // (condition, seconds)
  double fs = 2048.0;

  /// Rest 2 min, task 5 min, rest 2 min, task 5 min.
  static ProtocolSpec standard(double fs = 2048.0) {
    return {{{Condition::baseline, 120.0},
             {Condition::stimulation, 300.0},
             {Condition::baseline, 120.0},
             {Condition::stimulation, 300.0}},
            fs};
  }

  /// Same alternation with every period scaled by `factor`.
  static ProtocolSpec scaled(double factor, double fs = 2048.0) {
    auto p = standard(fs);
    for (auto& [c, d] : p.periods) d *= factor;
    return p;
  }

  double total_seconds() const {
    double t = 0;
    for (const auto& [c, d] : periods) t += d;
    return t;
  }

  void validate() const {
    if (!(fs > 0)) throw Error(ErrorKind::invalid_argument, "protocol fs must be positive");
    if (periods.empty()) throw Error(ErrorKind::invalid_argument, "protocol has no periods");
    for (const auto& [c, d] : periods)
      if (!(d > 0)) throw Error(ErrorKind::invalid_argument, "protocol period durations must be positive");
  }
};

/// Ranges the per-subject profile parameters are drawn from.
struct ProfileRanges {
  std::pair<double, double> baseline_rate{1.0, 3.0};
  std::pair<double, double> stim_rate{12.0, 24.0};
  std::pair<double, double> burst_amp{3.0, 6.0};
  std::pair<double, double> burst_dur{0.5, 1.2};
  std::pair<double, double> noise_floor{0.8, 1.2};
};

inline SubjectProfile draw_profile(const std::string& subject_id, std::uint64_t master_seed,
                                   const ProfileRanges& r = {}) {
  Rng rng(derive_seed(master_seed, "profile/" + subject_id));
  SubjectProfile p;
  p.subject_id = subject_id;
  p.baseline_burst_rate = uniform(rng, r.baseline_rate.first, r.baseline_rate.second);
  p.stim_burst_rate = uniform(rng, r.stim_rate.first, r.stim_rate.second);
  p.burst_amp_mean = uniform(rng, r.burst_amp.first, r.burst_amp.second);
  p.burst_dur_mean = uniform(rng, r.burst_dur.first, r.burst_dur.second);
  p.noise_floor_amp = uniform(rng, r.noise_floor.first, r.noise_floor.second);
  p.seed = derive_seed(master_seed, "skna/" + subject_id);
  return p;
}

namespace detail {

inline void quantize_to_float(std::vector<double>& x) {
  for (double& v : x) v = static_cast<double>(static_cast<float>(v));
}

/// Unit-RMS Gaussian noise confined to [lo, hi] Hz.
inline std::vector<double> band_noise(std::size_t n, double fs, double lo, double hi, Rng& rng) {
  std::vector<double> w(n);
  for (double& v : w) v = normal(rng);
  auto f = dsp::butter_bandpass(dsp::kBandpassPrototypeOrder, lo, std::min(hi, 0.49 * fs), fs);
  auto y = dsp::filtfilt(f, w);
  double ss = 0;
  for (double v : y) ss += v * v;
  const double rms = std::sqrt(ss / static_cast<double>(n));
  for (double& v : y) v /= rms;
  return y;
}

}  // namespace detail

constexpr double kCarrierLo = 500.0;
constexpr double kCarrierHi = 1000.0;

/// In-band background at noise_floor_amp plus Poisson-timed bursts whose rate
/// follows each period's condition. Each burst is a Gaussian envelope
/// (sigma = duration / 3) on an independent in-band carrier.
inline SampledSignal gen_skna(const SubjectProfile& profile, const ProtocolSpec& protocol) {
  profile.validate();
  protocol.validate();
  const double fs = protocol.fs;
  SampledSignal sig;
  sig.fs = fs;
  std::size_t pos = 0;
  for (const auto& [cond, dur] : protocol.periods) {
    const auto len = static_cast<std::size_t>(std::llround(dur * fs));
    sig.periods.push_back({pos, pos + len, cond});
    pos += len;
  }
  const std::size_t n = pos;
  Rng rng(profile.seed);
  auto background = detail::band_noise(n, fs, kCarrierLo, kCarrierHi, rng);
  auto carrier = detail::band_noise(n, fs, kCarrierLo, kCarrierHi, rng);

  std::vector<double> envelope(n, 0.0);
  for (const auto& p : sig.periods) {
    const double rate = (p.condition == Condition::baseline ? profile.baseline_burst_rate : profile.stim_burst_rate) / 60.0;
    double t = static_cast<double>(p.start) / fs + exponential(rng, rate);
    while (t < static_cast<double>(p.end) / fs) {
      const double amp = profile.burst_amp_mean * uniform(rng, 0.7, 1.3);
      const double sigma = profile.burst_dur_mean * uniform(rng, 0.7, 1.3) / 3.0;
      const auto lo = static_cast<std::ptrdiff_t>(std::floor((t - 4 * sigma) * fs));
      const auto hi = static_cast<std::ptrdiff_t>(std::ceil((t + 4 * sigma) * fs));
      for (auto i = std::max<std::ptrdiff_t>(lo, 0); i < std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(n)); ++i) {
        const double d = (static_cast<double>(i) / fs - t) / sigma;
        envelope[static_cast<std::size_t>(i)] += amp * std::exp(-0.5 * d * d);
      }
      t += exponential(rng, rate);
    }
  }
  sig.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    sig.samples[i] = profile.noise_floor_amp * background[i] + envelope[i] * carrier[i];
  detail::quantize_to_float(sig.samples);
  return sig;
}

struct EmgOptions {
  double corner_hz = 250.0;   // low-frequency emphasis below this corner
  double white_floor = 0.25;  // relative amplitude of the flat component
  double duty = 0.4;          // probability an epoch is active
  double epoch_min_s = 2.0;
  double epoch_max_s = 10.0;
  double rest_level = 0.4;    // amplitude between activation epochs
  double ramp_s = 0.05;
};

/// Broadband muscle-like noise: low-frequency-weighted Gaussian noise with a
/// white floor, gated by random activation epochs. Unit RMS while active.
inline SampledSignal gen_emg(double duration_s, double fs, std::uint64_t seed, const EmgOptions& opt = {}) {
  if (!(duration_s > 0)) throw Error(ErrorKind::invalid_argument, "EMG duration must be positive");
  if (!(fs > 0)) throw Error(ErrorKind::invalid_argument, "EMG fs must be positive");
  const auto n = static_cast<std::size_t>(std::llround(duration_s * fs));
  Rng rng(seed);
  std::vector<double> x(n);
  // one-pole lowpass on white noise plus a flat floor
  const double a = std::exp(-2.0 * std::numbers::pi * opt.corner_hz / fs);
  double state = 0;
  double ss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = normal(rng);
    state = a * state + (1 - a) * w;
    x[i] = state / std::sqrt((1 - a) / (1 + a)) + opt.white_floor * normal(rng);
    ss += x[i] * x[i];
  }
  const double rms = std::sqrt(ss / static_cast<double>(n));

  std::vector<double> gate(n);
  std::size_t pos = 0;
  double prev_level = uniform01(rng) < opt.duty ? 1.0 : opt.rest_level;
  const auto ramp = std::max<std::size_t>(1, static_cast<std::size_t>(opt.ramp_s * fs));
  while (pos < n) {
    const double level = uniform01(rng) < opt.duty ? 1.0 : opt.rest_level;
    const auto len = static_cast<std::size_t>(uniform(rng, opt.epoch_min_s, opt.epoch_max_s) * fs);
    for (std::size_t i = 0; i < len && pos + i < n; ++i) {
      const double r = i < ramp ? static_cast<double>(i) / static_cast<double>(ramp) : 1.0;
      gate[pos + i] = prev_level + (level - prev_level) * r;
    }
    pos += len;
    prev_level = level;
  }

  SampledSignal sig;
  sig.fs = fs;
  sig.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) sig.samples[i] = gate[i] * x[i] / rms;
  detail::quantize_to_float(sig.samples);
  return sig;
}

struct DatasetSpec {
  std::size_t n_subjects = 12;
  ProtocolSpec protocol = ProtocolSpec::standard();
  double emg_duration_s = 414.0;
  double emg_fs = 4000.0;
  std::uint64_t seed = 0;
  ProfileRanges ranges;
  EmgOptions emg;
};

inline std::string subject_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "S%02zu", i + 1);
  return buf;
}

inline std::string noise_subject_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "M%02zu", i + 1);
  return buf;
}

/// Clean SKNA for n subjects plus n independent EMG records. Profiles are
/// drawn per subject unless supplied; every generation parameter lands in the
/// manifest.
inline RecordingContainer gen_dataset(const DatasetSpec& spec, const std::vector<SubjectProfile>& profiles = {}) {
  if (spec.n_subjects < 2)
    throw Error(ErrorKind::insufficient_subjects, "need at least 2 subjects, got " + std::to_string(spec.n_subjects));
  if (!profiles.empty() && profiles.size() != spec.n_subjects)
    throw Error(ErrorKind::invalid_argument, "profile count does not match n_subjects");
  RecordingContainer c;
  c.fs = spec.protocol.fs;
  nlohmann::json jprof = nlohmann::json::array();
  nlohmann::json jemg = nlohmann::json::array();
  for (std::size_t i = 0; i < spec.n_subjects; ++i) {
    SubjectProfile p = profiles.empty() ? draw_profile(subject_name(i), spec.seed, spec.ranges) : profiles[i];
    c.records.push_back({p.subject_id, Role::skna, gen_skna(p, spec.protocol)});
    jprof.push_back({{"subject_id", p.subject_id},
                     {"baseline_burst_rate", p.baseline_burst_rate},
                     {"stim_burst_rate", p.stim_burst_rate},
                     {"burst_amp_mean", p.burst_amp_mean},
                     {"burst_dur_mean", p.burst_dur_mean},
                     {"noise_floor_amp", p.noise_floor_amp},
                     {"seed", p.seed}});
  }
  for (std::size_t i = 0; i < spec.n_subjects; ++i) {
    const auto id = noise_subject_name(i);
    const auto seed = derive_seed(spec.seed, "emg/" + id);
    c.records.push_back({id, Role::emg, gen_emg(spec.emg_duration_s, spec.emg_fs, seed, spec.emg)});
    jemg.push_back({{"subject_id", id}, {"seed", seed}, {"duration_s", spec.emg_duration_s}, {"fs", spec.emg_fs}});
  }
  nlohmann::json jprot = nlohmann::json::array();
  for (const auto& [cond, dur] : spec.protocol.periods) jprot.push_back({{"condition", to_string(cond)}, {"duration_s", dur}});
  c.manifest = {{"generator", "synthgen"},
                {"master_seed", spec.seed},
                {"protocol", jprot},
                {"fs", spec.protocol.fs},
                {"profiles", jprof},
                {"emg", jemg},
                {"emg_options",
                 {{"corner_hz", spec.emg.corner_hz},
                  {"white_floor", spec.emg.white_floor},
                  {"duty", spec.emg.duty},
                  {"epoch_min_s", spec.emg.epoch_min_s},
                  {"epoch_max_s", spec.emg.epoch_max_s},
                  {"rest_level", spec.emg.rest_level},
                  {"ramp_s", spec.emg.ramp_s}}}};
  return c;
}

}  // namespace skna::synth
