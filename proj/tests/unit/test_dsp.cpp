#include <catch_amalgamated.hpp>

#include "../support/oracles.hpp"

using namespace skna;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

SampledSignal one_period(std::vector<double> x, double fs, Condition c = Condition::baseline) {
  SampledSignal s;
  s.fs = fs;
  s.periods = {{0, x.size(), c}};
  s.samples = std::move(x);
  return s;
}

// steady-state amplitude measured away from the filtfilt edge transients
double steady_amplitude(const SampledSignal& y) {
  const std::size_t n = y.size();
  return std::sqrt(2.0) * oracle::rms(y.samples, n / 4, 3 * n / 4);
}

}  // namespace

TEST_CASE("bandpass passes the SKNA band and rejects low frequencies") {
  const double fs = 10000;
  const auto pass = dsp::bandpass_filter(one_period(oracle::sine(750, fs, 20000), fs), 500, 1000);
  CHECK(steady_amplitude(pass) >= 0.9);

  const auto stop = dsp::bandpass_filter(one_period(oracle::sine(50, fs, 20000), fs), 500, 1000);
  CHECK(20 * std::log10(1.0 / steady_amplitude(stop)) >= 40.0);

  const auto zero = dsp::bandpass_filter(one_period(std::vector<double>(5000, 0.0), fs), 500, 1000);
  for (double v : zero.samples) REQUIRE(v == 0.0);
}

TEST_CASE("bandpass output power stays in band for white noise") {
  Rng rng(3);
  std::vector<double> x(4096);
  for (auto& v : x) v = normal(rng);
  const auto y = dsp::bandpass_filter(one_period(x, 4000), 500, 1000);
  CHECK(oracle::band_fraction(y.samples, 4000, 450, 1050) > 0.97);
}

TEST_CASE("bandpass design matches the Butterworth magnitude at the band edges") {
  const auto f = dsp::butter_bandpass(dsp::kBandpassPrototypeOrder, 500, 1000, 10000);
  // single pass: -3 dB at the (pre-warped) corners
  CHECK_THAT(std::abs(dsp::response(f, 500, 10000)), WithinAbs(std::sqrt(0.5), 1e-3));
  CHECK_THAT(std::abs(dsp::response(f, 1000, 10000)), WithinAbs(std::sqrt(0.5), 1e-3));
  CHECK_THAT(std::abs(dsp::response(f, std::sqrt(500.0 * 1000.0), 10000)), WithinAbs(1.0, 1e-3));
}

TEST_CASE("bandpass rejects bands outside (0, Nyquist)") {
  const auto s = one_period(std::vector<double>(100, 1.0), 2048);
  CHECK_THROWS_MATCHES(dsp::bandpass_filter(s, 500, 1100), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) { return e.kind() == ErrorKind::invalid_band; }));
  CHECK_THROWS_AS(dsp::bandpass_filter(s, 900, 500), Error);
}

TEST_CASE("filtfilt is zero-phase") {
  // a symmetric pulse keeps its centre of symmetry
  std::vector<double> x(2001, 0.0);
  for (int i = -40; i <= 40; ++i) x[1000 + i] = std::cos(2 * 3.14159265358979 * 750 * i / 10000.0) * std::exp(-i * i / 200.0);
  const auto y = dsp::bandpass_filter(one_period(x, 10000), 500, 1000);
  for (int i = 1; i < 300; ++i) CHECK_THAT(y.samples[1000 + i], WithinAbs(y.samples[1000 - i], 1e-9));
}

TEST_CASE("notch removes 762 Hz and keeps 700 Hz") {
  const double fs = 10000;
  const auto hit = dsp::notch_filter(one_period(oracle::sine(762, fs, 40000), fs), 762);
  CHECK(20 * std::log10(1.0 / steady_amplitude(hit)) >= 20.0);
  const auto keep = dsp::notch_filter(one_period(oracle::sine(700, fs, 40000), fs), 762);
  CHECK(steady_amplitude(keep) >= 0.9);
  const auto zero = dsp::notch_filter(one_period(std::vector<double>(1000, 0.0), fs), 762);
  for (double v : zero.samples) REQUIRE(v == 0.0);
}

TEST_CASE("resampling length, DC and tone frequency") {
  const double fs = 10000;
  const auto sig = one_period(std::vector<double>(100000, 3.25), fs);
  const auto y = dsp::resample(sig, 2048);
  REQUIRE(y.size() == 20480);
  CHECK(y.fs == 2048);
  for (std::size_t i = 200; i < y.size() - 200; ++i) REQUIRE_THAT(y.samples[i], WithinAbs(3.25, 1e-6));

  const auto tone = dsp::resample(one_period(oracle::sine(100, fs, 100000), fs), 2048);
  const std::span<const double> mid(tone.samples.data() + 8192, 4096);
  CHECK_THAT(oracle::peak_frequency(mid, 2048), WithinAbs(100.0, 1.0));
}

TEST_CASE("resampling keeps in-band tone amplitude and rescales periods") {
  SampledSignal s = one_period(oracle::sine(700, 4000, 40000), 4000);
  s.periods = {{0, 16000, Condition::baseline}, {16000, 40000, Condition::stimulation}};
  const auto y = dsp::resample(s, 2048);
  CHECK_THAT(steady_amplitude(y), WithinAbs(1.0, 0.01));
  REQUIRE(y.periods.size() == 2);
  CHECK(y.periods[0].end == 8192);
  CHECK(y.periods[1].start == 8192);
  CHECK(y.periods[1].end == y.size());
  CHECK(dsp::rational_ratio(4000, 2048) == std::pair<std::uint64_t, std::uint64_t>{64, 125});
}

TEST_CASE("segmentation counts") {
  const auto s = one_period(std::vector<double>(14 * 2048, 0.5), 2048);
  CHECK(dsp::segment(s, 1.0, 0.0).size() == 14);
  const auto half = dsp::segment(s, 1.0, 0.5, "S01");
  CHECK(half.size() == 27);
  CHECK(half.starts[1] == 1024);
  CHECK(half.subject_ids.front() == "S01");

  const auto short_sig = one_period(std::vector<double>(1024, 0.5), 2048);
  CHECK_THROWS_MATCHES(dsp::segment(short_sig, 1.0, 0.0), Error, Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.kind() == ErrorKind::empty_segmentation;
                       }));
}

TEST_CASE("segments never straddle a period boundary") {
  SampledSignal s = one_period(std::vector<double>(5000, 0.0), 1000);
  s.periods = {{0, 2500, Condition::baseline}, {2500, 5000, Condition::stimulation}};
  const auto seg = dsp::segment(s, 1.0, 0.5);
  for (std::size_t i = 0; i < seg.size(); ++i) {
    const auto& p = s.periods[seg.period_index[i]];
    CHECK(seg.starts[i] >= p.start);
    CHECK(seg.starts[i] + seg.window_len <= p.end);
    CHECK(seg.labels[i] == p.condition);
  }
}

TEST_CASE("normalization") {
  SegmentSet flat;
  flat.window_len = 4;
  flat.data = {5, 5, 5, 5};
  flat.labels = {Condition::baseline};
  flat.subject_ids = {"a"};
  flat.starts = {0};
  flat.period_index = {0};
  CHECK_THROWS_MATCHES(dsp::normalize_fit(flat), Error, Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.kind() == ErrorKind::degenerate_data;
                       }));

  SegmentSet pm = flat;
  pm.data = {-1, 1, -1, 1};
  const auto st = dsp::normalize_fit(pm);
  CHECK_THAT(st.mean, WithinAbs(0, 1e-12));
  CHECK_THAT(st.std, WithinAbs(1, 1e-12));

  SegmentSet one = flat;
  one.data = {6, 0, 0, 0};
  CHECK_THAT(dsp::normalize_apply(one, {2, 2}).data[0], WithinAbs(2.0, 1e-12));
  CHECK_THAT(dsp::normalize_apply(one, {6, 3}).data[0], WithinAbs(0.0, 1e-12));

  Rng rng(9);
  SegmentSet rnd = flat;
  rnd.window_len = 1000;
  rnd.data.resize(1000);
  for (auto& v : rnd.data) v = 3 + 7 * normal(rng);
  const auto fit = dsp::normalize_fit(rnd);
  const auto z = dsp::normalize_apply(rnd, fit);
  double m = 0, q = 0;
  for (double v : z.data) m += v;
  m /= 1000;
  for (double v : z.data) q += (v - m) * (v - m);
  CHECK_THAT(m, WithinAbs(0, 1e-9));
  CHECK_THAT(std::sqrt(q / 1000), WithinAbs(1, 1e-9));
  const auto back = dsp::normalize_invert(z, fit);
  for (std::size_t i = 0; i < 1000; ++i) REQUIRE_THAT(back.data[i], WithinAbs(rnd.data[i], 1e-9));
}
