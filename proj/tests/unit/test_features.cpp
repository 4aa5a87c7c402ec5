#include <catch_amalgamated.hpp>

#include "../support/oracles.hpp"

using namespace skna;
using namespace skna::features;
using Catch::Matchers::WithinAbs;

namespace {

SampledSignal trace(std::vector<double> x, double fs, Condition c = Condition::baseline) {
  SampledSignal s;
  s.fs = fs;
  s.periods = {{0, x.size(), c}};
  s.samples = std::move(x);
  return s;
}

struct Oracle {
  double count = 0, duration = 0, amplitude = 0, area = 0;
};

// Brute force over one window: walk samples, collect runs, then derive features.
Oracle count_bursts(std::span<const double> w, double thr, double fs) {
  std::vector<std::vector<double>> runs;
  bool in = false;
  for (double v : w) {
    if (v > thr) {
      if (!in) runs.emplace_back();
      runs.back().push_back(v);
      in = true;
    } else {
      in = false;
    }
  }
  Oracle o;
  const double window_s = static_cast<double>(w.size()) / fs;
  o.count = static_cast<double>(runs.size()) * 60.0 / window_s;
  std::size_t above = 0;
  double peaks = 0;
  for (const auto& r : runs) {
    above += r.size();
    peaks += *std::max_element(r.begin(), r.end());
    for (double v : r) o.area += (v - thr) / fs / 60.0;
  }
  o.duration = 100.0 * static_cast<double>(above) / static_cast<double>(w.size());
  o.amplitude = runs.empty() ? 0.0 : peaks / static_cast<double>(runs.size());
  return o;
}

BurstThreshold fixed(double v) { return {v, v, 0, "S01", SignalType::clean}; }

}  // namespace

TEST_CASE("integrator step and impulse responses") {
  const double fs = 1000;
  CHECK(iskna(trace(std::vector<double>(500, 0.0), fs)).samples == std::vector<double>(500, 0.0));

  const auto step = iskna(trace(std::vector<double>(3000, -2.0), fs), {0.1});
  // 100 samples = tau seconds
  CHECK_THAT(step.samples[99], WithinAbs(2.0 * (1 - std::exp(-1.0)), 0.01 * 2.0 * 0.632));
  CHECK_THAT(step.samples.back(), WithinAbs(2.0, 1e-9));

  std::vector<double> imp(50, 0.0);
  imp[0] = 1;
  const auto y = iskna(trace(imp, fs), {0.1});
  const double a = std::exp(-1.0 / (fs * 0.1));
  CHECK_THAT(y.samples[0], WithinAbs(1 - a, 1e-15));
  for (std::size_t n = 1; n < 50; ++n) CHECK_THAT(y.samples[n] / y.samples[n - 1], WithinAbs(a, 1e-12));
}

TEST_CASE("integrator output is non-negative and bounded") {
  Rng rng(2);
  std::vector<double> x(4000);
  double mx = 0;
  for (auto& v : x) {
    v = 5 * normal(rng);
    mx = std::max(mx, std::abs(v));
  }
  for (double v : iskna(trace(x, 2048)).samples) {
    CHECK(v >= 0);
    CHECK(v <= mx);
  }
}

TEST_CASE("moving average") {
  const auto c = askna(trace(std::vector<double>(30000, 1.75), 2048), 5.0);
  for (double v : c.samples) REQUIRE_THAT(v, WithinAbs(1.75, 1e-12));

  Rng rng(3);
  std::vector<double> a(20000), b(20000), s(20000);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = normal(rng);
    b[i] = normal(rng);
    s[i] = a[i] + b[i];
  }
  const auto fa = askna(trace(a, 2048)), fb = askna(trace(b, 2048)), fs = askna(trace(s, 2048));
  for (std::size_t i = 0; i < s.size(); ++i) REQUIRE_THAT(fs.samples[i], WithinAbs(fa.samples[i] + fb.samples[i], 1e-9));

  // interior sample equals a direct 10240-sample mean
  const std::size_t i = 12000, w = 10240;
  double direct = 0;
  for (std::size_t k = i - w / 2; k < i - w / 2 + w; ++k) direct += a[k];
  CHECK_THAT(fa.samples[i], WithinAbs(direct / w, 1e-9));
  CHECK_THROWS_AS(askna(trace({1.0, 2.0}, 2048), 1e-6), Error);
}

TEST_CASE("burst threshold") {
  std::vector<double> two(100, 2.0);
  CHECK(burst_threshold(two, "S", SignalType::bpf).value == 2.0);
  std::vector<double> b = {0.5, 1.5, 0.5, 1.5};  // mean 1, population std 0.5
  const auto t = burst_threshold(b, "S", SignalType::recon);
  CHECK_THAT(t.value, WithinAbs(2.5, 1e-12));
  CHECK(t.signal_type == SignalType::recon);
  std::vector<double> r = {1.5, 0.5, 1.5, 0.5};
  CHECK_THAT(burst_threshold(r, "S", SignalType::recon).value, WithinAbs(t.value, 1e-15));
  CHECK_THROWS_AS(burst_threshold(std::vector<double>{}, "S", SignalType::bpf), Error);
}

TEST_CASE("rectangle fixtures") {
  const double fs = 100, thr = 3;
  SECTION("below threshold") {
    const auto t = extract_features(trace(std::vector<double>(1000, 1.0), fs), fixed(thr), "S01", SignalType::clean);
    REQUIRE(t.size() == 1);
    const auto& v = t.rows[0].values;
    CHECK(v[0] == 0);
    CHECK(v[1] == 0);
    CHECK(v[2] == 0);
    CHECK(v[3] == 0);
    CHECK_THAT(v[4], WithinAbs(1.0, 1e-12));
    CHECK_THAT(v[5], WithinAbs(0.0, 1e-12));
  }
  SECTION("full window above") {
    const auto t = extract_features(trace(std::vector<double>(1000, thr + 6), fs), fixed(thr), "S01", SignalType::clean);
    const auto& v = t.rows[0].values;
    CHECK_THAT(v[0], WithinAbs(6.0, 1e-12));
    CHECK_THAT(v[1], WithinAbs(100.0, 1e-12));
    CHECK_THAT(v[2], WithinAbs(thr + 6, 1e-12));
    CHECK_THAT(v[3], WithinAbs(1.0, 1e-9));
  }
  SECTION("three half-second bursts") {
    std::vector<double> x(1000, 0.0);
    for (std::size_t s : {100u, 400u, 800u})
      for (std::size_t k = 0; k < 50; ++k) x[s + k] = thr + 4;
    const auto t = extract_features(trace(x, fs), fixed(thr), "S01", SignalType::clean);
    const auto o = count_bursts(x, thr, fs);
    const auto& v = t.rows[0].values;
    CHECK_THAT(o.count, WithinAbs(18.0, 1e-12));
    CHECK_THAT(v[0], WithinAbs(o.count, 1e-12));
    CHECK_THAT(v[1], WithinAbs(15.0, 1e-12));
    CHECK_THAT(v[2], WithinAbs(thr + 4, 1e-12));
    CHECK_THAT(v[3], WithinAbs(0.1, 1e-9));
    CHECK_THAT(v[3], WithinAbs(o.area, 1e-12));
  }
}

TEST_CASE("features match the brute-force counter on random traces") {
  Rng rng(4);
  const double fs = 200;
  std::vector<double> x(6000);
  for (auto& v : x) v = std::abs(normal(rng));
  SampledSignal s = trace(x, fs);
  s.periods = {{0, 2500, Condition::baseline}, {2500, 6000, Condition::stimulation}};
  const auto t = extract_features(s, fixed(1.2), "S01", SignalType::bpf);
  // 2500 -> 1 window (tail dropped), 3500 -> 1 window
  REQUIRE(t.size() == 2);
  CHECK(t.rows[1].condition == Condition::stimulation);
  for (std::size_t w = 0; w < 2; ++w) {
    const std::size_t start = w == 0 ? 0 : 2500;
    const auto o = count_bursts(std::span<const double>(x.data() + start, 2000), 1.2, fs);
    const auto& v = t.rows[w].values;
    CHECK_THAT(v[0], WithinAbs(o.count, 1e-9));
    CHECK_THAT(v[1], WithinAbs(o.duration, 1e-9));
    CHECK_THAT(v[2], WithinAbs(o.amplitude, 1e-9));
    CHECK_THAT(v[3], WithinAbs(o.area, 1e-9));
    CHECK(v[1] >= 0);
    CHECK(v[1] <= 100);
  }
}

TEST_CASE("adjacent runs separated by one sample count twice") {
  std::vector<double> x(1000, 0.0);
  for (std::size_t k = 100; k < 200; ++k) x[k] = 5;
  x[150] = 0;
  const auto t = extract_features(trace(x, 100), fixed(1), "S01", SignalType::clean);
  CHECK_THAT(t.rows[0].values[0], WithinAbs(12.0, 1e-12));
}

TEST_CASE("short periods give an empty table") {
  const auto t = extract_features(trace(std::vector<double>(500, 1.0), 100), fixed(0.5), "S01", SignalType::clean);
  CHECK(t.empty());
}

TEST_CASE("joint scale equivariance") {
  Rng rng(5);
  std::vector<double> x(20 * 256);
  for (auto& v : x) v = normal(rng) * (1 + 3 * (std::sin(static_cast<double>(&v - x.data()) / 300.0) > 0.8));
  const auto i1 = iskna(trace(x, 256));
  auto xs = x;
  for (auto& v : xs) v *= 2.5;
  const auto i2 = iskna(trace(xs, 256));
  const auto t1 = burst_threshold(baseline_samples(i1), "S", SignalType::clean);
  const auto t2 = burst_threshold(baseline_samples(i2), "S", SignalType::clean);
  CHECK_THAT(t2.value, WithinAbs(2.5 * t1.value, 1e-9));
  const auto f1 = extract_features(i1, t1, "S", SignalType::clean);
  const auto f2 = extract_features(i2, t2, "S", SignalType::clean);
  REQUIRE(f1.size() == 2);
  for (std::size_t w = 0; w < 2; ++w) {
    const auto& a = f1.rows[w].values;
    const auto& b = f2.rows[w].values;
    CHECK(a[0] == b[0]);
    CHECK_THAT(b[1], WithinAbs(a[1], 1e-9));
    for (std::size_t k : {2u, 3u, 4u, 5u}) CHECK_THAT(b[k], WithinAbs(2.5 * a[k], 1e-9 * (1 + std::abs(a[k]))));
  }
}

TEST_CASE("clean synthetic features separate conditions") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto p = synth::draw_profile("S01", seed);
    const auto s = synth::gen_skna(p, synth::ProtocolSpec::scaled(0.25));
    const auto isk = iskna(s);
    const auto thr = burst_threshold(baseline_samples(isk), "S01", SignalType::clean);
    const auto t = extract_features(isk, thr, "S01", SignalType::clean);
    const auto base = t.column(0, SignalType::clean, Condition::baseline);
    const auto stim = t.column(0, SignalType::clean, Condition::stimulation);
    INFO("seed " << seed);
    CHECK(stats::mean_of(stim) > stats::mean_of(base));
  }
}

TEST_CASE("CSV header") {
  std::ostringstream os;
  write_csv_header(os);
  CHECK(os.str() ==
        "subject,signal_type,condition,window_index,burst_count,burst_duration,burst_amplitude,burst_total_area,"
        "mean_iskna,std_iskna\n");
}
