#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "../support/oracles.hpp"

using namespace skna;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig c = config_from_json(nlohmann::json::parse(R"({
    "master_seed": 31,
    "dataset": {"synth": {"n_subjects": 3, "emg_duration_s": 20,
      "protocol": [{"condition": "baseline", "duration_s": 10}, {"condition": "stimulation", "duration_s": 10},
                   {"condition": "baseline", "duration_s": 10}, {"condition": "stimulation", "duration_s": 10}]}},
    "snr_db": [-4],
    "train": {"epochs": 1, "batch_size": 8}
  })"));
  return c;
}

const ExperimentReport& tiny_report() {
  static const ExperimentReport r = run_loso(tiny_config());
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("skna_test_" + name);
  fs::remove_all(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool is_config(const Error& e) { return e.kind() == ErrorKind::config; }

}  // namespace

TEST_CASE("config parsing errors") {
  using nlohmann::json;
  CHECK_THROWS_MATCHES(config_from_json(json::parse(R"({"snr_db": [-4]})")), Error,
                       Catch::Matchers::Predicate<Error>(is_config));
  CHECK_THROWS_MATCHES(config_from_json(json::parse(R"({"master_seed": 1, "snr_db": []})")), Error,
                       Catch::Matchers::Predicate<Error>(is_config));
  CHECK_THROWS_MATCHES(config_from_json(json::parse(R"({"master_seed": 1, "snr": [-4]})")), Error,
                       Catch::Matchers::Predicate<Error>(is_config));
  CHECK_THROWS_MATCHES(config_from_json(json::parse(R"({"master_seed": 1, "train": {"epochs": 0}})")), Error,
                       Catch::Matchers::Predicate<Error>(is_config));
  CHECK_THROWS_MATCHES(config_from_json(json::parse(R"({"master_seed": "x"})")), Error,
                       Catch::Matchers::Predicate<Error>(is_config));
  CHECK_THROWS_MATCHES(load_config("/nonexistent/cfg.json"), Error, Catch::Matchers::Predicate<Error>(is_config));

  const auto path = fs::temp_directory_path() / "skna_bad_cfg.json";
  std::ofstream(path) << "{not json";
  CHECK_THROWS_MATCHES(load_config(path), Error, Catch::Matchers::Predicate<Error>(is_config));
  fs::remove(path);
}

TEST_CASE("config round trip and hash") {
  const auto c = tiny_config();
  const auto back = config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(config_hash(back) == config_hash(c));
  auto moved = c;
  moved.output_dir = "elsewhere";
  CHECK(config_hash(moved) == config_hash(c));
  auto other = c;
  other.master_seed = 32;
  CHECK(config_hash(other) != config_hash(c));
  CHECK(config_hash(c).size() == 16);
}

TEST_CASE("one fold per subject and SNR") {
  const auto& r = tiny_report();
  REQUIRE(r.subjects == std::vector<std::string>{"S01", "S02", "S03"});
  REQUIRE(r.folds.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r.folds[i].subject == r.subjects[i]);
    CHECK_FALSE(r.folds[i].aborted);
    CHECK(r.folds[i].epoch_loss.size() == 1);
    CHECK(r.folds[i].plan.test_subject == r.subjects[i]);
    CHECK_THAT(r.folds[i].mix_pooled_snr, Catch::Matchers::WithinAbs(-4.0, 1e-3));
  }
  CHECK_FALSE(r.partial);
  // 3 signal types x 3 classifiers
  CHECK(r.classification.size() == 9);
  const auto t = r.features_at(-4);
  for (auto type : features::kSignalTypes) CHECK(t.filter(type).size() == 3 * 4);
}

TEST_CASE("noise exclusivity across folds") {
  for (const auto& f : tiny_report().folds) {
    for (const auto& ref : f.plan.train_pairing) CHECK(ref.record != f.plan.test_noise_subject);
    for (const auto& [i, ref] : f.plan.augmentation_pairs) CHECK(ref.record != f.plan.test_noise_subject);
  }
}

TEST_CASE("fold isolation audit") {
  const auto cfg = tiny_config();
  const auto data = prepare_dataset(cfg);
  const auto ids = skna_subjects(data);
  const auto clean_all = detail::pooled_segments(data, ids, cfg.preprocess.window_s);
  const auto bank = mix::noise_bank(data);
  const auto& r = tiny_report();
  for (const auto& f : r.folds) {
    // blank the held-out subject; the training side of the plan must not change
    SegmentSet blanked = clean_all;
    for (std::size_t i = 0; i < blanked.size(); ++i)
      if (blanked.subject_ids[i] == f.subject)
        for (auto& v : blanked.segment(i)) v = 0.0;
    const auto full = mix::apply_plan(clean_all, bank, f.plan);
    const auto train_only = mix::apply_plan(blanked, bank, f.plan);
    CHECK(full.train_noisy.data == train_only.train_noisy.data);
    CHECK(full.train_clean.data == train_only.train_clean.data);
    for (const auto& id : train_only.train_noisy.subject_ids) CHECK(id != f.subject);

    // normalization constants in the checkpoint come from training inputs only
    const auto ns = dsp::normalize_fit(train_only.train_noisy);
    REQUIRE(f.checkpoint.has_value());
    CHECK(f.checkpoint->manifest.at("norm_mean").get<double>() == ns.mean);
    CHECK(f.checkpoint->manifest.at("norm_std").get<double>() == ns.std);
  }

  // classifier fold: refit from training rows only and compare scores
  const auto t = r.features_at(-4);
  const auto res = classify_loso(t, features::SignalType::recon, ml::ClassifierKind::logistic_regression, r.subjects,
                                 ClassifyUnit::window, cfg.master_seed);
  const auto s = detail::classification_samples(t, features::SignalType::recon, ClassifyUnit::window);
  for (std::size_t k = 0; k < r.subjects.size(); ++k) {
    std::vector<std::size_t> tr, te;
    for (std::size_t i = 0; i < s.subject.size(); ++i) (s.subject[i] == r.subjects[k] ? te : tr).push_back(i);
    ml::Matrix Xtr(static_cast<Eigen::Index>(tr.size()), 6), Xte(static_cast<Eigen::Index>(te.size()), 6);
    std::vector<int> ytr;
    for (std::size_t i = 0; i < tr.size(); ++i) {
      for (Eigen::Index f = 0; f < 6; ++f) Xtr(static_cast<Eigen::Index>(i), f) = s.x[tr[i]][static_cast<std::size_t>(f)];
      ytr.push_back(s.y[tr[i]]);
    }
    for (std::size_t i = 0; i < te.size(); ++i)
      for (Eigen::Index f = 0; f < 6; ++f) Xte(static_cast<Eigen::Index>(i), f) = s.x[te[i]][static_cast<std::size_t>(f)];
    // standardize with training statistics computed by hand
    for (Eigen::Index f = 0; f < 6; ++f) {
      const double m = Xtr.col(f).mean();
      const double sd = std::sqrt((Xtr.col(f).array() - m).square().mean());
      if (sd == 0) {
        Xtr.col(f).setZero();
        Xte.col(f).setZero();
      } else {
        Xtr.col(f) = (Xtr.col(f).array() - m) / sd;
        Xte.col(f) = (Xte.col(f).array() - m) / sd;
      }
    }
    auto model = ml::train_classifier(ml::ClassifierSpec::of(ml::ClassifierKind::logistic_regression, derive_seed(cfg.master_seed, "classify/lr/" + r.subjects[k])), Xtr, ytr);
    const auto p = model->predict_proba(Xte);
    REQUIRE(p.size() == res.folds[k].probabilities.size());
    for (std::size_t i = 0; i < p.size(); ++i)
      CHECK_THAT(res.folds[k].probabilities[i], Catch::Matchers::WithinAbs(p[i], 1e-9));
  }
}

TEST_CASE("report emission, ROC curve count and replay") {
  const auto& r = tiny_report();
  std::size_t curves = 0;
  const auto svg = report::roc_svg(r, -4, &curves);
  CHECK(curves == 9);
  std::size_t found = 0;
  for (std::size_t pos = 0; (pos = svg.find("class=\"roc-curve\"", pos)) != std::string::npos; ++pos) ++found;
  CHECK(found == 9);

  const auto a = fresh_dir("emit_a"), b = fresh_dir("emit_b");
  const auto written = report::emit_report(r, a);
  for (const auto* name : {"recon_metrics.csv", "feature_stats.csv", "classification.csv", "report.json",
                           "figures/roc_m4dB.svg", "figures/boxplots_m4dB.svg", "figures/iskna_triptych_m4dB.svg",
                           "figures/trace_grid_m4dB.svg", "figures/bars_m4dB.svg"})
    CHECK(fs::exists(a / name));
  const auto first = slurp(a / "classification.csv");
  CHECK(first.rfind("# config_hash=" + r.hash, 0) == 0);

  const auto replay = report::report_from_json(nlohmann::json::parse(slurp(a / "report.json")));
  report::emit_report(replay, b);
  for (const auto& rel : written)
    if (rel.ends_with(".csv") || rel.ends_with(".svg")) {
      INFO(rel);
      CHECK(slurp(a / rel) == slurp(b / rel));
    }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("empty feature table skips the figure") {
  ExperimentReport r = tiny_report();
  r.clean_features.rows.clear();
  for (auto& f : r.folds) f.features.rows.clear();
  r.traces.clear();
  r.classification.clear();
  std::vector<std::string> log;
  const auto d = fresh_dir("emit_empty");
  report::emit_report(r, d, [&](const std::string& m) { log.push_back(m); });
  CHECK_FALSE(fs::exists(d / "figures/boxplots_m4dB.svg"));
  CHECK_FALSE(fs::exists(d / "figures/roc_m4dB.svg"));
  CHECK(fs::exists(d / "features_m4dB.csv"));
  CHECK(log.size() == 3);
  fs::remove_all(d);
}

TEST_CASE("unwritable output directory is an io error") {
  const auto file = fs::temp_directory_path() / "skna_not_a_dir";
  std::ofstream(file) << "x";
  CHECK_THROWS_MATCHES(report::emit_report(tiny_report(), file / "out"), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) { return e.kind() == ErrorKind::io; }));
  fs::remove(file);
}

TEST_CASE("stars used by the boxplots") {
  CHECK(stats::stars(0.004) == "**");
  ExperimentReport r = tiny_report();
  r.posthoc.clear();
  stats::TestResult t;
  t.p_value = 0.004;
  r.posthoc.push_back({-4, "burst_count", "recon:baseline-vs-stimulation", t});
  const auto svg = report::boxplots_svg(r, -4, r.features_at(-4));
  CHECK(svg.find(">**<") != std::string::npos);
}

TEST_CASE("features CSV round trip") {
  const auto& r = tiny_report();
  const auto t = r.features_at(-4);
  std::istringstream in(report::features_csv(r, t));
  const auto back = report::read_features_csv(in);
  REQUIRE(back.size() == t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    CHECK(back.rows[i].subject == t.rows[i].subject);
    CHECK(back.rows[i].signal_type == t.rows[i].signal_type);
    for (std::size_t f = 0; f < 6; ++f)
      CHECK_THAT(back.rows[i].values[f], Catch::Matchers::WithinRel(t.rows[i].values[f], 1e-9) ||
                                             Catch::Matchers::WithinAbs(t.rows[i].values[f], 1e-12));
  }
}

TEST_CASE("job count does not change results") {
  auto cfg = tiny_config();
  cfg.synth.n_subjects = 2;
  const auto a = run_loso(cfg, 1);
  const auto b = run_loso(cfg, 2);
  CHECK(report::recon_metrics_csv(a) == report::recon_metrics_csv(b));
  CHECK(report::train_loss_csv(a) == report::train_loss_csv(b));
  CHECK(report::classification_csv(a) == report::classification_csv(b));
}
