#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "skna/checkpoint.hpp"
#include "skna/classify.hpp"
#include "skna/container.hpp"
#include "skna/denoiser.hpp"
#include "skna/dsp.hpp"
#include "skna/features.hpp"
#include "skna/noise_mix.hpp"
#include "skna/stats.hpp"
#include "skna/synth.hpp"

namespace skna {

struct PreprocessConfig {
  double band_lo = 500.0;
  double band_hi = 1000.0;
  double notch_hz = 762.0;
  double notch_q = dsp::kNotchQ;
  double fs_out = 2048.0;
  double window_s = 1.0;
};

/// Bandpass, then notch, then resample; every stage keeps the period table.
inline SampledSignal preprocess(const SampledSignal& sig, const PreprocessConfig& cfg) {
  auto x = dsp::bandpass_filter(sig, cfg.band_lo, cfg.band_hi);
  x = dsp::notch_filter(x, cfg.notch_hz, cfg.notch_q);
  if (x.fs != cfg.fs_out) x = dsp::resample(x, cfg.fs_out);
  return x;
}

inline RecordingContainer preprocess_container(const RecordingContainer& in, const PreprocessConfig& cfg) {
  RecordingContainer out;
  out.fs = cfg.fs_out;
  out.manifest = in.manifest;
  out.manifest["preprocess"] = {{"band_lo", cfg.band_lo}, {"band_hi", cfg.band_hi}, {"notch_hz", cfg.notch_hz},
                                {"notch_q", cfg.notch_q},   {"fs_out", cfg.fs_out}};
  for (const auto& r : in.records) out.records.push_back({r.subject_id, r.role, preprocess(r.signal, cfg)});
  return out;
}

enum class ClassifyUnit { window, period };

struct ExperimentConfig {
  std::optional<std::string> dataset_path;
  synth::DatasetSpec synth;
  std::vector<double> snr_db{-4.0, -8.0};
  PreprocessConfig preprocess;
  TrainConfig train;
  features::IntegratorConfig integrator;
  double feature_window_s = 10.0;
  double askna_window_s = 5.0;
  std::vector<ml::ClassifierKind> classifiers{ml::ClassifierKind::random_forest, ml::ClassifierKind::svm_rbf,
                                              ml::ClassifierKind::logistic_regression};
  ClassifyUnit classify_unit = ClassifyUnit::window;
  std::uint64_t master_seed = 0;
  std::string output_dir = "out";
  std::size_t max_subjects = 0;  // 0 keeps every subject
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  if (c.dataset_path) {
    j["dataset"] = {{"path", *c.dataset_path}};
  } else {
    nlohmann::json prot = nlohmann::json::array();
    for (const auto& [cond, d] : c.synth.protocol.periods) prot.push_back({{"condition", to_string(cond)}, {"duration_s", d}});
    j["dataset"] = {{"synth",
                     {{"n_subjects", c.synth.n_subjects},
                      {"seed", c.synth.seed},
                      {"fs", c.synth.protocol.fs},
                      {"protocol", prot},
                      {"emg_duration_s", c.synth.emg_duration_s},
                      {"emg_fs", c.synth.emg_fs}}}};
  }
  j["snr_db"] = c.snr_db;
  j["preprocess"] = {{"band_lo", c.preprocess.band_lo},   {"band_hi", c.preprocess.band_hi},
                     {"notch_hz", c.preprocess.notch_hz}, {"notch_q", c.preprocess.notch_q},
                     {"fs_out", c.preprocess.fs_out},     {"window_s", c.preprocess.window_s}};
  j["train"] = {{"epochs", c.train.epochs}, {"batch_size", c.train.batch_size}, {"lr", c.train.lr}};
  j["features"] = {{"tau", c.integrator.tau}, {"window_s", c.feature_window_s}, {"askna_window_s", c.askna_window_s}};
  nlohmann::json cls = nlohmann::json::array();
  for (auto k : c.classifiers) cls.push_back(ml::to_string(k));
  j["classifiers"] = cls;
  j["classify_unit"] = c.classify_unit == ClassifyUnit::window ? "window" : "period";
  j["master_seed"] = c.master_seed;
  j["output_dir"] = c.output_dir;
  j["max_subjects"] = c.max_subjects;
  return j;
}

/// Parses a JSON config; absent keys keep their defaults. Unknown top-level
/// keys are rejected so typos surface as config errors.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"dataset",     "snr_db",        "preprocess",  "train",
                                           "features",    "classifiers",   "classify_unit", "master_seed",
                                           "output_dir",  "max_subjects"};
  ExperimentConfig c;
  try {
    if (!j.is_object()) throw Error(ErrorKind::config, "config must be a JSON object");
    for (const auto& [k, v] : j.items())
      if (!known.count(k)) throw Error(ErrorKind::config, "unknown config key '" + k + "'");
    if (!j.contains("master_seed")) throw Error(ErrorKind::config, "config must set master_seed");
    c.master_seed = j.at("master_seed").get<std::uint64_t>();
    c.synth.seed = c.master_seed;
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      if (d.contains("path")) c.dataset_path = d.at("path").get<std::string>();
      if (d.contains("synth")) {
        const auto& s = d.at("synth");
        c.synth.n_subjects = s.value("n_subjects", c.synth.n_subjects);
        c.synth.seed = s.value("seed", c.master_seed);
        c.synth.protocol.fs = s.value("fs", c.synth.protocol.fs);
        c.synth.emg_duration_s = s.value("emg_duration_s", c.synth.emg_duration_s);
        c.synth.emg_fs = s.value("emg_fs", c.synth.emg_fs);
        if (s.contains("protocol")) {
          c.synth.protocol.periods.clear();
          for (const auto& p : s.at("protocol"))
            c.synth.protocol.periods.emplace_back(condition_from_string(p.at("condition").get<std::string>()),
                                                  p.at("duration_s").get<double>());
        }
      }
    }
    if (j.contains("snr_db")) c.snr_db = j.at("snr_db").get<std::vector<double>>();
    if (c.snr_db.empty()) throw Error(ErrorKind::config, "at least one SNR target is required");
    if (j.contains("preprocess")) {
      const auto& p = j.at("preprocess");
      c.preprocess.band_lo = p.value("band_lo", c.preprocess.band_lo);
      c.preprocess.band_hi = p.value("band_hi", c.preprocess.band_hi);
      c.preprocess.notch_hz = p.value("notch_hz", c.preprocess.notch_hz);
      c.preprocess.notch_q = p.value("notch_q", c.preprocess.notch_q);
      c.preprocess.fs_out = p.value("fs_out", c.preprocess.fs_out);
      c.preprocess.window_s = p.value("window_s", c.preprocess.window_s);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      c.train.epochs = t.value("epochs", c.train.epochs);
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.lr = t.value("lr", c.train.lr);
    }
    if (c.train.epochs < 1) throw Error(ErrorKind::config, "train.epochs must be >= 1");
    if (j.contains("features")) {
      const auto& f = j.at("features");
      c.integrator.tau = f.value("tau", c.integrator.tau);
      c.feature_window_s = f.value("window_s", c.feature_window_s);
      c.askna_window_s = f.value("askna_window_s", c.askna_window_s);
    }
    if (j.contains("classifiers")) {
      c.classifiers.clear();
      for (const auto& k : j.at("classifiers")) c.classifiers.push_back(ml::classifier_from_string(k.get<std::string>()));
    }
    if (j.contains("classify_unit")) {
      const auto u = j.at("classify_unit").get<std::string>();
      if (u == "window") c.classify_unit = ClassifyUnit::window;
      else if (u == "period") c.classify_unit = ClassifyUnit::period;
      else throw Error(ErrorKind::config, "classify_unit must be 'window' or 'period'");
    }
    c.output_dir = j.value("output_dir", c.output_dir);
    c.max_subjects = j.value("max_subjects", c.max_subjects);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, std::string("config: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::config) throw;
    throw Error(ErrorKind::config, std::string("config: ") + e.what());
  }
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::config, "cannot open config '" + path.string() + "'");
  try {
    return config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, std::string("config is not valid JSON: ") + e.what());
  }
}

/// Hex digest of the canonical config JSON, excluding the output directory.
inline std::string config_hash(const ExperimentConfig& c) {
  auto j = to_json(c);
  j.erase("output_dir");
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

/// Display traces for one subject, decimated for plotting.
struct TraceSet {
  std::string subject;
  double fs = 0;  // rate of the decimated traces
  std::vector<Period> periods;
  std::map<std::string, std::vector<double>> skna, iskna, askna;  // keyed by signal type
};

struct FoldResult {
  double snr_db = 0;
  std::string subject;
  bool aborted = false;
  std::string error;
  stats::ReconMetrics bpf, recon;
  double mix_pooled_snr = 0;  // over every mixed pair of the fold
  std::vector<double> epoch_loss;
  mix::MixPlan plan;
  features::FeatureTable features;  // bpf and recon rows
  std::optional<ModelSection> checkpoint;
  std::optional<TraceSet> traces;
};

struct FeatureStat {
  double snr_db = 0;
  std::string feature;
  features::SignalType type = features::SignalType::clean;
  double fisher = 0;
  double auroc = 0;
};

struct OmnibusStat {
  double snr_db = 0;
  std::string feature;
  stats::TestResult kw;
};

struct PosthocStat {
  double snr_db = 0;
  std::string feature;
  std::string comparison;  // e.g. "recon:baseline-vs-stimulation", "baseline:clean-vs-bpf"
  stats::TestResult test;
};

struct ClassificationResult {
  double snr_db = 0;
  features::SignalType type = features::SignalType::clean;
  ml::ClassifierKind classifier = ml::ClassifierKind::random_forest;
  std::vector<std::string> subjects;
  std::vector<ml::FoldMetrics> folds;
  double auc = 0, accuracy = 0, sensitivity = 0, specificity = 0, f1 = 0;  // fold means
};

struct ExperimentReport {
  ExperimentConfig config;
  std::string hash;
  std::vector<std::string> subjects;
  std::vector<FoldResult> folds;             // ordered by (snr, subject)
  features::FeatureTable clean_features;     // computed once
  std::map<double, TraceSet> traces;         // representative subject per SNR
  std::vector<FeatureStat> feature_stats;
  std::vector<OmnibusStat> omnibus;
  std::vector<PosthocStat> posthoc;
  std::vector<ClassificationResult> classification;
  bool partial = false;

  /// bpf + recon rows of one SNR block plus the shared clean rows.
  features::FeatureTable features_at(double snr) const {
    features::FeatureTable t = clean_features;
    for (const auto& f : folds)
      if (f.snr_db == snr) t.append(f.features);
    return t;
  }
};

using LogFn = std::function<void(const std::string&)>;

namespace detail {

inline SegmentSet pooled_segments(const RecordingContainer& c, const std::vector<std::string>& subjects, double window_s) {
  SegmentSet all;
  bool first = true;
  for (const auto& s : subjects) {
    const auto* r = c.find(s, Role::skna);
    auto seg = dsp::segment(r->signal, window_s, 0.0, s);
    if (first) {
      all = SegmentSet::like(seg);
      first = false;
    }
    for (std::size_t i = 0; i < seg.size(); ++i) all.push_from(seg, i);
  }
  return all;
}

inline SegmentSet subject_segments(const SegmentSet& all, const std::string& subject) {
  SegmentSet out = SegmentSet::like(all);
  for (std::size_t i = 0; i < all.size(); ++i)
    if (all.subject_ids[i] == subject) out.push_from(all, i);
  return out;
}

inline std::vector<double> decimate(const std::vector<double>& x, std::size_t k, bool envelope) {
  std::vector<double> out;
  for (std::size_t i = 0; i < x.size(); i += k) {
    double v = envelope ? 0.0 : x[i];
    if (envelope)
      for (std::size_t j = i; j < std::min(x.size(), i + k); ++j) v = std::max(v, std::abs(x[j]));
    out.push_back(v);
  }
  return out;
}

inline void add_traces(TraceSet& t, const std::string& key, const SampledSignal& sig, const SampledSignal& isk,
                       double askna_window_s, std::size_t k) {
  t.skna[key] = decimate(sig.samples, k, true);
  t.iskna[key] = decimate(isk.samples, k, false);
  t.askna[key] = decimate(features::askna(isk, askna_window_s).samples, k, false);
}

/// Per-window features of one signal with a threshold from its own baseline.
inline features::FeatureTable features_of(const SampledSignal& isk, const std::string& subject, features::SignalType type,
                                          double window_s) {
  const auto base = features::baseline_samples(isk);
  const auto thr = features::burst_threshold(base, subject, type);
  return features::extract_features(isk, thr, subject, type, window_s);
}

}  // namespace detail

/// Loads or synthesizes the dataset, then conditions every record.
inline RecordingContainer prepare_dataset(const ExperimentConfig& cfg) {
  RecordingContainer raw = cfg.dataset_path ? read_container(*cfg.dataset_path) : synth::gen_dataset(cfg.synth);
  return preprocess_container(raw, cfg.preprocess);
}

inline std::vector<std::string> skna_subjects(const RecordingContainer& c, std::size_t max_subjects = 0) {
  std::set<std::string> ids;
  for (const auto* r : c.by_role(Role::skna)) ids.insert(r->subject_id);
  std::vector<std::string> out(ids.begin(), ids.end());
  if (max_subjects && out.size() > max_subjects) out.resize(max_subjects);
  return out;
}

/// One held-out subject at one SNR: mix, train, denoise, score, featurize.
inline FoldResult run_fold(const ExperimentConfig& cfg, const SegmentSet& clean_all, const mix::NoiseBank& bank,
                           const std::string& subject, double snr, bool keep_traces, const LogFn& log = {}) {
  FoldResult fr;
  fr.snr_db = snr;
  fr.subject = subject;
  const std::string tag = "snr" + std::to_string(static_cast<long long>(std::llround(snr * 1000))) + "/" + subject;
  try {
    auto m = mix::mix_dataset(clean_all, bank, derive_seed(cfg.master_seed, "mix/" + tag), snr, subject);
    fr.plan = m.plan;
    fr.mix_pooled_snr = mix::pooled_snr({{&m.train_clean, &m.train_noisy}, {&m.test_clean, &m.test_noisy}});

    const auto stats_n = dsp::normalize_fit(m.train_noisy);
    DenoiserModel<float> model(derive_seed(cfg.master_seed, "model/" + tag), m.train_noisy.window_len);
    model.norm_stats = stats_n;
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.master_seed, "train/" + tag);
    const auto rep = train(model, dsp::normalize_apply(m.train_noisy, stats_n), dsp::normalize_apply(m.train_clean, stats_n),
                           tc, [&](std::size_t e, double loss) {
                             if (log && (e == 1 || e == tc.epochs || e % 10 == 0))
                               log(tag + " epoch " + std::to_string(e) + " loss " + std::to_string(loss));
                           });
    fr.epoch_loss = rep.epoch_loss;
    fr.checkpoint = model_section(model, {{"subject", subject}, {"snr_db", snr}});

    const auto clean = overlap_add(m.test_clean, 0.0);
    const auto bpf = overlap_add(m.test_noisy, 0.0);
    const auto half = dsp::segment(bpf, cfg.preprocess.window_s, 0.5, subject);
    const auto recon = overlap_add(denoise_segments(model, dsp::normalize_apply(half, stats_n)), 0.5, &model.norm_stats);

    fr.bpf = stats::recon_metrics(bpf, clean, cfg.integrator);
    fr.recon = stats::recon_metrics(recon, clean, cfg.integrator);

    const auto ib = features::iskna(bpf, cfg.integrator);
    const auto ir = features::iskna(recon, cfg.integrator);
    fr.features = detail::features_of(ib, subject, features::SignalType::bpf, cfg.feature_window_s);
    fr.features.append(detail::features_of(ir, subject, features::SignalType::recon, cfg.feature_window_s));

    if (keep_traces) {
      const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(clean.fs / 64.0));
      TraceSet t;
      t.subject = subject;
      t.fs = clean.fs / static_cast<double>(k);
      for (auto p : clean.periods) t.periods.push_back({p.start / k, p.end / k, p.condition});
      detail::add_traces(t, "bpf", bpf, ib, cfg.askna_window_s, k);
      detail::add_traces(t, "recon", recon, ir, cfg.askna_window_s, k);
      detail::add_traces(t, "clean", clean, features::iskna(clean, cfg.integrator), cfg.askna_window_s, k);
      fr.traces = std::move(t);
    }
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::non_finite) throw;
    fr.aborted = true;
    fr.error = e.what();
    if (log) log(tag + " aborted: " + fr.error);
  }
  return fr;
}

namespace detail {

inline std::vector<double> subject_condition_means(const features::FeatureTable& t, std::size_t f, features::SignalType type,
                                                   Condition c, const std::vector<std::string>& subjects) {
  std::vector<double> out;
  for (const auto& s : subjects) {
    double sum = 0;
    std::size_t n = 0;
    for (const auto& r : t.rows)
      if (r.subject == s && r.signal_type == type && r.condition == c) sum += r.values[f], ++n;
    if (n) out.push_back(sum / static_cast<double>(n));
  }
  return out;
}

/// Values of two signal types paired by (subject, window) within a condition.
inline std::pair<std::vector<double>, std::vector<double>> paired_by_window(const features::FeatureTable& t, std::size_t f,
                                                                            features::SignalType a, features::SignalType b,
                                                                            Condition c) {
  std::map<std::pair<std::string, std::size_t>, double> va;
  for (const auto& r : t.rows)
    if (r.signal_type == a && r.condition == c) va[{r.subject, r.window_index}] = r.values[f];
  std::pair<std::vector<double>, std::vector<double>> out;
  for (const auto& r : t.rows)
    if (r.signal_type == b && r.condition == c) {
      auto it = va.find({r.subject, r.window_index});
      if (it != va.end()) {
        out.first.push_back(it->second);
        out.second.push_back(r.values[f]);
      }
    }
  return out;
}

inline void run_posthoc(std::vector<PosthocStat>& out, double snr, const std::string& name, const std::string& comparison,
                        std::span<const double> x, std::span<const double> y) {
  PosthocStat p;
  p.snr_db = snr;
  p.feature = name;
  p.comparison = comparison;
  try {
    p.test = stats::wilcoxon_signed_rank(x, y);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::insufficient_pairs) throw;
    p.test.method = "wilcoxon-signed-rank";
    p.test.p_value = std::numeric_limits<double>::quiet_NaN();
    p.test.warning = e.what();
  }
  out.push_back(p);
}

}  // namespace detail

/// Omnibus, post-hoc and separability statistics for one SNR block.
inline void feature_statistics(ExperimentReport& rep, double snr, const features::FeatureTable& t) {
  using features::SignalType;
  for (std::size_t f = 0; f < features::kNumFeatures; ++f) {
    const std::string name(features::kFeatureNames[f]);
    std::vector<std::vector<double>> groups;
    for (auto type : features::kSignalTypes)
      for (auto c : {Condition::baseline, Condition::stimulation}) groups.push_back(t.column(f, type, c));
    bool have_all = true;
    for (const auto& g : groups) have_all = have_all && !g.empty();
    if (!have_all) continue;
    const auto kw = stats::kruskal_wallis(groups);
    rep.omnibus.push_back({snr, name, kw});

    for (auto type : features::kSignalTypes) {
      const auto base = t.column(f, type, Condition::baseline);
      const auto stim = t.column(f, type, Condition::stimulation);
      FeatureStat fs;
      fs.snr_db = snr;
      fs.feature = name;
      fs.type = type;
      try {
        fs.fisher = stats::fishers_ratio(stim, base);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::degenerate_variance) throw;
        fs.fisher = std::numeric_limits<double>::quiet_NaN();
      }
      fs.auroc = stats::auroc(stim, base);
      rep.feature_stats.push_back(fs);
    }

    if (!(kw.p_value < 0.05)) continue;
    for (auto type : features::kSignalTypes) {
      const auto b = detail::subject_condition_means(t, f, type, Condition::baseline, rep.subjects);
      const auto s = detail::subject_condition_means(t, f, type, Condition::stimulation, rep.subjects);
      if (b.size() == s.size())
        detail::run_posthoc(rep.posthoc, snr, name, std::string(features::to_string(type)) + ":baseline-vs-stimulation", b, s);
    }
    for (auto c : {Condition::baseline, Condition::stimulation})
      for (auto other : {SignalType::bpf, SignalType::recon}) {
        const auto [x, y] = detail::paired_by_window(t, f, SignalType::clean, other, c);
        detail::run_posthoc(rep.posthoc, snr, name,
                            std::string(to_string(c)) + ":clean-vs-" + std::string(features::to_string(other)), x, y);
      }
  }
}

namespace detail {

/// Rows of one signal type as (subject, features, label), optionally averaged
/// over each run of consecutive same-condition windows.
struct Samples {
  std::vector<std::string> subject;
  std::vector<std::array<double, features::kNumFeatures>> x;
  std::vector<int> y;
};

inline Samples classification_samples(const features::FeatureTable& t, features::SignalType type, ClassifyUnit unit) {
  Samples s;
  const auto rows = t.filter(type).rows;
  for (std::size_t i = 0; i < rows.size();) {
    std::size_t j = i + 1;
    if (unit == ClassifyUnit::period)
      while (j < rows.size() && rows[j].subject == rows[i].subject && rows[j].condition == rows[i].condition &&
             rows[j].window_index == rows[j - 1].window_index + 1)
        ++j;
    std::array<double, features::kNumFeatures> v{};
    for (std::size_t k = i; k < j; ++k)
      for (std::size_t f = 0; f < v.size(); ++f) v[f] += rows[k].values[f] / static_cast<double>(j - i);
    s.subject.push_back(rows[i].subject);
    s.x.push_back(v);
    s.y.push_back(rows[i].condition == Condition::stimulation ? 1 : 0);
    i = j;
  }
  return s;
}

inline double nanmean(const std::vector<double>& v) {
  double s = 0;
  std::size_t n = 0;
  for (double x : v)
    if (!std::isnan(x)) s += x, ++n;
  return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace detail

/// Leave-one-subject-out classification of one signal type's feature rows.
inline ClassificationResult classify_loso(const features::FeatureTable& t, features::SignalType type, ml::ClassifierKind kind,
                                          const std::vector<std::string>& subjects, ClassifyUnit unit, std::uint64_t seed) {
  ClassificationResult res;
  res.type = type;
  res.classifier = kind;
  const auto s = detail::classification_samples(t, type, unit);
  std::vector<double> auc, acc, sens, spec, f1;
  for (const auto& test : subjects) {
    std::vector<std::size_t> tr, te;
    for (std::size_t i = 0; i < s.subject.size(); ++i) (s.subject[i] == test ? te : tr).push_back(i);
    if (te.empty() || tr.empty()) continue;
    ml::Matrix Xtr(static_cast<Eigen::Index>(tr.size()), static_cast<Eigen::Index>(features::kNumFeatures));
    ml::Matrix Xte(static_cast<Eigen::Index>(te.size()), static_cast<Eigen::Index>(features::kNumFeatures));
    std::vector<int> ytr, yte;
    for (std::size_t i = 0; i < tr.size(); ++i) {
      for (std::size_t f = 0; f < features::kNumFeatures; ++f) Xtr(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f)) = s.x[tr[i]][f];
      ytr.push_back(s.y[tr[i]]);
    }
    for (std::size_t i = 0; i < te.size(); ++i) {
      for (std::size_t f = 0; f < features::kNumFeatures; ++f) Xte(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f)) = s.x[te[i]][f];
      yte.push_back(s.y[te[i]]);
    }
    ml::standardize_features(Xtr, Xte);
    auto spec_ = ml::ClassifierSpec::of(kind, derive_seed(seed, "classify/" + std::string(ml::to_string(kind)) + "/" + test));
    auto model = ml::train_classifier(spec_, Xtr, ytr);
    auto m = ml::evaluate_fold(*model, Xte, yte);
    res.subjects.push_back(test);
    auc.push_back(m.auc);
    acc.push_back(m.accuracy);
    sens.push_back(m.sensitivity);
    spec.push_back(m.specificity);
    f1.push_back(m.f1);
    res.folds.push_back(std::move(m));
  }
  res.auc = detail::nanmean(auc);
  res.accuracy = detail::nanmean(acc);
  res.sensitivity = detail::nanmean(sens);
  res.specificity = detail::nanmean(spec);
  res.f1 = detail::nanmean(f1);
  return res;
}

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < jobs; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

/// Full pipeline over every SNR target and held-out subject. Folds run on
/// `jobs` workers; results are merged by (SNR, subject), so the report does not
/// depend on the worker count.
inline ExperimentReport run_loso(const ExperimentConfig& cfg, std::size_t jobs = 1, const LogFn& log = {}) {
  ExperimentReport rep;
  rep.config = cfg;
  rep.hash = config_hash(cfg);
  const auto data = prepare_dataset(cfg);
  rep.subjects = skna_subjects(data, cfg.max_subjects);
  if (rep.subjects.size() < 2)
    throw Error(ErrorKind::insufficient_subjects, "LOSO needs at least 2 subjects, got " + std::to_string(rep.subjects.size()));
  const auto clean_all = detail::pooled_segments(data, rep.subjects, cfg.preprocess.window_s);
  const auto bank = mix::noise_bank(data);

  // clean reference features: whole-window stitched clean signal, once per dataset
  for (const auto& s : rep.subjects) {
    const auto clean = overlap_add(detail::subject_segments(clean_all, s), 0.0);
    rep.clean_features.append(
        detail::features_of(features::iskna(clean, cfg.integrator), s, features::SignalType::clean, cfg.feature_window_s));
  }

  struct Job {
    double snr;
    std::string subject;
  };
  std::vector<Job> work;
  for (double snr : cfg.snr_db)
    for (const auto& s : rep.subjects) work.push_back({snr, s});
  rep.folds.resize(work.size());
  std::mutex log_mu;
  LogFn safe_log;
  if (log)
    safe_log = [&](const std::string& m) {
      std::lock_guard lock(log_mu);
      log(m);
    };
  parallel_for(work.size(), jobs, [&](std::size_t i) {
    rep.folds[i] = run_fold(cfg, clean_all, bank, work[i].subject, work[i].snr, work[i].subject == rep.subjects.front(), safe_log);
  });
  for (auto& f : rep.folds) {
    rep.partial = rep.partial || f.aborted;
    if (f.traces) rep.traces[f.snr_db] = std::move(*f.traces), f.traces.reset();
  }

  std::vector<ClassificationResult> clean_cls;
  for (auto kind : cfg.classifiers)
    clean_cls.push_back(classify_loso(rep.clean_features, features::SignalType::clean, kind, rep.subjects, cfg.classify_unit,
                                      cfg.master_seed));
  for (double snr : cfg.snr_db) {
    const auto t = rep.features_at(snr);
    feature_statistics(rep, snr, t);
    for (auto type : features::kSignalTypes)
      for (std::size_t k = 0; k < cfg.classifiers.size(); ++k) {
        ClassificationResult r = type == features::SignalType::clean
                                     ? clean_cls[k]
                                     : classify_loso(t, type, cfg.classifiers[k], rep.subjects, cfg.classify_unit, cfg.master_seed);
        r.snr_db = snr;
        rep.classification.push_back(std::move(r));
      }
  }
  return rep;
}

}  // namespace skna
