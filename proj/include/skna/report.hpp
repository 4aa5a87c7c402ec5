#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "skna/experiment.hpp"

namespace skna::report {

namespace fs = std::filesystem;

/// Shortest round-trip-safe text for CSV cells; non-finite values spelled out.
inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

/// "m4dB" for -4, "3p5dB" for 3.5; used in file names.
inline std::string snr_tag(double snr) {
  std::string s = num(std::abs(snr));
  std::replace(s.begin(), s.end(), '.', 'p');
  return (snr < 0 ? "m" : "") + s + "dB";
}

inline std::string header_line(const ExperimentReport& r) {
  return "# config_hash=" + r.hash + " seed=" + std::to_string(r.config.master_seed) + "\n";
}

inline void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write '" + p.string() + "'");
  out << text;
  if (!out) throw Error(ErrorKind::io, "write failed for '" + p.string() + "'");
}

// ---------------------------------------------------------------- JSON

namespace detail {

// JSON has no NaN or infinity; encode it as null.
inline nlohmann::json jnum(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
inline double jget(const nlohmann::json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

inline nlohmann::json metric_json(const stats::MetricSet& m) {
  // snr_db is +inf for a perfect reconstruction
  return {{"corr", jnum(m.corr)}, {"corr_iskna", jnum(m.corr_iskna)}, {"mse", m.mse}, {"mae", m.mae},
          {"snr_db", std::isinf(m.snr_db) ? nlohmann::json(m.snr_db > 0 ? "inf" : "-inf") : jnum(m.snr_db)}};
}

inline stats::MetricSet metric_from(const nlohmann::json& j) {
  const auto& snr = j.at("snr_db");
  const double snr_v = snr.is_string() ? (snr.get<std::string>() == "inf" ? std::numeric_limits<double>::infinity()
                                                                          : -std::numeric_limits<double>::infinity())
                                       : jget(snr);
  return {jget(j.at("corr")), jget(j.at("corr_iskna")), j.at("mse").get<double>(), j.at("mae").get<double>(), snr_v};
}

inline nlohmann::json recon_json(const stats::ReconMetrics& m) {
  return {{"baseline", metric_json(m.baseline)}, {"stimulation", metric_json(m.stimulation)}, {"overall", metric_json(m.overall)}};
}

inline stats::ReconMetrics recon_from(const nlohmann::json& j) {
  return {metric_from(j.at("baseline")), metric_from(j.at("stimulation")), metric_from(j.at("overall"))};
}

inline nlohmann::json features_json(const features::FeatureTable& t) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& r : t.rows) {
    nlohmann::json v = nlohmann::json::array();
    for (double x : r.values) v.push_back(x);
    a.push_back({r.subject, features::to_string(r.signal_type), to_string(r.condition), r.window_index, v});
  }
  return a;
}

inline features::FeatureTable features_from(const nlohmann::json& a) {
  features::FeatureTable t;
  for (const auto& e : a) {
    features::FeatureRow r;
    r.subject = e.at(0).get<std::string>();
    r.signal_type = features::signal_type_from_string(e.at(1).get<std::string>());
    r.condition = condition_from_string(e.at(2).get<std::string>());
    r.window_index = e.at(3).get<std::size_t>();
    for (std::size_t f = 0; f < features::kNumFeatures; ++f) r.values[f] = e.at(4).at(f).get<double>();
    t.rows.push_back(r);
  }
  return t;
}

inline nlohmann::json test_json(const stats::TestResult& t) {
  return {{"statistic", jnum(t.statistic)}, {"p_value", jnum(t.p_value)}, {"n", t.n}, {"method", t.method}, {"warning", t.warning}};
}

inline stats::TestResult test_from(const nlohmann::json& j) {
  stats::TestResult t;
  t.statistic = jget(j.at("statistic"));
  t.p_value = jget(j.at("p_value"));
  t.n = j.at("n").get<std::size_t>();
  t.method = j.at("method").get<std::string>();
  t.warning = j.at("warning").get<std::string>();
  return t;
}

inline nlohmann::json traces_json(const TraceSet& t) {
  nlohmann::json p = nlohmann::json::array();
  for (const auto& q : t.periods) p.push_back({q.start, q.end, to_string(q.condition)});
  return {{"subject", t.subject}, {"fs", t.fs}, {"periods", p}, {"skna", t.skna}, {"iskna", t.iskna}, {"askna", t.askna}};
}

inline TraceSet traces_from(const nlohmann::json& j) {
  TraceSet t;
  t.subject = j.at("subject").get<std::string>();
  t.fs = j.at("fs").get<double>();
  for (const auto& q : j.at("periods"))
    t.periods.push_back({q.at(0).get<std::size_t>(), q.at(1).get<std::size_t>(), condition_from_string(q.at(2).get<std::string>())});
  t.skna = j.at("skna").get<std::map<std::string, std::vector<double>>>();
  t.iskna = j.at("iskna").get<std::map<std::string, std::vector<double>>>();
  t.askna = j.at("askna").get<std::map<std::string, std::vector<double>>>();
  return t;
}

}  // namespace detail

/// Everything needed to re-emit tables and figures without rerunning. Model
/// checkpoints are written separately.
inline nlohmann::json to_json(const ExperimentReport& r) {
  using namespace detail;
  nlohmann::json j;
  j["config"] = skna::to_json(r.config);
  j["config_hash"] = r.hash;
  j["subjects"] = r.subjects;
  j["partial"] = r.partial;
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : r.folds)
    folds.push_back({{"snr_db", f.snr_db},
                     {"subject", f.subject},
                     {"aborted", f.aborted},
                     {"error", f.error},
                     {"bpf", recon_json(f.bpf)},
                     {"recon", recon_json(f.recon)},
                     {"mix_pooled_snr", f.mix_pooled_snr},
                     {"epoch_loss", f.epoch_loss},
                     {"plan", mix::to_json(f.plan)},
                     {"features", features_json(f.features)}});
  j["folds"] = folds;
  j["clean_features"] = features_json(r.clean_features);
  nlohmann::json traces = nlohmann::json::array();
  for (const auto& [snr, t] : r.traces) traces.push_back({{"snr_db", snr}, {"traces", traces_json(t)}});
  j["traces"] = traces;
  nlohmann::json fstats = nlohmann::json::array();
  for (const auto& s : r.feature_stats)
    fstats.push_back({s.snr_db, s.feature, features::to_string(s.type), jnum(s.fisher), jnum(s.auroc)});
  j["feature_stats"] = fstats;
  nlohmann::json om = nlohmann::json::array();
  for (const auto& o : r.omnibus) om.push_back({{"snr_db", o.snr_db}, {"feature", o.feature}, {"test", test_json(o.kw)}});
  j["omnibus"] = om;
  nlohmann::json ph = nlohmann::json::array();
  for (const auto& p : r.posthoc)
    ph.push_back({{"snr_db", p.snr_db}, {"feature", p.feature}, {"comparison", p.comparison}, {"test", test_json(p.test)}});
  j["posthoc"] = ph;
  nlohmann::json cls = nlohmann::json::array();
  for (const auto& c : r.classification) {
    nlohmann::json folds_j = nlohmann::json::array();
    for (std::size_t i = 0; i < c.folds.size(); ++i) {
      const auto& m = c.folds[i];
      folds_j.push_back({{"subject", c.subjects[i]},
                         {"auc", jnum(m.auc)},
                         {"accuracy", m.accuracy},
                         {"sensitivity", jnum(m.sensitivity)},
                         {"specificity", jnum(m.specificity)},
                         {"f1", m.f1},
                         {"confusion", {m.tp, m.fn, m.tn, m.fp}},
                         {"probabilities", m.probabilities},
                         {"labels", m.labels}});
    }
    cls.push_back({{"snr_db", c.snr_db},
                   {"signal_type", features::to_string(c.type)},
                   {"classifier", ml::to_string(c.classifier)},
                   {"auc", jnum(c.auc)},
                   {"accuracy", jnum(c.accuracy)},
                   {"sensitivity", jnum(c.sensitivity)},
                   {"specificity", jnum(c.specificity)},
                   {"f1", jnum(c.f1)},
                   {"folds", folds_j}});
  }
  j["classification"] = cls;
  return j;
}

inline ExperimentReport report_from_json(const nlohmann::json& j) {
  using namespace detail;
  try {
    ExperimentReport r;
    r.config = config_from_json(j.at("config"));
    r.hash = j.at("config_hash").get<std::string>();
    r.subjects = j.at("subjects").get<std::vector<std::string>>();
    r.partial = j.at("partial").get<bool>();
    for (const auto& f : j.at("folds")) {
      FoldResult fr;
      fr.snr_db = f.at("snr_db").get<double>();
      fr.subject = f.at("subject").get<std::string>();
      fr.aborted = f.at("aborted").get<bool>();
      fr.error = f.at("error").get<std::string>();
      fr.bpf = recon_from(f.at("bpf"));
      fr.recon = recon_from(f.at("recon"));
      fr.mix_pooled_snr = f.at("mix_pooled_snr").get<double>();
      fr.epoch_loss = f.at("epoch_loss").get<std::vector<double>>();
      fr.plan = mix::plan_from_json(f.at("plan"));
      fr.features = features_from(f.at("features"));
      r.folds.push_back(std::move(fr));
    }
    r.clean_features = features_from(j.at("clean_features"));
    for (const auto& t : j.at("traces")) r.traces[t.at("snr_db").get<double>()] = traces_from(t.at("traces"));
    for (const auto& s : j.at("feature_stats"))
      r.feature_stats.push_back({s.at(0).get<double>(), s.at(1).get<std::string>(),
                                 features::signal_type_from_string(s.at(2).get<std::string>()), jget(s.at(3)), jget(s.at(4))});
    for (const auto& o : j.at("omnibus"))
      r.omnibus.push_back({o.at("snr_db").get<double>(), o.at("feature").get<std::string>(), test_from(o.at("test"))});
    for (const auto& p : j.at("posthoc"))
      r.posthoc.push_back({p.at("snr_db").get<double>(), p.at("feature").get<std::string>(),
                           p.at("comparison").get<std::string>(), test_from(p.at("test"))});
    for (const auto& c : j.at("classification")) {
      ClassificationResult cr;
      cr.snr_db = c.at("snr_db").get<double>();
      cr.type = features::signal_type_from_string(c.at("signal_type").get<std::string>());
      cr.classifier = ml::classifier_from_string(c.at("classifier").get<std::string>());
      cr.auc = jget(c.at("auc"));
      cr.accuracy = jget(c.at("accuracy"));
      cr.sensitivity = jget(c.at("sensitivity"));
      cr.specificity = jget(c.at("specificity"));
      cr.f1 = jget(c.at("f1"));
      for (const auto& f : c.at("folds")) {
        ml::FoldMetrics m;
        cr.subjects.push_back(f.at("subject").get<std::string>());
        m.auc = jget(f.at("auc"));
        m.accuracy = f.at("accuracy").get<double>();
        m.sensitivity = jget(f.at("sensitivity"));
        m.specificity = jget(f.at("specificity"));
        m.f1 = f.at("f1").get<double>();
        const auto& cm = f.at("confusion");
        m.tp = cm.at(0).get<std::size_t>();
        m.fn = cm.at(1).get<std::size_t>();
        m.tn = cm.at(2).get<std::size_t>();
        m.fp = cm.at(3).get<std::size_t>();
        m.probabilities = f.at("probabilities").get<std::vector<double>>();
        m.labels = f.at("labels").get<std::vector<int>>();
        cr.folds.push_back(std::move(m));
      }
      r.classification.push_back(std::move(cr));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, std::string("report JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------- CSV tables

/// Per-subject recon metrics, one row per (SNR, subject, signal, condition).
inline std::string recon_metrics_csv(const ExperimentReport& r) {
  std::ostringstream os;
  os << header_line(r) << "target_snr_db,subject,signal_type,condition,corr,corr_iskna,mse,mae,snr_db\n";
  for (const auto& f : r.folds) {
    if (f.aborted) continue;
    for (const auto& [name, m] : {std::pair<const char*, const stats::ReconMetrics*>{"bpf", &f.bpf}, {"recon", &f.recon}})
      for (const auto& [cond, s] : {std::pair<const char*, const stats::MetricSet*>{"baseline", &m->baseline},
                                    {"stimulation", &m->stimulation},
                                    {"overall", &m->overall}})
        os << num(f.snr_db) << ',' << f.subject << ',' << name << ',' << cond << ',' << num(s->corr) << ','
           << num(s->corr_iskna) << ',' << num(s->mse) << ',' << num(s->mae) << ',' << num(stats::capped_snr(s->snr_db))
           << '\n';
  }
  return os.str();
}

/// Mean, std and t-based 95% CI of each metric over per-subject fold values.
inline std::string recon_summary_csv(const ExperimentReport& r) {
  std::ostringstream os;
  os << header_line(r) << "target_snr_db,signal_type,condition,metric,mean,std,ci_lo,ci_hi,n\n";
  static const char* metrics[] = {"snr_db", "mse", "mae", "corr", "corr_iskna"};
  for (double snr : r.config.snr_db)
    for (const char* type : {"bpf", "recon"})
      for (const char* cond : {"baseline", "stimulation", "overall"})
        for (const char* metric : metrics) {
          std::vector<double> v;
          for (const auto& f : r.folds) {
            if (f.snr_db != snr || f.aborted) continue;
            const auto& rm = std::string(type) == "bpf" ? f.bpf : f.recon;
            const auto& m = std::string(cond) == "baseline" ? rm.baseline
                            : std::string(cond) == "stimulation" ? rm.stimulation
                                                                  : rm.overall;
            const std::string k = metric;
            v.push_back(k == "snr_db" ? stats::capped_snr(m.snr_db)
                        : k == "mse"  ? m.mse
                        : k == "mae"  ? m.mae
                        : k == "corr" ? m.corr
                                      : m.corr_iskna);
          }
          const auto s = stats::summarize(v);
          os << num(snr) << ',' << type << ',' << cond << ',' << metric << ',' << num(s.mean) << ',' << num(s.std) << ','
             << num(s.ci_lo) << ',' << num(s.ci_hi) << ',' << s.n << '\n';
        }
  return os.str();
}

inline std::string folds_csv(const ExperimentReport& r) {
  std::ostringstream os;
  os << header_line(r) << "target_snr_db,subject,status,mix_pooled_snr_db,epochs,final_loss,global_gain,test_noise_subject,error\n";
  for (const auto& f : r.folds)
    os << num(f.snr_db) << ',' << f.subject << ',' << (f.aborted ? "aborted" : "ok") << ',' << num(f.mix_pooled_snr) << ','
       << f.epoch_loss.size() << ',' << (f.epoch_loss.empty() ? "nan" : num(f.epoch_loss.back())) << ','
       << num(f.plan.global_gain) << ',' << f.plan.test_noise_subject << ",\"" << f.error << "\"\n";
  return os.str();
}

inline std::string train_loss_csv(const ExperimentReport& r) {
  std::ostringstream os;
  os << header_line(r) << "target_snr_db,subject,epoch,loss\n";
  for (const auto& f : r.folds)
    for (std::size_t e = 0; e < f.epoch_loss.size(); ++e)
      os << num(f.snr_db) << ',' << f.subject << ',' << e + 1 << ',' << num(f.epoch_loss[e]) << '\n';
  return os.str();
}

inline std::string features_csv(const ExperimentReport& r, const features::FeatureTable& t) {
  std::ostringstream os;
  os << header_line(r);
  features::write_csv_header(os);
  for (const auto& row : t.rows) {
    os << row.subject << ',' << features::to_string(row.signal_type) << ',' << to_string(row.condition) << ','
       << row.window_index;
    for (double v : row.values) os << ',' << num(v);
    os << '\n';
  }
  return os.str();
}

inline std::string feature_stats_csv(const ExperimentReport& r) {
  std::ostringstream os;
  os << header_line(r) << "target_snr_db,feature,signal_type,fisher_ratio,auroc\n";
  for (const auto& s : r.feature_stats)
    os << num(s.snr_db) << ',' << s.feature << ',' << features::to_string(s.type) << ',' << num(s.fisher) << ','
       << num(s.auroc) << '\n';
  return os.str();
}

inline std::string omnibus_csv(const ExperimentReport& r) {
  std::ostringstream os;
  os << header_line(r) << "target_snr_db,feature,H,p_value,stars,n\n";
  for (const auto& o : r.omnibus)
    os << num(o.snr_db) << ',' << o.feature << ',' << num(o.kw.statistic) << ',' << num(o.kw.p_value) << ','
       << stats::stars(o.kw.p_value) << ',' << o.kw.n << '\n';
  return os.str();
}

inline std::string posthoc_csv(const ExperimentReport& r) {
  std::ostringstream os;
  os << header_line(r) << "target_snr_db,feature,comparison,n,statistic,p_value,stars,method,warning\n";
  for (const auto& p : r.posthoc)
    os << num(p.snr_db) << ',' << p.feature << ',' << p.comparison << ',' << p.test.n << ',' << num(p.test.statistic) << ','
       << num(p.test.p_value) << ',' << (std::isnan(p.test.p_value) ? "" : stats::stars(p.test.p_value)) << ','
       << p.test.method << ",\"" << p.test.warning << "\"\n";
  return os.str();
}

inline std::string classification_csv(const ExperimentReport& r) {
  std::ostringstream os;
  os << header_line(r) << "target_snr_db,signal_type,classifier,auc,accuracy,sensitivity,specificity,f1\n";
  for (const auto& c : r.classification)
    os << num(c.snr_db) << ',' << features::to_string(c.type) << ',' << ml::to_string(c.classifier) << ',' << num(c.auc)
       << ',' << num(c.accuracy) << ',' << num(c.sensitivity) << ',' << num(c.specificity) << ',' << num(c.f1) << '\n';
  return os.str();
}

inline std::string classification_folds_csv(const ExperimentReport& r) {
  std::ostringstream os;
  os << header_line(r)
     << "target_snr_db,signal_type,classifier,subject,auc,accuracy,sensitivity,specificity,f1,tp,fn,tn,fp\n";
  for (const auto& c : r.classification)
    for (std::size_t i = 0; i < c.folds.size(); ++i) {
      const auto& m = c.folds[i];
      os << num(c.snr_db) << ',' << features::to_string(c.type) << ',' << ml::to_string(c.classifier) << ','
         << c.subjects[i] << ',' << num(m.auc) << ',' << num(m.accuracy) << ',' << num(m.sensitivity) << ','
         << num(m.specificity) << ',' << num(m.f1) << ',' << m.tp << ',' << m.fn << ',' << m.tn << ',' << m.fp << '\n';
    }
  return os.str();
}

/// Test-fold probabilities pooled over every fold of one classification run.
inline std::pair<std::vector<double>, std::vector<int>> pooled_scores(const ClassificationResult& c) {
  std::pair<std::vector<double>, std::vector<int>> out;
  for (const auto& m : c.folds) {
    out.first.insert(out.first.end(), m.probabilities.begin(), m.probabilities.end());
    out.second.insert(out.second.end(), m.labels.begin(), m.labels.end());
  }
  return out;
}

inline std::string roc_csv(const ExperimentReport& r) {
  std::ostringstream os;
  os << header_line(r) << "target_snr_db,signal_type,classifier,fpr,tpr,threshold\n";
  for (const auto& c : r.classification) {
    const auto [p, y] = pooled_scores(c);
    std::vector<ml::RocPoint> pts;
    try {
      pts = ml::roc_curve(p, y);
    } catch (const Error&) {
      continue;
    }
    for (const auto& q : pts)
      os << num(c.snr_db) << ',' << features::to_string(c.type) << ',' << ml::to_string(c.classifier) << ',' << num(q.fpr)
         << ',' << num(q.tpr) << ',' << num(q.threshold) << '\n';
  }
  return os.str();
}

/// Reads a feature CSV written by features_csv; '#' lines are skipped.
inline features::FeatureTable read_features_csv(std::istream& in) {
  features::FeatureTable t;
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      std::ostringstream expect;
      features::write_csv_header(expect);
      if (line + "\n" != expect.str()) throw Error(ErrorKind::format, "unexpected feature CSV header at line " + std::to_string(lineno));
      header = true;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    if (cells.size() != 4 + features::kNumFeatures)
      throw Error(ErrorKind::format, "feature CSV line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) + " cells");
    try {
      features::FeatureRow r;
      r.subject = cells[0];
      r.signal_type = features::signal_type_from_string(cells[1]);
      r.condition = condition_from_string(cells[2]);
      r.window_index = std::stoul(cells[3]);
      for (std::size_t f = 0; f < features::kNumFeatures; ++f) r.values[f] = std::stod(cells[4 + f]);
      t.rows.push_back(r);
    } catch (const std::exception& e) {
      throw Error(ErrorKind::format, "feature CSV line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!header) throw Error(ErrorKind::format, "feature CSV has no header");
  return t;
}

// ---------------------------------------------------------------- SVG

namespace svg {

struct Doc {
  double w, h;
  std::ostringstream body;

  Doc(double width, double height) : w(width), h(height) {}

  void rect(double x, double y, double rw, double rh, const std::string& fill, const std::string& stroke = "none",
            double opacity = 1.0) {
    body << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(rw) << "\" height=\"" << num(rh)
         << "\" fill=\"" << fill << "\" stroke=\"" << stroke << "\" fill-opacity=\"" << num(opacity) << "\"/>\n";
  }
  void line(double x1, double y1, double x2, double y2, const std::string& stroke, double width = 1.0) {
    body << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2) << "\" y2=\"" << num(y2)
         << "\" stroke=\"" << stroke << "\" stroke-width=\"" << num(width) << "\"/>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke, double width = 1.0) {
    body << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"" << num(width) << "\" points=\"";
    for (const auto& [x, y] : pts) body << num(x) << ',' << num(y) << ' ';
    body << "\"/>\n";
  }
  void text(double x, double y, const std::string& s, double size = 11, const std::string& anchor = "start") {
    body << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-size=\"" << num(size)
         << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\">" << s << "</text>\n";
  }
  std::string str() const {
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w) << "\" height=\"" << num(h) << "\" viewBox=\"0 0 "
       << num(w) << ' ' << num(h) << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << body.str() << "</svg>\n";
    return os.str();
  }
};

/// Plot area mapping data coordinates into a pixel box.
struct Panel {
  double x, y, w, h;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  double px(double v) const { return x + (v - x0) / (x1 - x0) * w; }
  double py(double v) const { return y + h - (v - y0) / (y1 - y0) * h; }
};

inline void frame(Doc& d, const Panel& p, const std::string& title) {
  d.rect(p.x, p.y, p.w, p.h, "none", "#444");
  d.text(p.x, p.y - 4, title, 11);
}

inline const std::map<std::string, std::string>& type_colors() {
  static const std::map<std::string, std::string> c{{"clean", "#2b7bba"}, {"bpf", "#d95f02"}, {"recon", "#1b9e77"}};
  return c;
}

inline void shade_stimulation(Doc& d, const Panel& p, const TraceSet& t) {
  for (const auto& q : t.periods)
    if (q.condition == Condition::stimulation)
      d.rect(p.px(static_cast<double>(q.start) / t.fs), p.y,
             p.px(static_cast<double>(q.end) / t.fs) - p.px(static_cast<double>(q.start) / t.fs), p.h, "#f4d03f", "none", 0.25);
}

inline void trace(Doc& d, Panel p, const std::vector<double>& v, double fs, const std::string& color) {
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < v.size(); ++i) pts.emplace_back(p.px(static_cast<double>(i) / fs), p.py(v[i]));
  d.polyline(pts, color, 0.8);
}

inline double max_of(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m > 0 ? m : 1.0;
}

}  // namespace svg

/// Stacked clean / BPF / reconstructed iSKNA for the trace subject.
inline std::string iskna_triptych_svg(const TraceSet& t, double snr) {
  svg::Doc d(900, 560);
  d.text(450, 18, "iSKNA, subject " + t.subject + ", " + num(snr) + " dB", 13, "middle");
  double ymax = 0;
  for (const auto& [k, v] : t.iskna) ymax = std::max(ymax, svg::max_of(v));
  int row = 0;
  for (const char* k : {"clean", "bpf", "recon"}) {
    const auto& v = t.iskna.at(k);
    svg::Panel p{60, 40.0 + 175.0 * row, 820, 140, 0, static_cast<double>(v.size()) / t.fs, 0, ymax * 1.05};
    svg::shade_stimulation(d, p, t);
    svg::trace(d, p, v, t.fs, svg::type_colors().at(k));
    svg::frame(d, p, k);
    d.text(p.x + p.w, p.y + p.h + 14, "time (s)", 10, "end");
    ++row;
  }
  return d.str();
}

/// Rows SKNA / iSKNA / aSKNA, columns clean / BPF / recon.
inline std::string trace_grid_svg(const TraceSet& t, double snr) {
  svg::Doc d(1000, 620);
  d.text(500, 18, "SKNA, iSKNA and aSKNA, subject " + t.subject + ", " + num(snr) + " dB", 13, "middle");
  const std::vector<std::pair<std::string, const std::map<std::string, std::vector<double>>*>> rows{
      {"SKNA (envelope)", &t.skna}, {"iSKNA", &t.iskna}, {"aSKNA", &t.askna}};
  for (std::size_t r = 0; r < rows.size(); ++r) {
    double ymax = 0;
    for (const auto& [k, v] : *rows[r].second) ymax = std::max(ymax, svg::max_of(v));
    int c = 0;
    for (const char* k : {"clean", "bpf", "recon"}) {
      const auto& v = rows[r].second->at(k);
      svg::Panel p{50.0 + 320.0 * c, 45.0 + 190.0 * static_cast<double>(r), 290, 150, 0,
                   static_cast<double>(v.size()) / t.fs, 0, ymax * 1.05};
      svg::shade_stimulation(d, p, t);
      svg::trace(d, p, v, t.fs, svg::type_colors().at(k));
      svg::frame(d, p, rows[r].first + " / " + k);
      ++c;
    }
  }
  return d.str();
}

/// Per-feature boxplots of (signal type x condition) with baseline-vs-stimulation stars.
inline std::string boxplots_svg(const ExperimentReport& r, double snr, const features::FeatureTable& t) {
  svg::Doc d(1080, 640);
  d.text(540, 18, "Window features by signal and condition, " + num(snr) + " dB", 13, "middle");
  auto quant = [](std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(v.size() - 1, lo + 1);
    return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
  };
  for (std::size_t f = 0; f < features::kNumFeatures; ++f) {
    const std::string name(features::kFeatureNames[f]);
    double lo = 1e300, hi = -1e300;
    for (const auto& row : t.rows) lo = std::min(lo, row.values[f]), hi = std::max(hi, row.values[f]);
    if (!(hi > lo)) hi = lo + 1;
    const double pad = 0.18 * (hi - lo);
    svg::Panel p{50.0 + 350.0 * static_cast<double>(f % 3), 50.0 + 300.0 * static_cast<double>(f / 3), 300, 240,
                 0, 6, lo - 0.05 * (hi - lo), hi + pad};
    svg::frame(d, p, name);
    int slot = 0;
    for (auto type : features::kSignalTypes) {
      const std::string tn(features::to_string(type));
      double top = lo;
      for (auto c : {Condition::baseline, Condition::stimulation}) {
        const auto v = t.column(f, type, c);
        const double cx = p.px(slot + 0.5);
        if (!v.empty()) {
          const double q1 = quant(v, .25), q2 = quant(v, .5), q3 = quant(v, .75);
          const double mn = *std::min_element(v.begin(), v.end()), mx = *std::max_element(v.begin(), v.end());
          top = std::max(top, mx);
          const std::string col = svg::type_colors().at(tn);
          d.line(cx, p.py(mn), cx, p.py(mx), "#555");
          d.rect(cx - 16, p.py(q3), 32, std::max(1.0, p.py(q1) - p.py(q3)), col, "#222",
                 c == Condition::baseline ? 0.35 : 0.8);
          d.line(cx - 16, p.py(q2), cx + 16, p.py(q2), "#000", 1.5);
        }
        d.text(cx, p.y + p.h + 12, tn + (c == Condition::baseline ? "-B" : "-S"), 8, "middle");
        ++slot;
      }
      for (const auto& ph : r.posthoc)
        if (ph.snr_db == snr && ph.feature == name && ph.comparison == tn + ":baseline-vs-stimulation" &&
            !std::isnan(ph.test.p_value)) {
          const double y = p.py(top) - 8;
          d.line(p.px(slot - 1.5), y, p.px(slot - 0.5), y, "#000");
          d.text(p.px(slot - 1.0), y - 3, stats::stars(ph.test.p_value), 10, "middle");
        }
    }
  }
  return d.str();
}

/// One curve per (signal type, classifier) from pooled test-fold probabilities.
inline std::string roc_svg(const ExperimentReport& r, double snr, std::size_t* curves = nullptr) {
  svg::Doc d(560, 600);
  d.text(280, 18, "ROC, " + num(snr) + " dB", 13, "middle");
  svg::Panel p{60, 40, 460, 460, 0, 1, 0, 1};
  svg::frame(d, p, "");
  d.line(p.px(0), p.py(0), p.px(1), p.py(1), "#bbb");
  static const std::map<std::string, std::string> dash{{"rf", ""}, {"svm", "6,3"}, {"lr", "2,2"}};
  std::size_t n = 0;
  double ly = 520;
  for (const auto& c : r.classification) {
    if (c.snr_db != snr) continue;
    const auto [prob, y] = pooled_scores(c);
    std::vector<ml::RocPoint> pts;
    try {
      pts = ml::roc_curve(prob, y);
    } catch (const Error&) {
      continue;
    }
    const std::string tn(features::to_string(c.type)), cn(ml::to_string(c.classifier));
    d.body << "<polyline class=\"roc-curve\" fill=\"none\" stroke=\"" << svg::type_colors().at(tn)
           << "\" stroke-width=\"1.5\" stroke-dasharray=\"" << dash.at(cn) << "\" points=\"";
    for (const auto& q : pts) d.body << num(p.px(q.fpr)) << ',' << num(p.py(q.tpr)) << ' ';
    d.body << "\"/>\n";
    d.text(60.0 + 165.0 * static_cast<double>(n % 3), ly + 18.0 * static_cast<double>(n / 3),
           tn + " " + cn + " AUC=" + num(std::round(c.auc * 1000) / 1000), 10);
    ++n;
  }
  d.text(p.px(0.5), p.y + p.h + 14, "false positive rate", 10, "middle");
  if (curves) *curves = n;
  return d.str();
}

/// Accuracy and AUC bars grouped by classifier, one bar per signal type.
inline std::string bars_svg(const ExperimentReport& r, double snr) {
  svg::Doc d(900, 380);
  d.text(450, 18, "LOSO accuracy and AUC, " + num(snr) + " dB", 13, "middle");
  for (int m = 0; m < 2; ++m) {
    svg::Panel p{50.0 + 430.0 * m, 40, 390, 290, 0, 1, 0, m == 0 ? 100.0 : 1.0};
    svg::frame(d, p, m == 0 ? "accuracy (%)" : "AUC");
    std::vector<const ClassificationResult*> rows;
    for (const auto& c : r.classification)
      if (c.snr_db == snr) rows.push_back(&c);
    const double bw = p.w / static_cast<double>(std::max<std::size_t>(1, rows.size()) + 2);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& c = *rows[i];
      const double v = m == 0 ? c.accuracy : c.auc;
      const double x = p.x + bw * (static_cast<double>(i) + 1.0 + static_cast<double>(i / 3) * 0.5);
      if (std::isfinite(v)) d.rect(x, p.py(v), bw * 0.9, p.py(0) - p.py(v), svg::type_colors().at(std::string(features::to_string(c.type))));
      if (i % 3 == 1) d.text(x + bw * 0.45, p.y + p.h + 14, std::string(ml::to_string(c.classifier)), 10, "middle");
    }
  }
  int k = 0;
  for (const char* tn : {"bpf", "clean", "recon"}) {
    d.rect(60.0 + 90.0 * k, 355, 10, 10, svg::type_colors().at(tn));
    d.text(75.0 + 90.0 * k, 364, tn, 10);
    ++k;
  }
  return d.str();
}

// ---------------------------------------------------------------- emission

/// Writes every table and figure into `outdir`. Returns the relative paths written.
inline std::vector<std::string> emit_report(const ExperimentReport& r, const fs::path& outdir, const LogFn& log = {}) {
  std::error_code ec;
  fs::create_directories(outdir / "figures", ec);
  if (ec) throw Error(ErrorKind::io, "cannot create '" + outdir.string() + "': " + ec.message());
  std::vector<std::string> written;
  auto put = [&](const std::string& rel, const std::string& text) {
    write_file(outdir / rel, text);
    written.push_back(rel);
  };
  put("recon_metrics.csv", recon_metrics_csv(r));
  put("recon_summary.csv", recon_summary_csv(r));
  put("folds.csv", folds_csv(r));
  put("train_loss.csv", train_loss_csv(r));
  put("feature_stats.csv", feature_stats_csv(r));
  put("omnibus.csv", omnibus_csv(r));
  put("posthoc.csv", posthoc_csv(r));
  put("classification.csv", classification_csv(r));
  put("classification_folds.csv", classification_folds_csv(r));
  put("roc.csv", roc_csv(r));
  nlohmann::json plans = nlohmann::json::array();
  for (const auto& f : r.folds) plans.push_back({{"snr_db", f.snr_db}, {"subject", f.subject}, {"plan", mix::to_json(f.plan)}});
  put("mix_plans.json", plans.dump(1) + "\n");
  nlohmann::json meta = {{"config", skna::to_json(r.config)},
                         {"config_hash", r.hash},
                         {"partial", r.partial},
                         {"ci_method", "two-sided t interval over per-subject fold values"},
                         {"snr_cap_db", stats::kSnrCapDb}};
  nlohmann::json specs = nlohmann::json::array();
  for (auto k : r.config.classifiers) {
    const auto s = ml::ClassifierSpec::of(k, 0);
    specs.push_back({{"kind", ml::to_string(k)}, {"n_trees", s.n_trees}, {"C", s.C}, {"gamma", "1/(d * var(X))"},
                     {"l2", s.l2}, {"max_iter", s.max_iter}});
  }
  meta["classifiers"] = specs;
  put("metadata.json", meta.dump(1) + "\n");
  put("report.json", to_json(r).dump() + "\n");

  for (double snr : r.config.snr_db) {
    const std::string tag = snr_tag(snr);
    const auto t = r.features_at(snr);
    put("features_" + tag + ".csv", features_csv(r, t));
    if (t.empty()) {
      if (log) log("feature table at " + num(snr) + " dB is empty; boxplot skipped");
    } else {
      put("figures/boxplots_" + tag + ".svg", boxplots_svg(r, snr, t));
    }
    if (auto it = r.traces.find(snr); it != r.traces.end()) {
      put("figures/iskna_triptych_" + tag + ".svg", iskna_triptych_svg(it->second, snr));
      put("figures/trace_grid_" + tag + ".svg", trace_grid_svg(it->second, snr));
    } else if (log) {
      log("no traces at " + num(snr) + " dB; trace figures skipped");
    }
    bool any = false;
    for (const auto& c : r.classification) any = any || (c.snr_db == snr && !c.folds.empty());
    if (any) {
      put("figures/roc_" + tag + ".svg", roc_svg(r, snr));
      put("figures/bars_" + tag + ".svg", bars_svg(r, snr));
    } else if (log) {
      log("no classification results at " + num(snr) + " dB; ROC and bar figures skipped");
    }
  }
  return written;
}

/// Writes each fold's model into `outdir/checkpoints`.
inline void emit_checkpoints(const ExperimentReport& r, const fs::path& outdir) {
  std::error_code ec;
  fs::create_directories(outdir / "checkpoints", ec);
  if (ec) throw Error(ErrorKind::io, "cannot create checkpoint directory: " + ec.message());
  for (const auto& f : r.folds) {
    if (!f.checkpoint) continue;
    RecordingContainer c;
    c.fs = r.config.preprocess.fs_out;
    c.manifest = {{"kind", "checkpoint"}, {"config_hash", r.hash}};
    c.model = *f.checkpoint;
    write_container(c, outdir / "checkpoints" / (f.subject + "_" + snr_tag(f.snr_db) + ".skna"));
  }
}

}  // namespace skna::report
