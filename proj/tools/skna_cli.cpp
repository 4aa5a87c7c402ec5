// Command-line front end: dataset generation, the individual pipeline stages,
// and the full leave-one-subject-out run.

#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "skna/skna.hpp"

namespace {

using namespace skna;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitFormat = 3;
constexpr int kExitPartial = 4;

void log_line(const std::string& m) { std::cerr << m << '\n'; }

ExperimentConfig base_config(const std::string& path, std::optional<std::uint64_t> seed) {
  ExperimentConfig cfg;
  if (!path.empty()) cfg = load_config(path);
  if (seed) {
    cfg.master_seed = *seed;
    cfg.synth.seed = *seed;
  }
  return cfg;
}

std::string snr_label(double snr) { return "snr" + std::to_string(static_cast<long long>(std::llround(snr * 1000))); }

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  report::write_file(path, text);
}

features::FeatureTable read_features(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path + "'");
  return report::read_features_csv(in);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SKNA denoising and stress-classification toolkit"};
  app.require_subcommand(1);

  std::string config_path, out, in, model_path, subject, type = "recon";
  std::optional<std::uint64_t> seed;
  std::vector<double> snrs;
  std::size_t subjects = 0, jobs = 1, epochs = 0;

  auto add_common = [&](CLI::App* s) {
    s->add_option("--config", config_path, "JSON experiment config");
    s->add_option("--seed", seed, "master seed (overrides the config)");
    s->add_option("--out", out, "output path");
  };

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset container");
  add_common(synth_cmd);
  synth_cmd->add_option("--subjects", subjects, "number of subjects");

  auto* prep_cmd = app.add_subcommand("preprocess", "bandpass, notch and resample every record");
  add_common(prep_cmd);
  prep_cmd->add_option("--in", in, "input container")->required();

  auto* mix_cmd = app.add_subcommand("mix", "contaminate one held-out subject with EMG");
  add_common(mix_cmd);
  mix_cmd->add_option("--in", in, "preprocessed container")->required();
  mix_cmd->add_option("--snr", snrs, "target SNR in dB")->required()->expected(1);
  mix_cmd->add_option("--subject", subject, "held-out subject id")->required();

  auto* train_cmd = app.add_subcommand("train", "train a denoiser with one subject held out");
  add_common(train_cmd);
  train_cmd->add_option("--in", in, "preprocessed container")->required();
  train_cmd->add_option("--snr", snrs, "target SNR in dB")->required()->expected(1);
  train_cmd->add_option("--subject", subject, "held-out subject id")->required();
  train_cmd->add_option("--epochs", epochs, "epochs (overrides the config)");

  auto* denoise_cmd = app.add_subcommand("denoise", "denoise every SKNA record of a container");
  add_common(denoise_cmd);
  denoise_cmd->add_option("--in", in, "noisy container")->required();
  denoise_cmd->add_option("--model", model_path, "checkpoint written by train")->required();

  auto* feat_cmd = app.add_subcommand("features", "burst features of every SKNA record");
  add_common(feat_cmd);
  feat_cmd->add_option("--in", in, "container")->required();
  feat_cmd->add_option("--type", type, "signal type label: bpf, recon or clean");

  auto* stats_cmd = app.add_subcommand("stats", "Kruskal-Wallis, Fisher's ratio and AUROC per feature");
  add_common(stats_cmd);
  stats_cmd->add_option("--in", in, "feature CSV")->required();

  auto* cls_cmd = app.add_subcommand("classify", "LOSO classification of feature rows");
  add_common(cls_cmd);
  cls_cmd->add_option("--in", in, "feature CSV")->required();

  auto* loso_cmd = app.add_subcommand("loso", "full leave-one-subject-out pipeline");
  add_common(loso_cmd);
  loso_cmd->add_option("--snr", snrs, "target SNRs in dB (overrides the config)");
  loso_cmd->add_option("--subjects", subjects, "synthetic subject count (overrides the config)");
  loso_cmd->add_option("--jobs", jobs, "parallel folds")->check(CLI::PositiveNumber);
  loso_cmd->add_option("--epochs", epochs, "epochs (overrides the config)");

  auto* report_cmd = app.add_subcommand("report", "re-emit tables and figures from report.json");
  report_cmd->add_option("--in", in, "report.json from a loso run")->required();
  report_cmd->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*synth_cmd) {
      auto cfg = base_config(config_path, seed);
      if (subjects) cfg.synth.n_subjects = subjects;
      if (out.empty()) throw Error(ErrorKind::config, "--out is required");
      write_container(synth::gen_dataset(cfg.synth), out);
      return kExitOk;
    }
    if (*prep_cmd) {
      const auto cfg = base_config(config_path, seed);
      if (out.empty()) throw Error(ErrorKind::config, "--out is required");
      write_container(preprocess_container(read_container(in), cfg.preprocess), out);
      return kExitOk;
    }
    if (*mix_cmd || *train_cmd) {
      auto cfg = base_config(config_path, seed);
      if (epochs) cfg.train.epochs = epochs;
      if (out.empty()) throw Error(ErrorKind::config, "--out is required");
      const auto data = read_container(in);
      const auto ids = skna_subjects(data);
      const auto clean_all = detail::pooled_segments(data, ids, cfg.preprocess.window_s);
      const auto bank = mix::noise_bank(data);
      const std::string tag = snr_label(snrs.front()) + "/" + subject;
      auto m = mix::mix_dataset(clean_all, bank, derive_seed(cfg.master_seed, "mix/" + tag), snrs.front(), subject);
      if (*mix_cmd) {
        RecordingContainer c;
        c.fs = data.fs;
        c.manifest = {{"kind", "mixed"}, {"plan", mix::to_json(m.plan)}};
        c.records.push_back({subject, Role::skna, overlap_add(m.test_noisy, 0.0)});
        write_container(c, out);
        std::cerr << "pooled SNR "
                  << mix::pooled_snr({{&m.train_clean, &m.train_noisy}, {&m.test_clean, &m.test_noisy}}) << " dB\n";
        return kExitOk;
      }
      const auto ns = dsp::normalize_fit(m.train_noisy);
      DenoiserModel<float> model(derive_seed(cfg.master_seed, "model/" + tag), m.train_noisy.window_len);
      model.norm_stats = ns;
      TrainConfig tc = cfg.train;
      tc.seed = derive_seed(cfg.master_seed, "train/" + tag);
      const auto rep = train(model, dsp::normalize_apply(m.train_noisy, ns), dsp::normalize_apply(m.train_clean, ns), tc,
                             [](std::size_t e, double loss) { std::cerr << "epoch " << e << " loss " << loss << '\n'; });
      save_checkpoint(model, out, data.fs,
                      {{"subject", subject}, {"snr_db", snrs.front()}, {"epoch_loss", rep.epoch_loss},
                       {"plan", mix::to_json(m.plan)}});
      return kExitOk;
    }
    if (*denoise_cmd) {
      const auto cfg = base_config(config_path, seed);
      if (out.empty()) throw Error(ErrorKind::config, "--out is required");
      auto model = load_checkpoint(model_path);
      const auto data = read_container(in);
      RecordingContainer c;
      c.fs = data.fs;
      c.manifest = {{"kind", "denoised"}, {"source", in}};
      for (const auto* r : data.by_role(Role::skna)) {
        const auto half = dsp::segment(r->signal, cfg.preprocess.window_s, 0.5, r->subject_id);
        const auto segs = denoise_segments(model, dsp::normalize_apply(half, model.norm_stats));
        c.records.push_back({r->subject_id, Role::skna, overlap_add(segs, 0.5, &model.norm_stats)});
      }
      write_container(c, out);
      return kExitOk;
    }
    if (*feat_cmd) {
      const auto cfg = base_config(config_path, seed);
      const auto t = features::signal_type_from_string(type);
      const auto data = read_container(in);
      features::FeatureTable table;
      for (const auto* r : data.by_role(Role::skna))
        table.append(detail::features_of(features::iskna(r->signal, cfg.integrator), r->subject_id, t, cfg.feature_window_s));
      ExperimentReport rep;
      rep.config = cfg;
      rep.hash = config_hash(cfg);
      write_text(out, report::features_csv(rep, table));
      return kExitOk;
    }
    if (*stats_cmd || *cls_cmd) {
      const auto cfg = base_config(config_path, seed);
      const auto table = read_features(in);
      ExperimentReport rep;
      rep.config = cfg;
      rep.config.snr_db = {0.0};
      rep.hash = config_hash(cfg);
      std::set<std::string> ids;
      for (const auto& r : table.rows) ids.insert(r.subject);
      rep.subjects.assign(ids.begin(), ids.end());
      if (*stats_cmd) {
        feature_statistics(rep, 0.0, table);
        write_text(out, report::feature_stats_csv(rep) + report::omnibus_csv(rep) + report::posthoc_csv(rep));
        return kExitOk;
      }
      for (auto t : features::kSignalTypes) {
        if (table.filter(t).empty()) continue;
        for (auto k : cfg.classifiers)
          rep.classification.push_back(classify_loso(table, t, k, rep.subjects, cfg.classify_unit, cfg.master_seed));
      }
      write_text(out, report::classification_csv(rep));
      return kExitOk;
    }
    if (*loso_cmd) {
      auto cfg = base_config(config_path, seed);
      if (!snrs.empty()) cfg.snr_db = snrs;
      if (subjects) cfg.synth.n_subjects = subjects;
      if (epochs) cfg.train.epochs = epochs;
      if (!out.empty()) cfg.output_dir = out;
      const auto rep = run_loso(cfg, jobs, log_line);
      report::emit_report(rep, cfg.output_dir, log_line);
      report::emit_checkpoints(rep, cfg.output_dir);
      if (rep.partial) {
        std::cerr << "one or more folds aborted; report is partial\n";
        return kExitPartial;
      }
      return kExitOk;
    }
    if (*report_cmd) {
      std::ifstream f(in);
      if (!f) throw Error(ErrorKind::io, "cannot open '" + in + "'");
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(f);
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::format, std::string("report.json: ") + e.what());
      }
      const auto rep = report::report_from_json(j);
      report::emit_report(rep, out, log_line);
      return rep.partial ? kExitPartial : kExitOk;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    switch (e.kind()) {
      case ErrorKind::config: return kExitConfig;
      case ErrorKind::format: return kExitFormat;
      default: return kExitFailure;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}
