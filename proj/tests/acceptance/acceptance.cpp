// Acceptance run: one PASS/FAIL line per criterion. Exits non-zero if any
// criterion fails.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "../support/oracles.hpp"

using namespace skna;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Tolerances and thresholds.
constexpr double kGradTol = 1e-4;
constexpr std::size_t kGradConfigs = 50;
constexpr double kUnitRuntimeS = 120.0;
constexpr double kOverfitMse = 0.01;
constexpr double kMixTolDb = 1e-3;
constexpr double kSnrGainM4 = 4.0, kCorrGainM4 = 0.2;
constexpr double kSnrGainM8 = 3.0, kCorrGainM8 = 0.15;
constexpr double kCleanAurocGate = 0.95, kReconAurocFloor = 0.85;
constexpr double kAccOverBpf = 15.0, kAccBelowClean = 10.0;
constexpr double kDeskRuntimeS = 3600.0;

int failures = 0;

void verdict(int id, const std::string& name, bool ok, const std::string& detail) {
  std::cout << "criterion " << id << " [" << name << "]: " << (ok ? "PASS" : "FAIL") << "  " << detail << std::endl;
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << std::fixed << v;
  return os.str();
}

// Rows of a CSV written by the report module, keyed by header name.
std::vector<std::map<std::string, std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("missing " + p.string());
  std::vector<std::map<std::string, std::string>> rows;
  std::vector<std::string> head;
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    if (head.empty()) {
      head = cells;
      continue;
    }
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < head.size() && i < cells.size(); ++i) row[head[i]] = cells[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run(const std::string& cmd) {
  std::cout << "$ " << cmd << std::endl;
  return std::system(cmd.c_str());
}

void gradient_soundness() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst = 0;
  std::string worst_kind;
  for (auto kind : oracle::kGradKinds)
    for (std::size_t i = 0; i < kGradConfigs; ++i) {
      const auto g = oracle::check_random_config(kind, rng);
      if (g.max_rel_error > worst) worst = g.max_rel_error, worst_kind = std::string(nn::to_string(kind));
    }
  const double t = seconds_since(t0);
  verdict(1, "gradient soundness", worst <= kGradTol && t <= kUnitRuntimeS,
          "max rel error " + std::to_string(worst) + " (" + worst_kind + "), " + fmt(t, 1) + " s");
}

void overfit_sanity() {
  const auto t0 = Clock::now();
  const double mse = oracle::overfit_final_mse(200, 5);
  const double t = seconds_since(t0);
  verdict(2, "overfit sanity", mse <= kOverfitMse && t <= kUnitRuntimeS,
          "eval MSE after 200 epochs " + fmt(mse, 5) + " (limit " + fmt(kOverfitMse, 3) + "), " + fmt(t, 1) + " s");
}

// Replays every emitted mix plan and recomputes the pooled SNR from raw sums.
void mixing_accuracy(const ExperimentConfig& cfg, const fs::path& out) {
  const auto data = prepare_dataset(cfg);
  const auto subjects = skna_subjects(data, cfg.max_subjects);
  const auto clean = detail::pooled_segments(data, subjects, cfg.preprocess.window_s);
  const auto bank = mix::noise_bank(data);
  std::ifstream in(out / "mix_plans.json");
  const auto plans = nlohmann::json::parse(in);
  double worst = 0;
  std::size_t n = 0;
  for (const auto& e : plans) {
    const auto plan = mix::plan_from_json(e.at("plan"));
    const auto m = mix::apply_plan(clean, bank, plan);
    double sc = 0, sn = 0;
    for (const auto* pr : {&m.train_clean, &m.test_clean}) {
      const auto& noisy = pr == &m.train_clean ? m.train_noisy : m.test_noisy;
      for (std::size_t i = 0; i < pr->data.size(); ++i) {
        sc += pr->data[i] * pr->data[i];
        const double d = noisy.data[i] - pr->data[i];
        sn += d * d;
      }
    }
    const double achieved = 10 * std::log10(sc / sn);
    worst = std::max(worst, std::abs(achieved - e.at("snr_db").get<double>()));
    ++n;
  }
  verdict(3, "mixing accuracy", n == cfg.snr_db.size() * subjects.size() && worst <= kMixTolDb,
          std::to_string(n) + " fold plans replayed, worst |achieved - target| " + fmt(worst, 6) + " dB");
}

double summary_mean(const std::vector<std::map<std::string, std::string>>& rows, double snr, const std::string& type,
                    const std::string& metric) {
  for (const auto& r : rows)
    if (std::stod(r.at("target_snr_db")) == snr && r.at("signal_type") == type && r.at("condition") == "overall" &&
        r.at("metric") == metric)
      return std::stod(r.at("mean"));
  return std::numeric_limits<double>::quiet_NaN();
}

void denoising_direction(int id, double snr, double snr_gain, double corr_gain, const fs::path& out) {
  const auto rows = read_csv(out / "recon_summary.csv");
  const double sb = summary_mean(rows, snr, "bpf", "snr_db"), sr = summary_mean(rows, snr, "recon", "snr_db");
  const double cb = summary_mean(rows, snr, "bpf", "corr_iskna"), cr = summary_mean(rows, snr, "recon", "corr_iskna");
  verdict(id, "denoising direction at " + fmt(snr, 0) + " dB", sr - sb >= snr_gain && cr - cb >= corr_gain,
          "SNR " + fmt(sb, 2) + " -> " + fmt(sr, 2) + " dB (gain " + fmt(sr - sb, 2) + ", need " + fmt(snr_gain, 1) +
              "); iSKNA corr " + fmt(cb, 3) + " -> " + fmt(cr, 3) + " (gain " + fmt(cr - cb, 3) + ", need " +
              fmt(corr_gain, 2) + ")");
}

void feature_ordering(const ExperimentConfig& cfg, const fs::path& out) {
  const auto rows = read_csv(out / "feature_stats.csv");
  auto auroc = [&](double snr, const std::string& f, const std::string& t) {
    for (const auto& r : rows)
      if (std::stod(r.at("target_snr_db")) == snr && r.at("feature") == f && r.at("signal_type") == t)
        return std::stod(r.at("auroc"));
    return std::numeric_limits<double>::quiet_NaN();
  };
  bool ok = true;
  std::string detail;
  for (double snr : cfg.snr_db)
    for (const char* f : {"burst_count", "burst_duration", "burst_total_area"}) {
      const double c = auroc(snr, f, "clean"), b = auroc(snr, f, "bpf"), r = auroc(snr, f, "recon");
      const bool here = r > b && (c < kCleanAurocGate || r >= kReconAurocFloor);
      ok = ok && here;
      detail += std::string(here ? "" : "!") + fmt(snr, 0) + "dB " + f + " clean " + fmt(c, 3) + " bpf " + fmt(b, 3) +
                " recon " + fmt(r, 3) + "; ";
    }
  verdict(6, "feature discriminability ordering", ok, detail);
}

void classification_ordering(const ExperimentConfig& cfg, const fs::path& out) {
  const auto rows = read_csv(out / "classification.csv");
  auto acc = [&](double snr, const std::string& t) {
    for (const auto& r : rows)
      if (std::stod(r.at("target_snr_db")) == snr && r.at("signal_type") == t && r.at("classifier") == "rf")
        return std::stod(r.at("accuracy"));
    return std::numeric_limits<double>::quiet_NaN();
  };
  bool ok = true;
  std::string detail;
  for (double snr : cfg.snr_db) {
    const double c = acc(snr, "clean"), b = acc(snr, "bpf"), r = acc(snr, "recon");
    ok = ok && r >= b + kAccOverBpf && r >= c - kAccBelowClean;
    detail += fmt(snr, 0) + "dB RF accuracy clean " + fmt(c, 1) + " bpf " + fmt(b, 1) + " recon " + fmt(r, 1) + "; ";
  }
  verdict(7, "classification ordering", ok, detail);
}

void statistics_oracles() {
  // Wilcoxon: exact p by enumerating all 2^5 sign assignments.
  const std::vector<double> x{1.1, 2.2, 3.3, 4.4, 5.5}, y(5, 0.0);
  int extreme = 0;
  for (int mask = 0; mask < 32; ++mask) {
    int w = 0;
    for (int k = 0; k < 5; ++k)
      if (mask >> k & 1) w += k + 1;
    if (std::abs(w - 7.5) >= 7.5) ++extreme;
  }
  const double p_oracle = extreme / 32.0;
  const double p = stats::wilcoxon_signed_rank(x, y).p_value;

  // Kruskal-Wallis H from ranks 1..6 directly.
  const double h_oracle = 12.0 / (6 * 7) * (6.0 * 6.0 / 3 + 15.0 * 15.0 / 3) - 3 * 7;
  const double h = stats::kruskal_wallis({{1, 2, 3}, {4, 5, 6}}).statistic;

  // AUROC tie fixture against pair counting.
  const std::vector<double> pos{1, 2, 3}, neg{2, 3};
  double wins = 0;
  for (double a : pos)
    for (double b : neg) wins += a > b ? 1.0 : a == b ? 0.5 : 0.0;
  const double auc_oracle = wins / 6.0;
  const double auc = stats::auroc(pos, neg);

  const bool ok = std::abs(p - 0.0625) <= 1e-12 && std::abs(p_oracle - 0.0625) <= 1e-12 && std::abs(h - 3.857) <= 1e-3 &&
                  std::abs(h - h_oracle) <= 1e-12 && std::abs(auc - 1.0 / 3) <= 1e-12 && std::abs(auc_oracle - 1.0 / 3) <= 1e-12;
  verdict(8, "statistics oracles", ok,
          "Wilcoxon p " + fmt(p, 6) + " (enumeration " + fmt(p_oracle, 6) + "), KW H " + fmt(h, 6) + " (oracle " +
              fmt(h_oracle, 6) + "), AUROC " + fmt(auc, 12) + " (pair count " + fmt(auc_oracle, 12) + ")");
}

void determinism(const std::string& cli, const fs::path& config, const fs::path& work) {
  const auto a = work / "det_jobs1", b = work / "det_jobs2";
  fs::remove_all(a);
  fs::remove_all(b);
  const std::string common = cli + " loso --config " + config.string() + " --subjects 4 --epochs 1 --snr -4";
  const int ra = run(common + " --jobs 1 --out " + a.string() + " > " + (work / "det_jobs1.log").string() + " 2>&1");
  const int rb = run(common + " --jobs 2 --out " + b.string() + " > " + (work / "det_jobs2.log").string() + " 2>&1");
  std::size_t compared = 0, differing = 0;
  std::string which;
  if (ra == 0 && rb == 0)
    for (const auto& e : fs::directory_iterator(a)) {
      if (e.path().extension() != ".csv") continue;
      ++compared;
      if (slurp(e.path()) != slurp(b / e.path().filename())) ++differing, which += e.path().filename().string() + " ";
    }
  verdict(9, "determinism across --jobs", ra == 0 && rb == 0 && compared > 0 && differing == 0,
          std::to_string(compared) + " CSV files compared, " + std::to_string(differing) + " differ " + which);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string config_path, work_dir, cli;
  app.add_option("--config", config_path, "desk config")->required();
  app.add_option("--work", work_dir, "scratch directory")->required();
  app.add_option("--cli", cli, "path to skna_cli")->required();
  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path work = fs::absolute(work_dir);
    fs::create_directories(work);
    const auto cfg = load_config(config_path);

    gradient_soundness();
    overfit_sanity();

    // desk LOSO through the CLI, timed end to end
    const auto desk = work / "desk";
    fs::remove_all(desk);
    const auto jobs = std::max(1u, std::thread::hardware_concurrency());
    const auto t0 = Clock::now();
    const int rc = run(cli + " loso --config " + config_path + " --jobs " + std::to_string(jobs) + " --out " + desk.string() +
                       " > " + (work / "desk.log").string() + " 2>&1");
    const double desk_s = seconds_since(t0);
    if (rc != 0) std::cout << "desk run exited with status " << rc << std::endl;

    mixing_accuracy(cfg, desk);
    denoising_direction(4, -4, kSnrGainM4, kCorrGainM4, desk);
    denoising_direction(5, -8, kSnrGainM8, kCorrGainM8, desk);
    feature_ordering(cfg, desk);
    classification_ordering(cfg, desk);
    statistics_oracles();
    determinism(cli, config_path, work);
    verdict(10, "desk-scale runtime", rc == 0 && desk_s <= kDeskRuntimeS,
            fmt(desk_s / 60, 1) + " min for " + std::to_string(cfg.snr_db.size()) + " SNRs x " +
                std::to_string(cfg.synth.n_subjects) + " folds, " + std::to_string(cfg.train.epochs) + " epochs, " +
                std::to_string(jobs) + " job(s)");
  } catch (const std::exception& e) {
    std::cout << "acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures == 0 ? "ALL CRITERIA PASS" : std::to_string(failures) + " criterion/criteria FAIL") << std::endl;
  return failures == 0 ? 0 : 1;
}
