#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "skna/container.hpp"
#include "skna/error.hpp"
#include "skna/random.hpp"
#include "skna/signal.hpp"

namespace skna::mix {

/// 10 log10(sum clean^2 / sum noise^2). Returns -inf for a silent clean input.
inline double measure_snr(std::span<const double> clean, std::span<const double> noise) {
  if (clean.size() != noise.size()) throw Error(ErrorKind::invalid_argument, "measure_snr: length mismatch");
  double pc = 0, pn = 0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    pc += clean[i] * clean[i];
    pn += noise[i] * noise[i];
  }
  if (pn == 0) throw Error(ErrorKind::infinite_snr, "noise has zero power");
  if (pc == 0) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(pc / pn);
}

/// Gain g with 10 log10(Pc / (g^2 Pn)) = target_db for pooled energies.
inline double gain_for_energies(double clean_energy, double noise_energy, double target_db) {
  if (!(clean_energy > 0) || !(noise_energy > 0))
    throw Error(ErrorKind::degenerate_data, "zero-power pool in gain computation");
  return std::sqrt(clean_energy / noise_energy) * std::pow(10.0, -target_db / 20.0);
}

inline double global_gain_for_target(const SegmentSet& clean_pool, const SegmentSet& noise_pool, double target_db) {
  if (clean_pool.empty() || noise_pool.empty()) throw Error(ErrorKind::invalid_argument, "empty pool");
  if (clean_pool.window_len != noise_pool.window_len)
    throw Error(ErrorKind::invalid_argument, "pools have different window lengths");
  double pc = 0, pn = 0;
  for (double v : clean_pool.data) pc += v * v;
  for (double v : noise_pool.data) pn += v * v;
  return gain_for_energies(pc, pn, target_db);
}

/// Circular shift: y[n] = x[(n - k) mod N] with k = round(offset_s * fs).
inline SampledSignal time_shift(const SampledSignal& noise, double offset_s) {
  if (!(offset_s > 0) || !(offset_s < noise.duration()))
    throw Error(ErrorKind::invalid_offset, "offset " + std::to_string(offset_s) + " s outside (0, " +
                                               std::to_string(noise.duration()) + ")");
  const std::size_t n = noise.size();
  const auto k = static_cast<std::size_t>(std::llround(offset_s * noise.fs)) % n;
  SampledSignal out = noise;
  std::rotate_copy(noise.samples.begin(), noise.samples.begin() + static_cast<std::ptrdiff_t>(n - k), noise.samples.end(),
                   out.samples.begin());
  return out;
}

/// One noise slice: `length` samples from `record`, after rotating it right by `shift`.
struct NoiseRef {
  std::string record;
  std::size_t offset = 0;
  std::size_t shift = 0;
  bool operator==(const NoiseRef&) const = default;
};

struct MixPlan {
  double target_snr_db = 0;
  std::string test_subject;
  std::string test_noise_subject;
  std::vector<std::string> train_noise_subjects;
  std::vector<std::size_t> train_segments;  // indices into the clean set
  std::vector<std::size_t> test_segments;
  std::vector<NoiseRef> train_pairing;      // parallel to train_segments
  std::vector<NoiseRef> test_pairing;       // parallel to test_segments
  std::vector<std::pair<std::size_t, NoiseRef>> augmentation_pairs;  // (clean index, shifted noise)
  double global_gain = 1.0;
  std::uint64_t seed = 0;

  bool operator==(const MixPlan&) const = default;
};

inline nlohmann::json to_json(const NoiseRef& r) { return {r.record, r.offset, r.shift}; }

inline NoiseRef noise_ref_from_json(const nlohmann::json& j) {
  return {j.at(0).get<std::string>(), j.at(1).get<std::size_t>(), j.at(2).get<std::size_t>()};
}

inline nlohmann::json to_json(const MixPlan& p) {
  nlohmann::json j;
  j["target_snr_db"] = p.target_snr_db;
  j["test_subject"] = p.test_subject;
  j["test_noise_subject"] = p.test_noise_subject;
  j["train_noise_subjects"] = p.train_noise_subjects;
  j["train_segments"] = p.train_segments;
  j["test_segments"] = p.test_segments;
  j["global_gain"] = p.global_gain;
  j["seed"] = p.seed;
  auto& tp = j["train_pairing"] = nlohmann::json::array();
  for (const auto& r : p.train_pairing) tp.push_back(to_json(r));
  auto& te = j["test_pairing"] = nlohmann::json::array();
  for (const auto& r : p.test_pairing) te.push_back(to_json(r));
  auto& au = j["augmentation_pairs"] = nlohmann::json::array();
  for (const auto& [i, r] : p.augmentation_pairs) au.push_back({i, to_json(r)});
  return j;
}

inline MixPlan plan_from_json(const nlohmann::json& j) {
  MixPlan p;
  p.target_snr_db = j.at("target_snr_db").get<double>();
  p.test_subject = j.at("test_subject").get<std::string>();
  p.test_noise_subject = j.at("test_noise_subject").get<std::string>();
  p.train_noise_subjects = j.at("train_noise_subjects").get<std::vector<std::string>>();
  p.train_segments = j.at("train_segments").get<std::vector<std::size_t>>();
  p.test_segments = j.at("test_segments").get<std::vector<std::size_t>>();
  p.global_gain = j.at("global_gain").get<double>();
  p.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& r : j.at("train_pairing")) p.train_pairing.push_back(noise_ref_from_json(r));
  for (const auto& r : j.at("test_pairing")) p.test_pairing.push_back(noise_ref_from_json(r));
  for (const auto& a : j.at("augmentation_pairs"))
    p.augmentation_pairs.emplace_back(a.at(0).get<std::size_t>(), noise_ref_from_json(a.at(1)));
  return p;
}

/// Noise records keyed by subject id, already conditioned to the segment rate.
using NoiseBank = std::map<std::string, SampledSignal>;

inline NoiseBank noise_bank(const RecordingContainer& c) {
  NoiseBank bank;
  for (const auto* r : c.by_role(Role::emg)) bank.emplace(r->subject_id, r->signal);
  return bank;
}

/// Copies the slice described by `ref` into `out` (length out.size()).
inline void noise_slice(const NoiseBank& bank, const NoiseRef& ref, std::span<double> out) {
  const auto it = bank.find(ref.record);
  if (it == bank.end()) throw Error(ErrorKind::invalid_argument, "unknown noise record '" + ref.record + "'");
  const auto& x = it->second.samples;
  const std::size_t n = x.size();
  if (ref.offset + out.size() > n) throw Error(ErrorKind::invalid_offset, "noise slice out of bounds");
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[(ref.offset + i + n - ref.shift % n) % n];
}

struct MixResult {
  SegmentSet train_clean;  // training targets, augmented copies included
  SegmentSet train_noisy;
  SegmentSet test_clean;
  SegmentSet test_noisy;
  MixPlan plan;
};

namespace detail {

/// Offsets drawn without replacement from the non-overlapping slots of a
/// record, falling back to uniform in-bounds offsets once the slots run out.
class OffsetPool {
 public:
  OffsetPool(std::size_t record_len, std::size_t window) : n_(record_len), w_(window) {
    for (std::size_t s = 0; s + w_ <= n_; s += w_) slots_.push_back(s);
  }
  std::size_t draw(Rng& rng) {
    if (!shuffled_) {
      shuffle(slots_, rng);
      shuffled_ = true;
    }
    if (next_ < slots_.size()) return slots_[next_++];
    return static_cast<std::size_t>(uniform_index(rng, n_ - w_ + 1));
  }

 private:
  std::size_t n_, w_;
  std::vector<std::size_t> slots_;
  std::size_t next_ = 0;
  bool shuffled_ = false;
};

}  // namespace detail

/// Applies a fixed plan. Pure: the same plan and inputs give bitwise-identical sets.
inline MixResult apply_plan(const SegmentSet& clean, const NoiseBank& bank, const MixPlan& plan) {
  MixResult r;
  r.plan = plan;
  for (auto* s : {&r.train_clean, &r.train_noisy, &r.test_clean, &r.test_noisy}) *s = SegmentSet::like(clean);
  const std::size_t L = clean.window_len;
  std::vector<double> nz(L);
  auto emit = [&](std::size_t idx, const NoiseRef& ref, SegmentSet& cset, SegmentSet& nset) {
    cset.push_from(clean, idx);
    nset.push_from(clean, idx);
    noise_slice(bank, ref, nz);
    auto dst = nset.segment(nset.size() - 1);
    for (std::size_t t = 0; t < L; ++t) dst[t] += plan.global_gain * nz[t];
  };
  for (std::size_t k = 0; k < plan.train_segments.size(); ++k)
    emit(plan.train_segments[k], plan.train_pairing[k], r.train_clean, r.train_noisy);
  for (const auto& [idx, ref] : plan.augmentation_pairs) emit(idx, ref, r.train_clean, r.train_noisy);
  for (std::size_t k = 0; k < plan.test_segments.size(); ++k)
    emit(plan.test_segments[k], plan.test_pairing[k], r.test_clean, r.test_noisy);
  return r;
}

/// Builds the contamination plan for one held-out subject and applies it.
///
/// One noise subject is reserved for the test segments; training segments draw
/// from the rest. The minority training class is topped up with copies paired
/// to time-shifted noise until both classes have equal counts. A single gain
/// computed over every pair (train, augmented and test) sets the pooled SNR.
inline MixResult mix_dataset(const SegmentSet& clean, const NoiseBank& bank, std::uint64_t plan_seed, double target_db,
                             const std::string& test_subject, double min_shift_s = 0.25) {
  if (bank.size() < 2)
    throw Error(ErrorKind::insufficient_noise_subjects,
                "need at least 2 noise subjects, got " + std::to_string(bank.size()));
  const std::size_t L = clean.window_len;
  for (const auto& [id, sig] : bank) {
    if (sig.size() < L) throw Error(ErrorKind::invalid_argument, "noise record '" + id + "' shorter than a window");
    if (sig.fs != clean.fs) throw Error(ErrorKind::invalid_argument, "noise record '" + id + "' has a different rate");
  }

  Rng rng(plan_seed);
  MixPlan plan;
  plan.seed = plan_seed;
  plan.target_snr_db = target_db;
  plan.test_subject = test_subject;
  std::vector<std::string> ids;
  for (const auto& [id, sig] : bank) ids.push_back(id);
  plan.test_noise_subject = ids[uniform_index(rng, ids.size())];
  for (const auto& id : ids)
    if (id != plan.test_noise_subject) plan.train_noise_subjects.push_back(id);

  for (std::size_t i = 0; i < clean.size(); ++i)
    (clean.subject_ids[i] == test_subject ? plan.test_segments : plan.train_segments).push_back(i);
  if (plan.test_segments.empty())
    throw Error(ErrorKind::invalid_argument, "no segments for test subject '" + test_subject + "'");

  std::map<std::string, detail::OffsetPool> pools;
  for (const auto& [id, sig] : bank) pools.emplace(id, detail::OffsetPool(sig.size(), L));
  auto draw_train = [&]() {
    const auto& id = plan.train_noise_subjects[uniform_index(rng, plan.train_noise_subjects.size())];
    return NoiseRef{id, pools.at(id).draw(rng), 0};
  };

  for (std::size_t k = 0; k < plan.train_segments.size(); ++k) plan.train_pairing.push_back(draw_train());
  for (std::size_t k = 0; k < plan.test_segments.size(); ++k)
    plan.test_pairing.push_back({plan.test_noise_subject, pools.at(plan.test_noise_subject).draw(rng), 0});

  std::vector<std::size_t> base, stim;
  for (auto i : plan.train_segments) (clean.labels[i] == Condition::baseline ? base : stim).push_back(i);
  auto& minority = base.size() < stim.size() ? base : stim;
  const std::size_t deficit = std::max(base.size(), stim.size()) - minority.size();
  if (deficit > 0 && minority.empty())
    throw Error(ErrorKind::insufficient_class, "training set lacks one condition entirely");
  std::vector<std::size_t> order = minority;
  for (std::size_t k = 0; k < deficit; ++k) {
    if (k % order.size() == 0) shuffle(order, rng);
    NoiseRef ref = draw_train();
    const auto& sig = bank.at(ref.record);
    const double dur = sig.duration();
    const double shift_s = uniform(rng, min_shift_s, dur - min_shift_s);
    ref.shift = static_cast<std::size_t>(std::llround(shift_s * sig.fs)) % sig.size();
    plan.augmentation_pairs.emplace_back(order[k % order.size()], ref);
  }

  double pc = 0, pn = 0;
  std::vector<double> nz(L);
  auto accumulate = [&](std::size_t idx, const NoiseRef& ref) {
    for (double v : clean.segment(idx)) pc += v * v;
    noise_slice(bank, ref, nz);
    for (double v : nz) pn += v * v;
  };
  for (std::size_t k = 0; k < plan.train_segments.size(); ++k) accumulate(plan.train_segments[k], plan.train_pairing[k]);
  for (const auto& [idx, ref] : plan.augmentation_pairs) accumulate(idx, ref);
  for (std::size_t k = 0; k < plan.test_segments.size(); ++k) accumulate(plan.test_segments[k], plan.test_pairing[k]);
  plan.global_gain = gain_for_energies(pc, pn, target_db);

  return apply_plan(clean, bank, plan);
}

/// Pooled SNR of mixed sets given their clean counterparts.
inline double pooled_snr(std::initializer_list<std::pair<const SegmentSet*, const SegmentSet*>> clean_noisy) {
  double pc = 0, pn = 0;
  for (const auto& [c, n] : clean_noisy) {
    for (std::size_t i = 0; i < c->data.size(); ++i) {
      const double d = n->data[i] - c->data[i];
      pc += c->data[i] * c->data[i];
      pn += d * d;
    }
  }
  if (pn == 0) throw Error(ErrorKind::infinite_snr, "noise has zero power");
  return 10.0 * std::log10(pc / pn);
}

}  // namespace skna::mix
