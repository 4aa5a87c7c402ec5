#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "skna/error.hpp"
#include "skna/signal.hpp"

namespace skna {

enum class Role : std::uint8_t { skna = 0, emg = 1 };

inline std::string_view to_string(Role r) { return r == Role::skna ? "skna" : "emg"; }

struct Record {
  std::string subject_id;
  Role role = Role::skna;
  SampledSignal signal;
};

/// Model parameters stored as one float32 block in layer order, described by a
/// JSON manifest of names and shapes.
struct ModelSection {
  nlohmann::json manifest;
  std::vector<float> payload;
};

/// Multi-subject dataset file.
///
/// Layout, all integers and floats little-endian:
///
///   "SKNA" | u16 version | u16 0xFEFF | f64 fs | u32 n_subjects | u32 n_records
///   u64 manifest_len | manifest JSON bytes
///   per record:
///     u16 id_len | id bytes | u8 role | f64 fs | u32 n_periods
///     n_periods x (u64 start | u64 end | u8 condition)
///     u64 n_samples | n_samples x f32
///   u8 has_model
///   if has_model: u64 json_len | JSON bytes | u64 n_floats | n_floats x f32
struct RecordingContainer {
  double fs = 2048.0;
  nlohmann::json manifest = nlohmann::json::object();
  std::vector<Record> records;
  std::optional<ModelSection> model;

  std::size_t subject_count() const {
    std::set<std::string> ids;
    for (const auto& r : records) ids.insert(r.subject_id);
    return ids.size();
  }

  std::vector<const Record*> by_role(Role role) const {
    std::vector<const Record*> out;
    for (const auto& r : records)
      if (r.role == role) out.push_back(&r);
    return out;
  }

  const Record* find(std::string_view subject_id, Role role) const {
    for (const auto& r : records)
      if (r.role == role && r.subject_id == subject_id) return &r;
    return nullptr;
  }
};

constexpr std::uint16_t kContainerVersion = 1;
constexpr std::uint16_t kEndianTag = 0xFEFF;

namespace detail {

class ByteWriter {
 public:
  template <class U>
  void put(U v) {
    static_assert(std::is_integral_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
  }
  void put_f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void put_f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
  void put_bytes(std::string_view s) { buf_.append(s); }
  std::string& str() { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  void set_context(std::string ctx) { ctx_ = std::move(ctx); }

  template <class U>
  U get() {
    need(sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }
  double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  std::string get_bytes(std::uint64_t n) {
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == data_.size(); }

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorKind::format, what + " at byte offset " + std::to_string(pos_) + (ctx_.empty() ? "" : " (" + ctx_ + ")"));
  }

 private:
  void need(std::uint64_t n) const {
    if (n > data_.size() - pos_)
      fail("truncated: need " + std::to_string(n) + " bytes, " + std::to_string(data_.size() - pos_) + " left");
  }

  std::string_view data_;
  std::size_t pos_ = 0;
  std::string ctx_;
};

}  // namespace detail

inline std::string encode_container(const RecordingContainer& c) {
  detail::ByteWriter w;
  w.put_bytes("SKNA");
  w.put<std::uint16_t>(kContainerVersion);
  w.put<std::uint16_t>(kEndianTag);
  w.put_f64(c.fs);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.subject_count()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.records.size()));
  const std::string manifest = c.manifest.dump();
  w.put<std::uint64_t>(manifest.size());
  w.put_bytes(manifest);
  for (const auto& r : c.records) {
    if (r.subject_id.size() > 0xFFFF) throw Error(ErrorKind::invalid_argument, "subject id too long");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(r.subject_id.size()));
    w.put_bytes(r.subject_id);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(r.role));
    w.put_f64(r.signal.fs);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(r.signal.periods.size()));
    for (const auto& p : r.signal.periods) {
      w.put<std::uint64_t>(p.start);
      w.put<std::uint64_t>(p.end);
      w.put<std::uint8_t>(static_cast<std::uint8_t>(p.condition));
    }
    w.put<std::uint64_t>(r.signal.samples.size());
    for (double v : r.signal.samples) w.put_f32(static_cast<float>(v));
  }
  w.put<std::uint8_t>(c.model ? 1 : 0);
  if (c.model) {
    const std::string m = c.model->manifest.dump();
    w.put<std::uint64_t>(m.size());
    w.put_bytes(m);
    w.put<std::uint64_t>(c.model->payload.size());
    for (float v : c.model->payload) w.put_f32(v);
  }
  return std::move(w.str());
}

inline RecordingContainer decode_container(std::string_view bytes) {
  detail::ByteReader r(bytes);
  RecordingContainer c;
  r.set_context("header");
  if (r.get_bytes(4) != "SKNA") r.fail("bad magic");
  const auto version = r.get<std::uint16_t>();
  if (version != kContainerVersion) r.fail("unsupported version " + std::to_string(version));
  if (r.get<std::uint16_t>() != kEndianTag) r.fail("bad endianness tag");
  c.fs = r.get_f64();
  const auto n_subjects = r.get<std::uint32_t>();
  const auto n_records = r.get<std::uint32_t>();
  r.set_context("manifest");
  const auto mlen = r.get<std::uint64_t>();
  try {
    c.manifest = nlohmann::json::parse(r.get_bytes(mlen));
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("manifest is not valid JSON: ") + e.what());
  }
  for (std::uint32_t k = 0; k < n_records; ++k) {
    r.set_context("record #" + std::to_string(k));
    Record rec;
    rec.subject_id = r.get_bytes(r.get<std::uint16_t>());
    r.set_context("record #" + std::to_string(k) + " '" + rec.subject_id + "'");
    const auto role = r.get<std::uint8_t>();
    if (role > 1) r.fail("unknown role " + std::to_string(role));
    rec.role = static_cast<Role>(role);
    rec.signal.fs = r.get_f64();
    const auto np = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < np; ++i) {
      Period p;
      p.start = r.get<std::uint64_t>();
      p.end = r.get<std::uint64_t>();
      const auto cond = r.get<std::uint8_t>();
      if (cond > 1) r.fail("unknown condition " + std::to_string(cond));
      p.condition = static_cast<Condition>(cond);
      rec.signal.periods.push_back(p);
    }
    const auto ns = r.get<std::uint64_t>();
    if (ns > (bytes.size() - r.offset()) / 4) r.fail("truncated payload: declared " + std::to_string(ns) + " samples");
    rec.signal.samples.resize(ns);
    for (auto& v : rec.signal.samples) v = static_cast<double>(r.get_f32());
    c.records.push_back(std::move(rec));
  }
  r.set_context("model section");
  if (r.get<std::uint8_t>() == 1) {
    ModelSection m;
    const auto len = r.get<std::uint64_t>();
    try {
      m.manifest = nlohmann::json::parse(r.get_bytes(len));
    } catch (const nlohmann::json::exception& e) {
      r.fail(std::string("model manifest is not valid JSON: ") + e.what());
    }
    const auto nf = r.get<std::uint64_t>();
    if (nf > (bytes.size() - r.offset()) / 4) r.fail("truncated model payload");
    m.payload.resize(nf);
    for (auto& v : m.payload) v = r.get_f32();
    c.model = std::move(m);
  }
  if (!r.at_end()) r.fail("trailing bytes");
  if (c.subject_count() != n_subjects)
    throw Error(ErrorKind::format, "header declares " + std::to_string(n_subjects) + " subjects, records hold " +
                                       std::to_string(c.subject_count()));
  return c;
}

inline void write_container(const RecordingContainer& c, const std::filesystem::path& path) {
  const std::string bytes = encode_container(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::io, "write to '" + path.string() + "' failed");
}

inline RecordingContainer read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_container(ss.str());
}

}  // namespace skna
