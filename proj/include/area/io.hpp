#pragma once

// File formats.
//
// Embedding dataset (little-endian):
//   "AREA" | u16 version | u32 d_in | u32 flags (bit 0: captions) | u64 count
//   count x { u32 label | u32 task | f32[d_in] features | f32[d_in] caption? }
//
// State file: "AREASTAT" | u16 version | body | u64 FNV-1a of all preceding
// bytes. Reals in the state are stored as f64 so that a reloaded state
// reproduces inference exactly.
//
// Results log: one JSON object per line with run, stage, metric, value and
// config_digest.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "area/config.hpp"
#include "area/digest.hpp"
#include "area/errors.hpp"
#include "area/pipeline.hpp"
#include "area/stream.hpp"

namespace area {

inline constexpr std::uint16_t kDatasetVersion = 1;
inline constexpr std::uint16_t kStateVersion = 1;
inline constexpr std::uint32_t kFlagCaptions = 1u;

class ByteWriter {
 public:
  void u8(std::uint8_t x) { buf_.push_back(static_cast<char>(x)); }
  void u16(std::uint16_t x) { le(x, 2); }
  void u32(std::uint32_t x) { le(x, 4); }
  void u64(std::uint64_t x) { le(x, 8); }
  void f32(double x) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(x))); }
  void f64(double x) { u64(std::bit_cast<std::uint64_t>(x)); }
  void raw(std::string_view s) { buf_.append(s); }
  void text(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }
  void f64s(const Vec& v) {
    for (double x : v) f64(x);
  }
  void f64s(const Mat& m) {
    for (double x : m.values()) f64(x);
  }

  const std::string& bytes() const noexcept { return buf_; }

 private:
  void le(std::uint64_t x, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : d_(data) {}

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return d_.size() - pos_; }

  void need(std::size_t n, const std::string& what) const {
    if (remaining() < n) {
      throw FormatError("truncated " + what + ": need " + std::to_string(n) + " bytes, " +
                            std::to_string(remaining()) + " left",
                        pos_);
    }
  }

  std::uint8_t u8(const std::string& what) { return static_cast<std::uint8_t>(le(1, what)); }
  std::uint16_t u16(const std::string& what) { return static_cast<std::uint16_t>(le(2, what)); }
  std::uint32_t u32(const std::string& what) { return static_cast<std::uint32_t>(le(4, what)); }
  std::uint64_t u64(const std::string& what) { return le(8, what); }
  double f32(const std::string& what) { return static_cast<double>(std::bit_cast<float>(u32(what))); }
  double f64(const std::string& what) { return std::bit_cast<double>(u64(what)); }

  std::string_view raw(std::size_t n, const std::string& what) {
    need(n, what);
    auto s = d_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string text(const std::string& what) { return std::string(raw(u32(what + " length"), what)); }

  Vec f64s(std::size_t n, const std::string& what) {
    need(8 * n, what);
    Vec v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = f64(what);
    return v;
  }
  Mat f64s(std::size_t rows, std::size_t cols, const std::string& what) {
    need(8 * rows * cols, what);
    Mat m(rows, cols);
    for (double& x : m.values()) x = f64(what);
    return m;
  }

 private:
  std::uint64_t le(int n, const std::string& what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t x = 0;
    for (int i = 0; i < n; ++i) x |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(d_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return x;
  }

  std::string_view d_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write to '" + path + "' failed");
}

inline std::string encode_dataset(std::span<const RawSample> samples) {
  if (samples.empty()) throw DataError("dataset: no records to write");
  const std::size_t d_in = samples.front().features.size();
  const bool captions = samples.front().caption.has_value();
  ByteWriter w;
  w.raw("AREA");
  w.u16(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(d_in));
  w.u32(captions ? kFlagCaptions : 0u);
  w.u64(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const RawSample& s = samples[i];
    if (s.features.size() != d_in || s.caption.has_value() != captions ||
        (captions && s.caption->size() != d_in)) {
      throw DataError("dataset: record " + std::to_string(i) + " does not match the shape of record 0");
    }
    w.u32(s.label);
    w.u32(s.task);
    for (double x : s.features) w.f32(x);
    if (captions)
      for (double x : *s.caption) w.f32(x);
  }
  return w.bytes();
}

inline std::vector<RawSample> decode_dataset(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.raw(std::min<std::size_t>(4, bytes.size()), "magic") != "AREA") throw FormatError("bad magic, expected 'AREA'", 0);
  const std::uint16_t version = r.u16("version");
  if (version != kDatasetVersion) {
    throw VersionError("unsupported dataset version " + std::to_string(version) + " (expected " +
                       std::to_string(kDatasetVersion) + ")");
  }
  const std::size_t d_off = r.offset();
  const std::uint32_t d_in = r.u32("d_in");
  if (d_in == 0) throw FormatError("d_in is zero", d_off);
  const std::size_t f_off = r.offset();
  const std::uint32_t flags = r.u32("flags");
  if (flags & ~kFlagCaptions) throw FormatError("unknown flag bits", f_off);
  const bool captions = flags & kFlagCaptions;
  const std::uint64_t count = r.u64("record count");
  const std::size_t record = 8 + 4 * static_cast<std::size_t>(d_in) * (captions ? 2 : 1);

  std::vector<RawSample> out;
  out.reserve(std::min<std::uint64_t>(count, r.remaining() / record + 1));
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t start = r.offset();
    r.need(record, "record " + std::to_string(i));
    RawSample s;
    s.label = r.u32("label");
    s.task = r.u32("task");
    s.features = Vec(d_in);
    for (auto& x : s.features) x = r.f32("features");
    if (captions) {
      Vec c(d_in);
      for (auto& x : c) x = r.f32("caption");
      s.caption = std::move(c);
    }
    if (!all_finite(s.features) || (s.caption && !all_finite(*s.caption))) {
      throw FormatError("non-finite value in record " + std::to_string(i), start);
    }
    out.push_back(std::move(s));
  }
  if (r.remaining() != 0) {
    throw FormatError(std::to_string(r.remaining()) + " trailing bytes after " + std::to_string(count) + " records",
                      r.offset());
  }
  return out;
}

inline void save_dataset(const std::string& path, const TaskStream& stream) {
  const auto all = stream.flatten();
  write_file(path, encode_dataset(all));
}

inline TaskStream load_dataset(const std::string& path) { return TaskStream::from_samples(decode_dataset(read_file(path))); }

// Prompts are stored as dataset records: label = class, task = its task.
inline void save_prompts(const std::string& path, const PromptTable& prompts, const TaskStream& stream) {
  std::vector<RawSample> recs;
  for (const auto& t : stream.tasks)
    for (auto c : t.classes) recs.push_back({prompts.at(c), c, t.task_id, std::nullopt});
  write_file(path, encode_dataset(recs));
}

inline PromptTable load_prompts(const std::string& path) {
  PromptTable out;
  for (auto& r : decode_dataset(read_file(path))) {
    if (!out.emplace(r.label, std::move(r.features)).second) {
      throw DataError("prompt file lists class " + std::to_string(r.label) + " twice");
    }
  }
  return out;
}

namespace detail {

inline void write_anchor(ByteWriter& w, const ClassAnchor& a) {
  w.u32(a.class_id);
  w.u8(static_cast<std::uint8_t>(a.method));
  w.u32(static_cast<std::uint32_t>(a.dim()));
  w.u32(static_cast<std::uint32_t>(a.rank()));
  w.f64s(a.mu_vis.vec());
  w.f64s(a.basis_vis);
  w.f64s(a.eigvals_vis);
  w.f64s(a.mu_txt.vec());
  w.f64s(a.basis_txt);
  w.f64s(a.eigvals_txt);
}

inline ClassAnchor read_anchor(ByteReader& r) {
  ClassAnchor a;
  a.class_id = r.u32("anchor class");
  const std::size_t m_off = r.offset();
  const std::uint8_t method = r.u8("anchor method");
  if (method > 1) throw FormatError("unknown anchor method " + std::to_string(method), m_off);
  a.method = static_cast<AnchorMethod>(method);
  const std::size_t d = r.u32("anchor dim");
  const std::size_t k = r.u32("anchor rank");
  a.mu_vis = UnitVector::from_normalized(r.f64s(d, "anchor mean"));
  a.basis_vis = r.f64s(d, k, "anchor basis");
  a.eigvals_vis = r.f64s(k, "anchor eigenvalues");
  a.mu_txt = UnitVector::from_normalized(r.f64s(d, "anchor mean"));
  a.basis_txt = r.f64s(d, k, "anchor basis");
  a.eigvals_txt = r.f64s(k, "anchor eigenvalues");
  return a;
}

inline void write_encoder(ByteWriter& w, const FrozenEncoder& e) {
  w.u8(static_cast<std::uint8_t>(e.modality()));
  w.u32(static_cast<std::uint32_t>(e.out_dim()));
  w.u32(static_cast<std::uint32_t>(e.in_dim()));
  w.f64s(e.projection());
}

inline FrozenEncoder read_encoder(ByteReader& r) {
  const std::size_t off = r.offset();
  const std::uint8_t m = r.u8("encoder modality");
  if (m > 1) throw FormatError("unknown encoder modality", off);
  const std::size_t rows = r.u32("encoder rows");
  const std::size_t cols = r.u32("encoder cols");
  return FrozenEncoder(static_cast<Modality>(m), r.f64s(rows, cols, "encoder projection"));
}

}  // namespace detail

inline std::string encode_state(const ContinualState& s) {
  ByteWriter w;
  w.raw("AREASTAT");
  w.u16(kStateVersion);
  w.text(s.config.canonical());
  detail::write_encoder(w, s.visual);
  detail::write_encoder(w, s.textual);
  w.u32(static_cast<std::uint32_t>(s.prompts.size()));
  for (const auto& [c, p] : s.prompts) {
    w.u32(c);
    w.u32(static_cast<std::uint32_t>(p.size()));
    w.f64s(p);
  }
  w.u32(static_cast<std::uint32_t>(s.task_order.size()));
  for (auto t : s.task_order) {
    w.u32(t);
    w.u64(s.anchors.recorded_digest(t));
    const auto classes = s.anchors.classes(t);
    w.u32(static_cast<std::uint32_t>(classes.size()));
    for (auto c : classes) detail::write_anchor(w, s.anchors.anchor(c));
    const TaskExpert& e = s.experts.at(t);
    w.u32(static_cast<std::uint32_t>(e.dim()));
    w.u32(static_cast<std::uint32_t>(e.rank()));
    w.f64s(e.s_vis);
    w.f64s(e.r_vis);
    w.f64s(e.s_txt);
    w.f64s(e.r_txt);
  }
  Fnv1a64 h;
  for (char ch : w.bytes()) h.byte(static_cast<std::uint8_t>(ch));
  w.u64(h.value());
  return w.bytes();
}

inline ContinualState decode_state(std::string_view bytes) {
  if (bytes.size() < 8 + 2 + 8) throw FormatError("state file too short", bytes.size());
  if (bytes.substr(0, 8) != "AREASTAT") throw FormatError("bad magic, expected 'AREASTAT'", 0);
  ByteReader r(bytes.substr(0, bytes.size() - 8));
  r.raw(8, "magic");
  const std::uint16_t version = r.u16("version");
  if (version != kStateVersion) {
    throw VersionError("state file version " + std::to_string(version) + " cannot be migrated (this build reads " +
                       std::to_string(kStateVersion) + ")");
  }
  Fnv1a64 h;
  for (char ch : bytes.substr(0, bytes.size() - 8)) h.byte(static_cast<std::uint8_t>(ch));
  ByteReader tail(bytes.substr(bytes.size() - 8));
  if (tail.u64("digest") != h.value()) throw DigestMismatch("state file digest mismatch: the file was modified");

  ContinualState s;
  s.config = Config::parse(r.text("config"));
  s.visual = detail::read_encoder(r);
  s.textual = detail::read_encoder(r);
  if (s.visual.modality() != Modality::Visual || s.textual.modality() != Modality::Textual) {
    throw FormatError("encoder modalities out of order", r.offset());
  }
  const std::uint32_t n_prompts = r.u32("prompt count");
  for (std::uint32_t i = 0; i < n_prompts; ++i) {
    const std::uint32_t c = r.u32("prompt class");
    const std::uint32_t n = r.u32("prompt length");
    s.prompts[c] = r.f64s(n, "prompt");
  }
  const std::uint32_t n_tasks = r.u32("task count");
  for (std::uint32_t i = 0; i < n_tasks; ++i) {
    const std::uint32_t t = r.u32("task id");
    const std::uint64_t recorded = r.u64("task digest");
    const std::uint32_t n_classes = r.u32("class count");
    for (std::uint32_t j = 0; j < n_classes; ++j) s.anchors.add(t, detail::read_anchor(r));
    s.anchors.restore_digest(t, recorded);
    if (s.anchors.digest(t) != recorded) {
      throw DigestMismatch("anchors of task " + std::to_string(t) + " do not match their frozen digest");
    }
    TaskExpert e;
    e.task_id = t;
    const std::size_t d = r.u32("expert dim");
    const std::size_t k = r.u32("expert rank");
    e.s_vis = r.f64s(k, d, "expert S_vis");
    e.r_vis = r.f64s(d, d, "expert R_vis");
    e.s_txt = r.f64s(k, d, "expert S_txt");
    e.r_txt = r.f64s(d, d, "expert R_txt");
    s.experts.emplace(t, std::move(e));
    s.task_order.push_back(t);
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes in state body", r.offset());
  return s;
}

inline void save_state(const std::string& path, const ContinualState& s) { write_file(path, encode_state(s)); }
inline ContinualState load_state(const std::string& path) { return decode_state(read_file(path)); }

struct ResultRow {
  std::string run;
  std::size_t stage = 0;
  std::string metric;
  double value = 0.0;
  std::string config_digest;
};

inline std::string format_row(const ResultRow& r) {
  nlohmann::ordered_json j;
  j["run"] = r.run;
  j["stage"] = r.stage;
  j["metric"] = r.metric;
  j["value"] = r.value;
  j["config_digest"] = r.config_digest;
  return j.dump();
}

inline ResultRow parse_row(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
    return {j.at("run").get<std::string>(), j.at("stage").get<std::size_t>(), j.at("metric").get<std::string>(),
            j.at("value").is_null() ? std::nan("") : j.at("value").get<double>(),
            j.at("config_digest").get<std::string>()};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed results row: ") + e.what());
  }
}

// Append-only results log.
class ResultsLog {
 public:
  ResultsLog(std::string path, std::string run, const Config& cfg)
      : path_(std::move(path)), run_(std::move(run)), digest_(hex_digest(cfg.digest())) {}

  void append(std::size_t stage, const std::string& metric, double value) {
    rows_.push_back(format_row({run_, stage, metric, value, digest_}));
  }

  void flush() {
    if (path_.empty() || rows_.empty()) return;
    std::ofstream f(path_, std::ios::app);
    if (!f) throw DataError("cannot open results log '" + path_ + "'");
    for (const auto& r : rows_) f << r << '\n';
    rows_.clear();
  }

  const std::string& run() const noexcept { return run_; }

 private:
  std::string path_;
  std::string run_;
  std::string digest_;
  std::vector<std::string> rows_;
};

inline std::vector<ResultRow> read_results(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<ResultRow> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(parse_row(line));
  return out;
}

// Stage rows for one training run: accuracy, routing accuracy, per-epoch
// loss traces and the bottleneck proxies; then the summary metrics.
inline void log_run(ResultsLog& log, const TrainingRun& run, const MetricsReport& report) {
  for (std::size_t b = 0; b < run.stages.size(); ++b) {
    const StageRecord& s = run.stages[b];
    const std::size_t stage = b + 1;
    log.append(stage, "accuracy", s.eval.accuracy);
    log.append(stage, "routing_accuracy", s.eval.routing_accuracy);
    for (std::size_t e = 0; e < s.trace.size(); ++e) {
      const std::string ep = "epoch" + std::to_string(e + 1);
      log.append(stage, "loss_int/" + ep, s.trace[e].mean.l_int);
      log.append(stage, "loss_comp/" + ep, s.trace[e].mean.l_comp);
      log.append(stage, "loss_cont/" + ep, s.trace[e].mean.l_cont);
      log.append(stage, "loss_total/" + ep, s.trace[e].mean.total);
    }
    if (s.vib) {
      log.append(stage, "vib_i_zy", s.vib->i_zy);
      log.append(stage, "vib_i_zx", s.vib->i_zx);
    }
  }
  for (std::size_t j = 0; j < report.forgetting.size(); ++j) log.append(j + 1, "forgetting", report.forgetting[j]);
  log.append(run.stages.size(), "average_accuracy", report.average);
  log.append(run.stages.size(), "last_accuracy", report.last);
}

}  // namespace area
