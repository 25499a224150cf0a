#pragma once

// File formats. Binary embeddings ("EMB1"), tab-separated metadata, trial
// lists, score files, pseudo-label files and KNN graph edge lists.
//
// EMB1 layout, all integers little-endian:
//   magic "EMB1" | u32 dim | u32 count |
//   count x ( u16 id_len | id bytes (UTF-8) | dim x f32 )

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "spkback/embed.hpp"
#include "spkback/error.hpp"
#include "spkback/partition.hpp"

namespace spkback {

struct TrialRecord {
  std::string enroll;
  std::string test;
  std::optional<bool> target;

  friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

struct ScoredTrial {
  std::string enroll;
  std::string test;
  double score = 0.0;
  std::optional<bool> target;
};

namespace detail {

inline std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::vector<std::string> split_tab(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Lines of a text file with trailing CR stripped and blank lines dropped.
inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    lines.push_back(std::move(line));
  }
  if (in.bad()) throw IoError("read failure on '" + path + "'");
  return lines;
}

inline double parse_double(const std::string& text, const std::string& context) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (!text.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw ValidationError("malformed number '" + text + "' in " + context);
  }
  return value;
}

inline std::ofstream open_out(const std::string& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  return out;
}

inline void finish(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw IoError("write failure on '" + path + "'");
}

inline void put_u16(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>(v >> 8));
}

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) buf.push_back(static_cast<char>((v >> s) & 0xff));
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError("truncated file '" + path_ + "'");
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint8_t>(bytes_[pos_]) |
                      static_cast<std::uint16_t>(static_cast<std::uint8_t>(bytes_[pos_ + 1]) << 8);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) {
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_ + k])) << (8 * k);
    }
    pos_ += 4;
    return v;
  }
  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  const std::string& path_;
  std::size_t pos_ = 0;
};

inline std::string format_fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Embeddings

inline void write_embeddings(const EmbeddingSet& set, const std::string& path) {
  if (set.dim() == 0) throw ValidationError("embedding set has no dimension");
  std::string buf = "EMB1";
  detail::put_u32(buf, static_cast<std::uint32_t>(set.dim()));
  detail::put_u32(buf, static_cast<std::uint32_t>(set.size()));
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& id = set.id(i);
    if (id.size() > 0xffff) throw ValidationError("utterance id longer than 65535 bytes");
    detail::put_u16(buf, static_cast<std::uint16_t>(id.size()));
    buf += id;
    for (double x : set.row(i)) detail::put_u32(buf, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
  }
  auto out = detail::open_out(path, true);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  detail::finish(out, path);
}

inline EmbeddingSet read_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  detail::ByteReader r(bytes, path);
  if (bytes.size() < 4 || bytes.compare(0, 4, "EMB1") != 0) throw IoError("bad magic in '" + path + "'");
  r.take(4);
  const std::uint32_t dim = r.u32();
  const std::uint32_t count = r.u32();
  if (dim == 0) throw IoError("zero dimension in '" + path + "'");
  EmbeddingSet set(dim);
  Vector row(dim);
  for (std::uint32_t n = 0; n < count; ++n) {
    const std::uint16_t len = r.u16();
    std::string id = r.take(len);
    for (auto& x : row) x = static_cast<double>(std::bit_cast<float>(r.u32()));
    if (set.contains(id)) throw IoError("duplicate id '" + id + "' in '" + path + "'");
    set.add(std::move(id), row);
  }
  if (!r.done()) throw IoError("trailing bytes after " + std::to_string(count) + " records in '" + path + "'");
  return set;
}

// ---------------------------------------------------------------------------
// Metadata: id \t duration_s \t snr_db [\t speaker]; '#' lines are comments.

inline MetadataMap parse_metadata_lines(const std::vector<std::string>& lines) {
  MetadataMap out;
  for (const auto& line : lines) {
    if (line.front() == '#') continue;
    auto cols = detail::split_tab(line);
    if (cols.size() < 3 || cols.size() > 4 || cols[0].empty()) {
      throw ValidationError("malformed metadata row: '" + line + "'");
    }
    UtteranceMetadata m;
    m.id = cols[0];
    m.duration = detail::parse_double(cols[1], "metadata duration");
    m.snr = detail::parse_double(cols[2], "metadata snr");
    if (!(m.duration > 0.0)) throw ValidationError("non-positive duration for '" + m.id + "'");
    if (cols.size() == 4 && !cols[3].empty()) m.speaker = cols[3];
    if (out.contains(m.id)) throw ValidationError("duplicate metadata id '" + m.id + "'");
    out.emplace(m.id, std::move(m));
  }
  return out;
}

inline MetadataMap read_metadata(const std::string& path) {
  return parse_metadata_lines(detail::read_lines(path));
}

inline void write_metadata(const MetadataMap& meta, const std::string& path) {
  auto out = detail::open_out(path);
  for (const auto& [id, m] : meta) {
    out << id << '\t' << detail::format_g17(m.duration) << '\t' << detail::format_g17(m.snr);
    if (m.speaker) out << '\t' << *m.speaker;
    out << '\n';
  }
  detail::finish(out, path);
}

// ---------------------------------------------------------------------------
// Trials: "enroll test [label]", label in {1, 0, target, nontarget}.

inline TrialRecord parse_trial_line(const std::string& line) {
  auto cols = detail::split_ws(line);
  if (cols.size() != 2 && cols.size() != 3) throw ValidationError("malformed trial line: '" + line + "'");
  TrialRecord t{cols[0], cols[1], std::nullopt};
  if (cols.size() == 3) {
    if (cols[2] == "1" || cols[2] == "target") {
      t.target = true;
    } else if (cols[2] == "0" || cols[2] == "nontarget") {
      t.target = false;
    } else {
      throw ValidationError("unknown trial label '" + cols[2] + "'");
    }
  }
  return t;
}

inline std::vector<TrialRecord> read_trials(const std::string& path) {
  std::vector<TrialRecord> out;
  for (const auto& line : detail::read_lines(path)) out.push_back(parse_trial_line(line));
  return out;
}

inline void write_trials(const std::vector<TrialRecord>& trials, const std::string& path) {
  auto out = detail::open_out(path);
  for (const auto& t : trials) {
    out << t.enroll << ' ' << t.test;
    if (t.target) out << ' ' << (*t.target ? "target" : "nontarget");
    out << '\n';
  }
  detail::finish(out, path);
}

// ---------------------------------------------------------------------------
// Scores: "enroll test score" with six decimals.

inline std::string format_score_line(const ScoredTrial& s) {
  return s.enroll + ' ' + s.test + ' ' + detail::format_fixed6(s.score);
}

inline void write_scores(const std::vector<ScoredTrial>& scores, const std::string& path) {
  auto out = detail::open_out(path);
  for (const auto& s : scores) out << format_score_line(s) << '\n';
  detail::finish(out, path);
}

inline std::vector<ScoredTrial> read_scores(const std::string& path) {
  std::vector<ScoredTrial> out;
  for (const auto& line : detail::read_lines(path)) {
    auto cols = detail::split_ws(line);
    if (cols.size() != 3) throw ValidationError("malformed score line: '" + line + "'");
    out.push_back({cols[0], cols[1], detail::parse_double(cols[2], "score file"), std::nullopt});
  }
  return out;
}

/// Attaches labels from a trial list to scores by matching (enroll, test)
/// keys in order of occurrence. Every trial must have exactly one score.
inline std::vector<ScoredTrial> attach_labels(const std::vector<TrialRecord>& trials,
                                              const std::vector<ScoredTrial>& scores) {
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> pending;
  for (std::size_t i = scores.size(); i-- > 0;) pending[{scores[i].enroll, scores[i].test}].push_back(i);
  std::vector<ScoredTrial> out;
  out.reserve(trials.size());
  for (const auto& t : trials) {
    auto it = pending.find({t.enroll, t.test});
    if (it == pending.end() || it->second.empty()) {
      throw ValidationError("no score for trial " + t.enroll + " " + t.test);
    }
    ScoredTrial s = scores[it->second.back()];
    it->second.pop_back();
    s.target = t.target;
    out.push_back(std::move(s));
  }
  for (const auto& [key, left] : pending) {
    if (!left.empty()) throw ValidationError("score for " + key.first + " " + key.second + " has no trial");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pseudo labels: "utterance-id \t cluster-id", dense ids by descending size.

inline void write_labels(const Partition& partition, const std::string& path) {
  auto out = detail::open_out(path);
  const Partition canonical = partition.canonical();
  for (const auto& [id, label] : canonical.assignment()) out << id << '\t' << label << '\n';
  detail::finish(out, path);
}

inline Partition read_labels(const std::string& path) {
  Partition p;
  for (const auto& line : detail::read_lines(path)) {
    auto cols = detail::split_tab(line);
    if (cols.size() != 2 || cols[0].empty()) throw ValidationError("malformed label line: '" + line + "'");
    if (p.label_of(cols[0])) throw ValidationError("duplicate id '" + cols[0] + "' in label file");
    int label = 0;
    auto [ptr, ec] = std::from_chars(cols[1].data(), cols[1].data() + cols[1].size(), label);
    if (ec != std::errc() || ptr != cols[1].data() + cols[1].size()) {
      throw ValidationError("malformed cluster id '" + cols[1] + "'");
    }
    p.assign(cols[0], label);
  }
  return p;
}

}  // namespace spkback
