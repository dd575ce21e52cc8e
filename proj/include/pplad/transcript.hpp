#pragma once

#include <algorithm>
#include <compare>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "pplad/error.hpp"
#include "pplad/io.hpp"

namespace pplad {

enum class Label { AD, HC };
enum class Gender { M, F };

inline std::string_view to_string(Label l) { return l == Label::AD ? "AD" : "HC"; }
inline std::string_view to_string(Gender g) { return g == Gender::M ? "M" : "F"; }

inline std::optional<Label> parse_label(std::string_view s) {
  if (s == "AD" || s == "ad" || s == "1") return Label::AD;
  if (s == "HC" || s == "hc" || s == "C" || s == "0") return Label::HC;
  return std::nullopt;
}

inline std::optional<Gender> parse_gender(std::string_view s) {
  if (s == "M" || s == "m" || s == "male") return Gender::M;
  if (s == "F" || s == "f" || s == "female") return Gender::F;
  return std::nullopt;
}

struct TranscriptRef {
  std::string subject_id;
  std::string session_id;

  auto operator<=>(const TranscriptRef&) const = default;
  std::string str() const { return subject_id + "/" + session_id; }
};

struct SubjectMeta {
  std::string subject_id;
  int age = 0;
  Gender gender = Gender::M;
  std::optional<int> education;
  std::optional<int> mmse;
  Label label = Label::HC;

  bool operator==(const SubjectMeta&) const = default;
};

struct RawTranscript {
  std::string subject_id;
  std::string session_id;
  std::string raw_text;

  bool operator==(const RawTranscript&) const = default;
  TranscriptRef ref() const { return {subject_id, session_id}; }
};

struct Transcript {
  std::string subject_id;
  std::string session_id;
  std::string text;
  std::vector<std::string> tokens;

  std::size_t n_tokens() const { return tokens.size(); }
  TranscriptRef ref() const { return {subject_id, session_id}; }
  bool operator==(const Transcript&) const = default;
};

inline constexpr std::string_view kSentenceEnd = ".";

inline bool is_allowed_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
         c == ' ' || c == '\t' || c == '\n' || c == '.' || c == '\'';
}

// Whitespace split. Normalized text already has full stops detached, so this
// is the exact inverse of joining tokens with single spaces.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t' || text[i] == '\n')) ++i;
    const auto start = i;
    while (i < text.size() && text[i] != ' ' && text[i] != '\t' && text[i] != '\n') ++i;
    if (i > start) tokens.emplace_back(text.substr(start, i - start));
  }
  return tokens;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

/// IPA symbol (any non-ASCII sequence) to Latin replacement. Matching is
/// longest-key-first at each position.
class IpaMap {
 public:
  IpaMap() = default;
  explicit IpaMap(std::map<std::string, std::string> entries) : entries_(std::move(entries)) {
    for (const auto& [k, v] : entries_) max_key_ = std::max(max_key_, k.size());
  }

  void add(std::string symbol, std::string replacement) {
    max_key_ = std::max(max_key_, symbol.size());
    entries_[std::move(symbol)] = std::move(replacement);
  }

  std::size_t size() const { return entries_.size(); }

  // Returns (replacement, matched length) for the longest key at `pos`.
  std::optional<std::pair<std::string_view, std::size_t>> match(std::string_view text,
                                                                std::size_t pos) const {
    const auto limit = std::min(max_key_, text.size() - pos);
    for (auto len = limit; len > 0; --len) {
      auto it = entries_.find(std::string(text.substr(pos, len)));
      if (it != entries_.end()) return std::pair<std::string_view, std::size_t>{it->second, len};
    }
    return std::nullopt;
  }

  // Two-column UTF-8 file, tab separated: symbol, replacement. The
  // replacement may be empty. '#' starts a comment line.
  static IpaMap load(const std::filesystem::path& path) {
    IpaMap map;
    std::size_t line_no = 0;
    for (const auto& line : io::lines(io::read_file(path))) {
      ++line_no;
      if (io::trim(line).empty() || line.front() == '#') continue;
      auto fields = io::split(line, '\t');
      if (fields.size() > 2 || fields[0].empty()) {
        fail(ErrorCode::MalformedManifest,
             path.string() + ":" + std::to_string(line_no) + ": expected 'symbol<TAB>replacement'");
      }
      map.add(fields[0], fields.size() == 2 ? fields[1] : std::string());
    }
    return map;
  }

 private:
  std::map<std::string, std::string> entries_;
  std::size_t max_key_ = 0;
};

namespace detail {

inline bool starts_with(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }

// Keeps participant tiers; drops headers, dependent tiers and interviewer
// tiers. Plain (non-CHAT) text passes through unchanged.
inline std::string select_participant_speech(std::string_view raw) {
  std::string out;
  bool keep = true;
  for (const auto& line : io::lines(raw)) {
    std::string_view body = line;
    if (!line.empty() && (line.front() == '\t' || line.front() == ' ')) {
      // continuation of the previous tier
    } else if (!line.empty() && (line.front() == '@' || line.front() == '%')) {
      keep = false;
      continue;
    } else if (!line.empty() && line.front() == '*') {
      const auto colon = line.find(':');
      const auto speaker = std::string_view(line).substr(1, colon == std::string::npos ? 0 : colon - 1);
      keep = speaker != "INV";
      body = colon == std::string::npos ? std::string_view{} : std::string_view(line).substr(colon + 1);
    } else {
      keep = true;
    }
    if (!keep) continue;
    out += body;
    out += ' ';
  }
  return out;
}

inline std::string strip_bracketed(std::string_view s) {
  std::string out;
  int depth = 0;
  bool in_bullet = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (c == '\x15') {  // CHAT media bullet: \x15start_end\x15
      in_bullet = !in_bullet;
      out += ' ';
      continue;
    }
    if (in_bullet) continue;
    if (c == '[') {
      ++depth;
      continue;
    }
    if (c == ']' && depth > 0) {
      --depth;
      out += ' ';
      continue;
    }
    if (depth > 0) continue;
    if (c == '<' || c == '>') {
      out += ' ';
      continue;
    }
    // pause markers: (.) (..) (...) (1.5) (2:03.5)
    if (c == '(') {
      std::size_t j = i + 1;
      while (j < s.size() && (s[j] == '.' || s[j] == ':' || (s[j] >= '0' && s[j] <= '9'))) ++j;
      if (j < s.size() && s[j] == ')' && j > i + 1) {
        out += ' ';
        i = j;
        continue;
      }
    }
    out += c;
  }
  return out;
}

inline bool is_placeholder(std::string_view word) {
  const auto base = word.substr(0, word.find('@'));
  if (base == "xxx" || base == "yyy" || base == "www" || base == "XXX" || base == "YYY" || base == "WWW")
    return true;
  // "0word" marks an omitted word that was not spoken
  return word.size() > 1 && word[0] == '0' &&
         ((word[1] >= 'a' && word[1] <= 'z') || (word[1] >= 'A' && word[1] <= 'Z'));
}

inline std::string strip_word_codes(std::string_view s) {
  std::string out;
  for (auto& word : tokenize(s)) {
    std::string_view w = word;
    if (starts_with(w, "&=") || starts_with(w, "&*")) continue;  // events, interposed speaker
    if (starts_with(w, "&")) {
      w.remove_prefix(1);
      if (!w.empty() && (w.front() == '-' || w.front() == '+')) w.remove_prefix(1);
    }
    if (w.empty() || w.front() == '+') continue;  // utterance linkers and terminators
    if (is_placeholder(w)) continue;
    if (auto at = w.find('@'); at != std::string_view::npos) w = w.substr(0, at);
    std::string cleaned(w);
    std::replace(cleaned.begin(), cleaned.end(), '_', ' ');
    out += cleaned;
    out += ' ';
  }
  return out;
}

inline std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}

inline std::string substitute_ipa(std::string_view s, const IpaMap& ipa) {
  std::string out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (c < 0x80) {
      out += s[i++];
      continue;
    }
    if (auto m = ipa.match(s, i)) {
      out += m->first;
      i += m->second;
      continue;
    }
    const auto len = std::min(utf8_length(c), s.size() - i);
    fail(ErrorCode::UnknownIpaSymbol, "symbol '" + std::string(s.substr(i, len)) +
                                          "' not present in the IPA map");
  }
  return out;
}

}  // namespace detail

/// Strips CHAT annotation, maps IPA symbols and reduces the text to
/// letters, digits, full stops and apostrophes. Full stops become their own
/// tokens (sentence boundaries); runs of them collapse to one.
inline Transcript normalize(const RawTranscript& raw, const IpaMap& ipa_map) {
  if (raw.raw_text.empty()) {
    fail(ErrorCode::EmptyAfterNormalization, raw.subject_id + "/" + raw.session_id + ": empty raw text");
  }
  auto text = detail::select_participant_speech(raw.raw_text);
  text = detail::strip_bracketed(text);
  text = detail::strip_word_codes(text);
  text = detail::substitute_ipa(text, ipa_map);

  std::string cleaned;
  cleaned.reserve(text.size());
  for (char c : text) {
    if (!is_allowed_char(c)) continue;
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    if (c == '.') {
      cleaned += " . ";
      continue;
    }
    cleaned += c;
  }

  Transcript out{raw.subject_id, raw.session_id, {}, {}};
  bool has_word = false;
  for (auto& tok : tokenize(cleaned)) {
    if (tok == kSentenceEnd) {
      if (out.tokens.empty() || out.tokens.back() == kSentenceEnd) continue;
    } else {
      if (tok.find_first_not_of('\'') == std::string::npos) continue;
      if (detail::is_placeholder(tok)) continue;
      has_word = true;
    }
    out.tokens.push_back(std::move(tok));
  }
  if (!has_word) {
    fail(ErrorCode::EmptyAfterNormalization,
         raw.subject_id + "/" + raw.session_id + ": nothing left after removing annotations");
  }
  out.text = join_tokens(out.tokens);
  return out;
}

/// Rebuilds a Transcript from already-normalized text.
inline Transcript transcript_from_text(std::string subject_id, std::string session_id, std::string text) {
  Transcript t{std::move(subject_id), std::move(session_id), std::move(text), {}};
  t.tokens = tokenize(t.text);
  return t;
}

// ---------------------------------------------------------------------------
// Corpus manifest

struct CorpusEntry {
  RawTranscript raw;
  SubjectMeta meta;
  std::filesystem::path source;

  bool operator==(const CorpusEntry& o) const { return raw == o.raw && meta == o.meta; }
};

struct LabeledTranscript {
  Transcript transcript;
  SubjectMeta meta;

  TranscriptRef ref() const { return transcript.ref(); }
  bool operator==(const LabeledTranscript&) const = default;
};

inline const SubjectMeta& record_meta(const CorpusEntry& e) { return e.meta; }
inline std::string_view record_session(const CorpusEntry& e) { return e.raw.session_id; }
inline const SubjectMeta& record_meta(const LabeledTranscript& e) { return e.meta; }
inline std::string_view record_session(const LabeledTranscript& e) { return e.transcript.session_id; }

namespace detail {

inline std::optional<int> optional_int_field(std::string_view s, const std::string& what,
                                             const std::string& where) {
  if (s.empty() || s == "NA" || s == "na" || s == "-") return std::nullopt;
  auto v = io::parse_int(s);
  if (!v) fail(ErrorCode::MalformedManifest, where + ": " + what + " '" + std::string(s) + "' is not an integer");
  return static_cast<int>(*v);
}

inline SubjectMeta parse_meta_row(const io::Table& t, const std::vector<std::string>& row,
                                  const std::string& where) {
  auto get = [&](std::string_view name) -> std::string {
    auto idx = t.column(name);
    return idx ? row[*idx] : std::string();
  };
  SubjectMeta m;
  m.subject_id = get("subject_id");
  if (m.subject_id.empty()) fail(ErrorCode::MalformedManifest, where + ": empty subject_id");

  const auto age = optional_int_field(get("age"), "age", where);
  const auto gender = parse_gender(get("gender"));
  const auto label = parse_label(get("label"));
  if (!age || !gender || !label) {
    fail(ErrorCode::MetadataMissing, where + ": subject '" + m.subject_id + "' lacks age, gender or label");
  }
  if (*age < 0) fail(ErrorCode::MalformedManifest, where + ": negative age");
  m.age = *age;
  m.gender = *gender;
  m.label = *label;
  m.education = optional_int_field(get("education"), "education", where);
  if (m.education && *m.education < 0) fail(ErrorCode::MalformedManifest, where + ": negative education");
  m.mmse = optional_int_field(get("mmse"), "mmse", where);
  if (m.mmse && (*m.mmse < 0 || *m.mmse > 30)) {
    fail(ErrorCode::MalformedManifest, where + ": mmse " + std::to_string(*m.mmse) + " outside [0, 30]");
  }
  return m;
}

}  // namespace detail

/// Reads a tab-separated manifest with columns subject_id, session_id, path
/// and, unless `metadata_path` is given, age, gender, education, mmse, label.
/// Paths are resolved against the manifest's directory.
inline std::vector<CorpusEntry> parse_corpus(const std::filesystem::path& manifest_path,
                                             const std::optional<std::filesystem::path>& metadata_path = {}) {
  const auto table = io::read_table(manifest_path, '\t', ErrorCode::MalformedManifest);
  const auto ctx = manifest_path.string();
  const auto c_subject = table.require_column("subject_id", ErrorCode::MalformedManifest, ctx);
  const auto c_session = table.require_column("session_id", ErrorCode::MalformedManifest, ctx);
  const auto c_path = table.require_column("path", ErrorCode::MalformedManifest, ctx);

  std::map<std::string, SubjectMeta> external;
  if (metadata_path) {
    const auto meta = io::read_table(*metadata_path, '\t', ErrorCode::MalformedManifest);
    std::size_t row_no = 1;
    for (const auto& row : meta.rows) {
      ++row_no;
      auto m = detail::parse_meta_row(meta, row, metadata_path->string() + ":" + std::to_string(row_no));
      if (!external.emplace(m.subject_id, m).second) {
        fail(ErrorCode::MalformedManifest, metadata_path->string() + ": subject '" + m.subject_id + "' listed twice");
      }
    }
  }

  const auto base = manifest_path.parent_path();
  std::vector<CorpusEntry> out;
  std::set<TranscriptRef> seen;
  std::map<std::string, SubjectMeta> subjects;
  std::size_t row_no = 1;
  for (const auto& row : table.rows) {
    ++row_no;
    const auto where = ctx + ":" + std::to_string(row_no);
    CorpusEntry e;
    e.raw.subject_id = row[c_subject];
    e.raw.session_id = row[c_session];
    if (e.raw.subject_id.empty() || e.raw.session_id.empty()) {
      fail(ErrorCode::MalformedManifest, where + ": empty subject_id or session_id");
    }
    if (!seen.insert(e.raw.ref()).second) {
      fail(ErrorCode::DuplicateSession, where + ": " + e.raw.ref().str() + " listed twice");
    }
    if (metadata_path) {
      auto it = external.find(e.raw.subject_id);
      if (it == external.end()) {
        fail(ErrorCode::MetadataMissing, where + ": subject '" + e.raw.subject_id + "' not in metadata file");
      }
      e.meta = it->second;
    } else {
      e.meta = detail::parse_meta_row(table, row, where);
    }
    if (auto [it, inserted] = subjects.emplace(e.meta.subject_id, e.meta); !inserted && !(it->second == e.meta)) {
      fail(ErrorCode::MalformedManifest, where + ": conflicting metadata for subject '" + e.meta.subject_id + "'");
    }
    std::filesystem::path p = row[c_path];
    e.source = p.is_absolute() ? p : base / p;
    e.raw.raw_text = io::read_file(e.source);
    if (io::trim(e.raw.raw_text).empty()) fail(ErrorCode::MalformedManifest, where + ": raw transcript is empty");
    out.push_back(std::move(e));
  }
  return out;
}

inline std::string format_optional(const std::optional<int>& v) { return v ? std::to_string(*v) : std::string(); }

inline void write_manifest(const std::vector<CorpusEntry>& corpus, const std::filesystem::path& manifest_path) {
  io::Table t;
  t.header = {"subject_id", "session_id", "path", "age", "gender", "education", "mmse", "label"};
  const auto base = manifest_path.parent_path().empty() ? std::filesystem::path(".") : manifest_path.parent_path();
  for (const auto& e : corpus) {
    t.rows.push_back({e.raw.subject_id, e.raw.session_id,
                      std::filesystem::proximate(e.source, base).generic_string(), std::to_string(e.meta.age),
                      std::string(to_string(e.meta.gender)), format_optional(e.meta.education),
                      format_optional(e.meta.mmse), std::string(to_string(e.meta.label))});
  }
  io::write_file(manifest_path, io::render_table(t, '\t'));
}

inline std::vector<LabeledTranscript> normalize_corpus(const std::vector<CorpusEntry>& corpus, const IpaMap& ipa) {
  std::vector<LabeledTranscript> out;
  out.reserve(corpus.size());
  for (const auto& e : corpus) out.push_back({normalize(e.raw, ipa), e.meta});
  return out;
}

// ---------------------------------------------------------------------------
// Normalized corpus file: one JSON object per line.

inline nlohmann::json to_json(const LabeledTranscript& t) {
  nlohmann::json j;
  j["subject_id"] = t.transcript.subject_id;
  j["session_id"] = t.transcript.session_id;
  j["label"] = to_string(t.meta.label);
  j["age"] = t.meta.age;
  j["gender"] = to_string(t.meta.gender);
  j["education"] = t.meta.education ? nlohmann::json(*t.meta.education) : nlohmann::json(nullptr);
  j["mmse"] = t.meta.mmse ? nlohmann::json(*t.meta.mmse) : nlohmann::json(nullptr);
  j["text"] = t.transcript.text;
  return j;
}

inline void write_transcripts(const std::vector<LabeledTranscript>& corpus, const std::filesystem::path& path) {
  std::string out;
  for (const auto& t : corpus) {
    out += to_json(t).dump();
    out += '\n';
  }
  io::write_file(path, out);
}

inline std::vector<LabeledTranscript> read_transcripts(const std::filesystem::path& path) {
  std::vector<LabeledTranscript> out;
  std::set<TranscriptRef> seen;
  std::map<std::string, SubjectMeta> subjects;
  std::size_t line_no = 0;
  for (const auto& line : io::lines(io::read_file(path))) {
    ++line_no;
    if (io::trim(line).empty()) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    try {
      const auto j = nlohmann::json::parse(line);
      LabeledTranscript t;
      t.meta.subject_id = j.at("subject_id").get<std::string>();
      auto label = parse_label(j.at("label").get<std::string>());
      auto gender = parse_gender(j.at("gender").get<std::string>());
      if (!label || !gender) fail(ErrorCode::MalformedManifest, where + ": bad label or gender");
      t.meta.label = *label;
      t.meta.gender = *gender;
      t.meta.age = j.at("age").get<int>();
      if (j.contains("education") && !j["education"].is_null()) t.meta.education = j["education"].get<int>();
      if (j.contains("mmse") && !j["mmse"].is_null()) t.meta.mmse = j["mmse"].get<int>();
      if (t.meta.mmse && (*t.meta.mmse < 0 || *t.meta.mmse > 30)) {
        fail(ErrorCode::MalformedManifest, where + ": mmse outside [0, 30]");
      }
      t.transcript = transcript_from_text(t.meta.subject_id, j.at("session_id").get<std::string>(),
                                          j.at("text").get<std::string>());
      if (t.transcript.tokens.empty()) fail(ErrorCode::MalformedManifest, where + ": empty text");
      if (!seen.insert(t.ref()).second) fail(ErrorCode::DuplicateSession, where + ": " + t.ref().str());
      if (auto [it, ins] = subjects.emplace(t.meta.subject_id, t.meta); !ins && !(it->second == t.meta)) {
        fail(ErrorCode::MalformedManifest, where + ": conflicting metadata for subject '" + t.meta.subject_id + "'");
      }
      out.push_back(std::move(t));
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorCode::MalformedManifest, where + ": " + ex.what());
    }
  }
  return out;
}

}  // namespace pplad
