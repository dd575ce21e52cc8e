#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "pplad/error.hpp"
#include "pplad/io.hpp"
#include "pplad/transcript.hpp"

namespace pplad {

enum class ModelId { AD, C };

inline std::string_view to_string(ModelId m) { return m == ModelId::AD ? "AD" : "C"; }

inline std::optional<ModelId> parse_model_id(std::string_view s) {
  if (s == "AD") return ModelId::AD;
  if (s == "C") return ModelId::C;
  return std::nullopt;
}

struct TokenScores {
  TranscriptRef ref;
  ModelId model_id = ModelId::AD;
  std::int64_t seed = 0;
  std::vector<double> logprobs;  // natural log, one per scored token

  std::size_t n_tokens() const { return logprobs.size(); }
  bool operator==(const TokenScores&) const = default;
};

struct Smoothing {
  enum class Kind { AddK, WittenBell };
  Kind kind = Kind::WittenBell;
  double k = 1.0;  // AddK only

  static Smoothing add_k(double k) { return {Kind::AddK, k}; }
  static Smoothing witten_bell() { return {Kind::WittenBell, 0.0}; }
  bool operator==(const Smoothing&) const = default;
};

struct NgramOptions {
  int order = 3;
  Smoothing smoothing = Smoothing::witten_bell();
  // Training types seen fewer than this many times are folded into <unk>.
  // 2 folds singletons; 1 keeps every training type.
  int unk_min_count = 2;
  std::int64_t seed = 0;  // reserved for subsampling; counting ignores it
};

/// Word n-gram model over sentences delimited by full-stop tokens. Each
/// sentence is padded with (order - 1) <s> tokens; the full stop itself is
/// predicted like any other token, and the context resets after it.
class NgramModel {
 public:
  using TokenId = std::int32_t;
  using Context = std::vector<TokenId>;

  static constexpr TokenId kUnk = 0;
  static constexpr TokenId kBos = 1;
  static constexpr std::string_view kUnkToken = "<unk>";
  static constexpr std::string_view kBosToken = "<s>";

  struct Followers {
    std::uint64_t total = 0;
    std::map<TokenId, std::uint64_t> next;
    bool operator==(const Followers&) const = default;
  };

  int order() const { return order_; }
  const Smoothing& smoothing() const { return smoothing_; }
  int unk_min_count() const { return unk_min_count_; }
  std::size_t vocab_size() const { return vocab_.size(); }
  const std::vector<std::string>& vocabulary() const { return vocab_; }

  TokenId id_of(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
  }

  /// P(token | context). `context` holds the most recent tokens, oldest
  /// first; only the last (order - 1) entries are used and shorter contexts
  /// are treated as sentence-initial (left-padded with <s>).
  double prob(TokenId token, std::span<const TokenId> context) const {
    const auto h = static_cast<std::size_t>(order_ - 1);
    Context ctx(h, kBos);
    const auto take = std::min(h, context.size());
    std::copy(context.end() - static_cast<std::ptrdiff_t>(take), context.end(), ctx.end() - static_cast<std::ptrdiff_t>(take));
    return prob_full(token, ctx);
  }

  double prob(std::string_view token, const std::vector<std::string>& context) const {
    std::vector<TokenId> ids;
    for (const auto& c : context) ids.push_back(c == kBosToken ? kBos : id_of(c));
    return prob(id_of(token), ids);
  }

  const std::vector<std::map<Context, Followers>>& counts() const { return levels_; }

  bool operator==(const NgramModel&) const = default;

  template <class Fn>
  void for_each_event(const std::vector<std::string>& tokens, Fn&& fn) const {
    const auto h = static_cast<std::size_t>(order_ - 1);
    Context history(h, kBos);
    for (const auto& tok : tokens) {
      const TokenId id = id_of(tok);
      fn(id, history);
      if (h > 0) {
        history.erase(history.begin());
        history.push_back(id);
      }
      if (tok == kSentenceEnd) std::fill(history.begin(), history.end(), kBos);
    }
  }

  friend NgramModel train_ngram(const std::vector<Transcript>& transcripts, const NgramOptions& options);
  friend NgramModel load_ngram(const std::filesystem::path& path);
  friend NgramModel parse_ngram(std::string_view text, const std::string& context);

 private:
  double prob_full(TokenId token, const Context& ctx) const {
    const double v = static_cast<double>(vocab_.size());
    if (smoothing_.kind == Smoothing::Kind::AddK) {
      const auto& level = levels_[ctx.size()];
      auto it = level.find(ctx);
      double c_hw = 0, c_h = 0;
      if (it != level.end()) {
        c_h = static_cast<double>(it->second.total);
        auto jt = it->second.next.find(token);
        if (jt != it->second.next.end()) c_hw = static_cast<double>(jt->second);
      }
      return (c_hw + smoothing_.k) / (c_h + smoothing_.k * v);
    }
    // Interpolated Witten-Bell, recursing from the uniform distribution.
    double p = 1.0 / v;
    for (std::size_t len = 0; len <= ctx.size(); ++len) {
      const Context sub(ctx.end() - static_cast<std::ptrdiff_t>(len), ctx.end());
      const auto& level = levels_[len];
      auto it = level.find(sub);
      if (it == level.end() || it->second.total == 0) continue;
      const double c_h = static_cast<double>(it->second.total);
      const double types = static_cast<double>(it->second.next.size());
      double c_hw = 0;
      if (auto jt = it->second.next.find(token); jt != it->second.next.end()) c_hw = static_cast<double>(jt->second);
      p = (c_hw + types * p) / (c_h + types);
    }
    return p;
  }

  void rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < vocab_.size(); ++i) index_[vocab_[i]] = static_cast<TokenId>(i);
  }

  int order_ = 3;
  Smoothing smoothing_;
  int unk_min_count_ = 2;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, TokenId> index_;
  std::vector<std::map<Context, Followers>> levels_;  // indexed by context length
};

inline NgramModel train_ngram(const std::vector<Transcript>& transcripts, const NgramOptions& options) {
  if (options.order < 1) fail(ErrorCode::Config, "n-gram order must be >= 1");
  if (options.smoothing.kind == Smoothing::Kind::AddK && !(options.smoothing.k > 0)) {
    fail(ErrorCode::Config, "add-k smoothing requires k > 0");
  }
  std::size_t total_tokens = 0;
  std::map<std::string, std::uint64_t> type_counts;
  for (const auto& t : transcripts)
    for (const auto& tok : t.tokens) {
      ++type_counts[tok];
      ++total_tokens;
    }
  if (total_tokens == 0) fail(ErrorCode::EmptyTrainingSet, "no training tokens");

  NgramModel m;
  m.order_ = options.order;
  m.smoothing_ = options.smoothing;
  m.unk_min_count_ = options.unk_min_count;
  m.vocab_ = {std::string(NgramModel::kUnkToken), std::string(NgramModel::kBosToken)};
  for (const auto& [tok, c] : type_counts)
    if (c >= static_cast<std::uint64_t>(std::max(1, options.unk_min_count))) m.vocab_.push_back(tok);
  m.rebuild_index();
  m.levels_.assign(static_cast<std::size_t>(options.order), {});

  for (const auto& t : transcripts) {
    m.for_each_event(t.tokens, [&](NgramModel::TokenId id, const NgramModel::Context& history) {
      for (std::size_t len = 0; len < m.levels_.size(); ++len) {
        NgramModel::Context ctx(history.end() - static_cast<std::ptrdiff_t>(len), history.end());
        auto& f = m.levels_[len][ctx];
        ++f.total;
        ++f.next[id];
      }
    });
  }
  return m;
}

/// Per-token natural-log probabilities; out-of-vocabulary tokens score as <unk>.
inline TokenScores score(const NgramModel& model, const Transcript& transcript, ModelId model_id,
                         std::int64_t seed = 0) {
  if (transcript.tokens.empty()) fail(ErrorCode::InvalidScores, transcript.ref().str() + ": no tokens to score");
  TokenScores out{transcript.ref(), model_id, seed, {}};
  out.logprobs.reserve(transcript.tokens.size());
  model.for_each_event(transcript.tokens, [&](NgramModel::TokenId id, const NgramModel::Context& history) {
    out.logprobs.push_back(std::log(model.prob(id, history)));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Model file: line-oriented text, versioned.

inline std::string render_ngram(const NgramModel& m) {
  std::string out = "pplad-ngram 1\n";
  out += "order " + std::to_string(m.order()) + "\n";
  if (m.smoothing().kind == Smoothing::Kind::AddK) {
    out += "smoothing add_k " + io::format_double(m.smoothing().k) + "\n";
  } else {
    out += "smoothing witten_bell\n";
  }
  out += "unk_min_count " + std::to_string(m.unk_min_count()) + "\n";
  out += "vocab " + std::to_string(m.vocab_size()) + "\n";
  for (const auto& tok : m.vocabulary()) out += tok + "\n";
  for (std::size_t len = 0; len < m.counts().size(); ++len) {
    const auto& level = m.counts()[len];
    out += "level " + std::to_string(len) + " " + std::to_string(level.size()) + "\n";
    for (const auto& [ctx, f] : level) {
      std::string c;
      for (std::size_t i = 0; i < ctx.size(); ++i) c += (i ? " " : "") + std::to_string(ctx[i]);
      out += (c.empty() ? "-" : c) + "\t" + std::to_string(f.total) + "\t";
      bool first = true;
      for (const auto& [id, n] : f.next) {
        out += (first ? "" : " ") + std::to_string(id) + ":" + std::to_string(n);
        first = false;
      }
      out += "\n";
    }
  }
  return out;
}

inline void save_ngram(const NgramModel& m, const std::filesystem::path& path) { io::write_file(path, render_ngram(m)); }

inline NgramModel parse_ngram(std::string_view text, const std::string& context) {
  const auto ls = io::lines(text);
  std::size_t i = 0;
  auto bad = [&](const std::string& what) -> void {
    fail(ErrorCode::MalformedModel, context + ":" + std::to_string(i + 1) + ": " + what);
  };
  auto next = [&]() -> const std::string& {
    if (i >= ls.size()) bad("unexpected end of file");
    return ls[i++];
  };
  auto expect_kv = [&](std::string_view key) {
    auto f = io::split(next(), ' ');
    if (f.empty() || f[0] != key) bad("expected '" + std::string(key) + "'");
    return f;
  };
  auto to_int = [&](const std::string& s) {
    auto v = io::parse_int(s);
    if (!v) bad("bad integer '" + s + "'");
    return *v;
  };

  if (next() != "pplad-ngram 1") bad("unsupported model header");
  NgramModel m;
  auto f = expect_kv("order");
  m.order_ = static_cast<int>(to_int(f.at(1)));
  if (m.order_ < 1) bad("order must be >= 1");
  f = expect_kv("smoothing");
  if (f.size() == 3 && f[1] == "add_k") {
    auto k = io::parse_double(f[2]);
    if (!k || !(*k > 0)) bad("bad k");
    m.smoothing_ = Smoothing::add_k(*k);
  } else if (f.size() == 2 && f[1] == "witten_bell") {
    m.smoothing_ = Smoothing::witten_bell();
  } else {
    bad("unknown smoothing");
  }
  f = expect_kv("unk_min_count");
  m.unk_min_count_ = static_cast<int>(to_int(f.at(1)));
  f = expect_kv("vocab");
  const auto v = static_cast<std::size_t>(to_int(f.at(1)));
  for (std::size_t k = 0; k < v; ++k) m.vocab_.push_back(next());
  if (v < 2 || m.vocab_[0] != NgramModel::kUnkToken || m.vocab_[1] != NgramModel::kBosToken) bad("reserved tokens missing");
  m.rebuild_index();
  m.levels_.assign(static_cast<std::size_t>(m.order_), {});
  for (std::size_t len = 0; len < m.levels_.size(); ++len) {
    f = expect_kv("level");
    if (f.size() != 3 || static_cast<std::size_t>(to_int(f[1])) != len) bad("level out of order");
    const auto n = static_cast<std::size_t>(to_int(f[2]));
    for (std::size_t k = 0; k < n; ++k) {
      auto cols = io::split(next(), '\t');
      if (cols.size() != 3) bad("expected context<TAB>total<TAB>followers");
      NgramModel::Context ctx;
      if (cols[0] != "-")
        for (const auto& id : io::split(cols[0], ' ')) ctx.push_back(static_cast<NgramModel::TokenId>(to_int(id)));
      if (ctx.size() != len) bad("context length mismatch");
      NgramModel::Followers fol;
      fol.total = static_cast<std::uint64_t>(to_int(cols[1]));
      std::uint64_t sum = 0;
      for (const auto& pair : io::split(cols[2], ' ')) {
        auto kv = io::split(pair, ':');
        if (kv.size() != 2) bad("bad follower entry");
        const auto id = to_int(kv[0]);
        if (id < 0 || static_cast<std::size_t>(id) >= v) bad("token id out of range");
        const auto c = static_cast<std::uint64_t>(to_int(kv[1]));
        fol.next[static_cast<NgramModel::TokenId>(id)] = c;
        sum += c;
      }
      if (sum != fol.total) bad("follower counts do not sum to total");
      m.levels_[len][ctx] = std::move(fol);
    }
  }
  return m;
}

inline NgramModel load_ngram(const std::filesystem::path& path) { return parse_ngram(io::read_file(path), path.string()); }

// ---------------------------------------------------------------------------
// Score files: one JSON record per line,
// {subject_id, session_id, model_id, seed, n_tokens, logprobs}.

inline std::string render_score_record(const TokenScores& s, std::string_view config_hash = {}) {
  nlohmann::ordered_json j;
  j["subject_id"] = s.ref.subject_id;
  j["session_id"] = s.ref.session_id;
  j["model_id"] = to_string(s.model_id);
  j["seed"] = s.seed;
  j["n_tokens"] = s.n_tokens();
  j["logprobs"] = s.logprobs;
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  return j.dump();
}

inline void write_scores(const std::vector<TokenScores>& scores, const std::filesystem::path& path,
                         std::string_view config_hash = {}) {
  std::string out;
  for (const auto& s : scores) {
    out += render_score_record(s, config_hash);
    out += '\n';
  }
  io::write_file(path, out);
}

struct QuarantinedScores {
  TokenScores scores;
  std::string reason;
};

struct ScoreSet {
  std::vector<TokenScores> records;  // paired, ordered by (ref, seed, model_id)
  std::vector<QuarantinedScores> quarantined;

  const TokenScores* find(const TranscriptRef& ref, ModelId model, std::int64_t seed) const {
    auto key = [](const TokenScores& r) { return std::tie(r.ref, r.seed, r.model_id); };
    const std::tuple<const TranscriptRef&, const std::int64_t&, const ModelId&> want{ref, seed, model};
    auto it = std::lower_bound(records.begin(), records.end(), want,
                               [&](const TokenScores& r, const auto& w) { return key(r) < w; });
    return it != records.end() && key(*it) == want ? &*it : nullptr;
  }
};

namespace detail {

inline TokenScores parse_score_record(std::string_view line, const std::string& where) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::SchemaViolation, where + ": " + ex.what());
  }
  auto violation = [&](const std::string& what) { fail(ErrorCode::SchemaViolation, where + ": " + what); };
  if (!j.is_object()) violation("record is not an object");
  for (const char* key : {"subject_id", "session_id", "model_id", "seed", "n_tokens", "logprobs"})
    if (!j.contains(key)) violation(std::string("missing field '") + key + "'");
  if (!j["subject_id"].is_string() || j["subject_id"].get<std::string>().empty()) violation("subject_id must be a non-empty string");
  if (!j["session_id"].is_string() || j["session_id"].get<std::string>().empty()) violation("session_id must be a non-empty string");
  if (!j["model_id"].is_string()) violation("model_id must be a string");
  auto model = parse_model_id(j["model_id"].get<std::string>());
  if (!model) violation("model_id must be 'AD' or 'C'");
  if (!j["seed"].is_number_integer()) violation("seed must be an integer");
  if (!j["n_tokens"].is_number_integer() || j["n_tokens"].get<long long>() < 1) violation("n_tokens must be a positive integer");
  if (!j["logprobs"].is_array()) violation("logprobs must be an array");
  TokenScores s;
  s.ref = {j["subject_id"].get<std::string>(), j["session_id"].get<std::string>()};
  s.model_id = *model;
  s.seed = j["seed"].get<std::int64_t>();
  for (const auto& v : j["logprobs"]) {
    if (!v.is_number()) violation("logprobs must contain numbers only");
    const double lp = v.get<double>();
    if (!std::isfinite(lp)) violation("non-finite logprob");
    if (lp > 0) fail(ErrorCode::PositiveLogProb, where + ": logprob " + io::format_double(lp) + " > 0");
    s.logprobs.push_back(lp);
  }
  if (static_cast<long long>(s.logprobs.size()) != j["n_tokens"].get<long long>()) {
    violation("n_tokens " + std::to_string(j["n_tokens"].get<long long>()) + " != " + std::to_string(s.logprobs.size()) +
              " logprobs");
  }
  return s;
}

}  // namespace detail

/// Validates and pairs score records. A (transcript, seed) with only one of
/// AD/C present is quarantined, not fatal.
inline ScoreSet pair_scores(std::vector<TokenScores> all) {
  using Key = std::tuple<TranscriptRef, std::int64_t, int>;
  std::map<Key, TokenScores> by_key;
  for (auto& s : all) {
    Key k{s.ref, s.seed, static_cast<int>(s.model_id)};
    if (by_key.contains(k)) {
      fail(ErrorCode::SchemaViolation, "duplicate record for " + s.ref.str() + " model " +
                                           std::string(to_string(s.model_id)) + " seed " + std::to_string(s.seed));
    }
    by_key.emplace(std::move(k), std::move(s));
  }
  ScoreSet out;
  for (auto it = by_key.begin(); it != by_key.end(); ++it) {
    const auto& [ref, seed, model] = it->first;
    const Key other{ref, seed, model == 0 ? 1 : 0};
    if (by_key.contains(other)) {
      out.records.push_back(it->second);
    } else {
      out.quarantined.push_back({it->second, "missing " + std::string(model == 0 ? "C" : "AD") + " member of the pair"});
    }
  }
  return out;
}

inline std::vector<TokenScores> read_score_records(const std::filesystem::path& path) {
  std::vector<TokenScores> all;
  std::size_t line_no = 0;
  for (const auto& line : io::lines(io::read_file(path))) {
    ++line_no;
    if (io::trim(line).empty()) continue;
    all.push_back(detail::parse_score_record(line, path.string() + ":" + std::to_string(line_no)));
  }
  return all;
}

inline ScoreSet load_external_scores(const std::filesystem::path& path) { return pair_scores(read_score_records(path)); }

/// Every *.jsonl file in `dir`, in file-name order, pooled before pairing.
inline ScoreSet load_score_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  if (files.empty()) fail(ErrorCode::Io, "no .jsonl score files in " + dir.string());
  std::sort(files.begin(), files.end());
  std::vector<TokenScores> all;
  for (const auto& f : files) {
    auto part = read_score_records(f);
    all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return pair_scores(std::move(all));
}

inline ScoreSet load_scores(const std::filesystem::path& path) {
  return std::filesystem::is_directory(path) ? load_score_dir(path) : load_external_scores(path);
}

}  // namespace pplad
