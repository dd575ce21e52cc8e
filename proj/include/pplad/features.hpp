#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "pplad/error.hpp"
#include "pplad/io.hpp"
#include "pplad/transcript.hpp"

namespace pplad {

struct FeatureVector {
  TranscriptRef ref;
  std::map<std::string, double> values;

  bool operator==(const FeatureVector&) const = default;
};

inline const std::vector<std::string>& default_feature_names() {
  static const std::vector<std::string> names = {
      "token_count",      "type_count",          "ttr",          "brunet_w",      "honore_r",     "mean_word_length",
      "mean_sentence_len", "filler_rate",        "repetition_rate", "pronoun_ratio", "rare_word_rate"};
  return names;
}

// 100 most frequent English words (rank order).
inline const std::vector<std::string>& default_top_words() {
  static const std::vector<std::string> words = {
      "the",   "be",    "to",    "of",    "and",   "a",     "in",    "that",  "have",  "i",     "it",    "for",
      "not",   "on",    "with",  "he",    "as",    "you",   "do",    "at",    "this",  "but",   "his",   "by",
      "from",  "they",  "we",    "say",   "her",   "she",   "or",    "an",    "will",  "my",    "one",   "all",
      "would", "there", "their", "what",  "so",    "up",    "out",   "if",    "about", "who",   "get",   "which",
      "go",    "me",    "when",  "make",  "can",   "like",  "time",  "no",    "just",  "him",   "know",  "take",
      "people", "into", "year",  "your",  "good",  "some",  "could", "them",  "see",   "other", "than",  "then",
      "now",   "look",  "only",  "come",  "its",   "over",  "think", "also",  "back",  "after", "use",   "two",
      "how",   "our",   "work",  "first", "well",  "way",   "even",  "new",   "want",  "because", "any", "these",
      "give",  "day",   "most",  "us",    "is",    "are",   "was",   "were"};
  return words;
}

struct FeatureConfig {
  std::set<std::string> enabled{default_feature_names().begin(), default_feature_names().end()};
  std::set<std::string> fillers = {"uh", "um", "er", "eh"};
  std::set<std::string> pronouns = {"i",   "me",    "my",   "mine", "you",  "your", "yours", "he",    "him",
                                    "his", "she",   "her",  "hers", "it",   "its",  "we",    "us",    "our",
                                    "ours", "they", "them", "their", "theirs", "this", "that", "these", "those"};
  std::vector<std::string> frequency_list = default_top_words();
  std::size_t top_k = 100;
};

/// Surface lexical features. Ratios use every token, full stops included, as
/// the denominator; word-level features (lengths, rare words) skip full stops.
inline FeatureVector extract_features(const Transcript& t, const FeatureConfig& cfg = {}) {
  const auto& toks = t.tokens;
  const double n = static_cast<double>(toks.size());
  std::map<std::string, std::size_t> freq;
  std::size_t words = 0, word_chars = 0, sentences = 0, in_sentence = 0;
  std::size_t fillers = 0, repeats = 0, pronouns = 0, rare = 0;
  const auto k = std::min(cfg.top_k, cfg.frequency_list.size());
  const std::set<std::string> top(cfg.frequency_list.begin(), cfg.frequency_list.begin() + static_cast<std::ptrdiff_t>(k));
  for (std::size_t i = 0; i < toks.size(); ++i) {
    const auto& w = toks[i];
    ++freq[w];
    if (w == kSentenceEnd) {
      if (in_sentence) ++sentences;
      in_sentence = 0;
      continue;
    }
    ++words;
    ++in_sentence;
    word_chars += w.size();
    if (cfg.fillers.contains(w)) ++fillers;
    if (cfg.pronouns.contains(w)) ++pronouns;
    if (!top.contains(w)) ++rare;
    if (i > 0 && toks[i - 1] == w) ++repeats;
  }
  if (in_sentence) ++sentences;

  const double v = static_cast<double>(freq.size());
  std::size_t hapax = 0;
  for (const auto& [w, c] : freq)
    if (c == 1) ++hapax;
  // Honore's R is unbounded when every type is a hapax; the denominator is
  // floored at 1/V, as if one type had been seen twice.
  const double honore_den = std::max(1.0 - static_cast<double>(hapax) / v, 1.0 / v);

  const std::map<std::string, double> all = {
      {"token_count", n},
      {"type_count", v},
      {"ttr", v / n},
      {"brunet_w", std::pow(n, std::pow(v, -0.165))},
      {"honore_r", 100.0 * std::log(n) / honore_den},
      {"mean_word_length", words ? static_cast<double>(word_chars) / static_cast<double>(words) : 0.0},
      {"mean_sentence_len", sentences ? static_cast<double>(words) / static_cast<double>(sentences) : 0.0},
      {"filler_rate", static_cast<double>(fillers) / n},
      {"repetition_rate", static_cast<double>(repeats) / n},
      {"pronoun_ratio", static_cast<double>(pronouns) / n},
      {"rare_word_rate", static_cast<double>(rare) / n},
  };
  FeatureVector fv{t.ref(), {}};
  for (const auto& name : cfg.enabled) {
    auto it = all.find(name);
    if (it == all.end()) fail(ErrorCode::Config, "unknown feature '" + name + "'");
    fv.values[name] = it->second;
  }
  return fv;
}

// ---------------------------------------------------------------------------
// Two-sample Kolmogorov-Smirnov

struct KsResult {
  std::string feature_name;
  double statistic = 0;
  double p_value = 1;
  bool significant = false;
  bool small_sample = false;  // either sample below 20: asymptotic p is rough
};

/// Asymptotic Kolmogorov survival function Q(lambda) = P(K > lambda).
inline double kolmogorov_q(double lambda) {
  if (lambda <= 0) return 1.0;
  if (lambda < 1.18) {
    // Jacobi theta form, converges quickly for small lambda.
    const double pi2 = std::numbers::pi * std::numbers::pi;
    double sum = 0;
    for (int j = 1; j <= 8; ++j) {
      const double odd = 2.0 * j - 1.0;
      sum += std::exp(-odd * odd * pi2 / (8.0 * lambda * lambda));
    }
    return std::clamp(1.0 - std::sqrt(2.0 * std::numbers::pi) / lambda * sum, 0.0, 1.0);
  }
  double sum = 0;
  double sign = 1;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    sum += sign * term;
    if (term < 1e-17 * sum) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

/// Statistic: sup |ECDF_a - ECDF_b| over the pooled sample points. p-value:
/// asymptotic distribution at lambda = (sqrt(ne) + 0.12 + 0.11 / sqrt(ne)) * D
/// with ne = n*m / (n + m).
inline KsResult ks_two_sample(std::span<const double> a, std::span<const double> b, double alpha = 0.05) {
  if (a.empty() || b.empty()) fail(ErrorCode::EmptySample, "KS test needs non-empty samples");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  for (double v : x)
    if (!std::isfinite(v)) fail(ErrorCode::InvalidScores, "KS test: non-finite value");
  for (double v : y)
    if (!std::isfinite(v)) fail(ErrorCode::InvalidScores, "KS test: non-finite value");
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double n = static_cast<double>(x.size()), m = static_cast<double>(y.size());
  // max |i/n - j/m| kept as the integer |i*m - j*n| and divided once
  std::size_t i = 0, j = 0;
  std::uint64_t num = 0;
  while (i < x.size() || j < y.size()) {
    const double v = j == y.size() || (i < x.size() && x[i] <= y[j]) ? x[i] : y[j];
    while (i < x.size() && x[i] <= v) ++i;
    while (j < y.size() && y[j] <= v) ++j;
    const std::uint64_t lhs = i * y.size(), rhs = j * x.size();
    num = std::max(num, lhs > rhs ? lhs - rhs : rhs - lhs);
  }
  const double d = static_cast<double>(num) / (n * m);
  KsResult r;
  r.statistic = d;
  const double ne = n * m / (n + m);
  const double sq = std::sqrt(ne);
  r.p_value = std::max(kolmogorov_q((sq + 0.12 + 0.11 / sq) * d), std::numeric_limits<double>::min());
  r.significant = r.p_value < alpha;
  r.small_sample = x.size() < 20 || y.size() < 20;
  return r;
}

struct KsReport {
  std::vector<KsResult> results;
  std::map<std::string, double> means_a;
  std::map<std::string, double> means_b;
  std::size_t n_significant = 0;
  double alpha = 0.05;
};

namespace detail {

inline std::set<std::string> feature_names(const std::vector<FeatureVector>& set, const std::string& which) {
  if (set.empty()) fail(ErrorCode::EmptySample, which + " is empty");
  std::set<std::string> names;
  for (const auto& [k, v] : set.front().values) names.insert(k);
  for (const auto& fv : set) {
    std::set<std::string> here;
    for (const auto& [k, v] : fv.values) here.insert(k);
    if (here != names) fail(ErrorCode::FeatureSetMismatch, which + ": " + fv.ref.str() + " has a different feature set");
  }
  return names;
}

}  // namespace detail

inline KsReport compare_sets(const std::vector<FeatureVector>& set_a, const std::vector<FeatureVector>& set_b,
                             double alpha = 0.05) {
  const auto names = detail::feature_names(set_a, "set A");
  if (detail::feature_names(set_b, "set B") != names) fail(ErrorCode::FeatureSetMismatch, "sets A and B differ in features");
  KsReport rep;
  rep.alpha = alpha;
  for (const auto& name : names) {
    std::vector<double> a, b;
    for (const auto& fv : set_a) a.push_back(fv.values.at(name));
    for (const auto& fv : set_b) b.push_back(fv.values.at(name));
    auto r = ks_two_sample(a, b, alpha);
    r.feature_name = name;
    rep.n_significant += r.significant ? 1 : 0;
    rep.results.push_back(r);
    double sa = 0, sb = 0;
    for (double v : a) sa += v;
    for (double v : b) sb += v;
    rep.means_a[name] = sa / static_cast<double>(a.size());
    rep.means_b[name] = sb / static_cast<double>(b.size());
  }
  return rep;
}

inline std::string render_ks_report(const KsReport& rep) {
  io::Table t;
  t.comments.push_back("# significant " + std::to_string(rep.n_significant) + " of " + std::to_string(rep.results.size()) +
                       " features at alpha " + io::format_double(rep.alpha));
  t.header = {"feature", "statistic", "p_value", "significant", "mean_a", "mean_b", "small_sample"};
  for (const auto& r : rep.results) {
    t.rows.push_back({r.feature_name, io::format_double(r.statistic), io::format_double(r.p_value), r.significant ? "1" : "0",
                      io::format_double(rep.means_a.at(r.feature_name)), io::format_double(rep.means_b.at(r.feature_name)),
                      r.small_sample ? "1" : "0"});
  }
  return io::render_table(t, '\t');
}

// ---------------------------------------------------------------------------
// Feature matrix files: header subject_id, session_id, <feature...>

inline std::string render_feature_matrix(const std::vector<FeatureVector>& rows) {
  io::Table t;
  t.header = {"subject_id", "session_id"};
  if (!rows.empty())
    for (const auto& [k, v] : rows.front().values) t.header.push_back(k);
  for (const auto& fv : rows) {
    std::vector<std::string> r = {fv.ref.subject_id, fv.ref.session_id};
    if (fv.values.size() + 2 != t.header.size()) fail(ErrorCode::FeatureSetMismatch, fv.ref.str() + ": feature count differs");
    for (std::size_t c = 2; c < t.header.size(); ++c) {
      auto it = fv.values.find(t.header[c]);
      if (it == fv.values.end()) fail(ErrorCode::FeatureSetMismatch, fv.ref.str() + ": missing " + t.header[c]);
      r.push_back(io::format_double(it->second));
    }
    t.rows.push_back(std::move(r));
  }
  return io::render_table(t, '\t');
}

inline std::vector<FeatureVector> read_feature_matrix(const std::filesystem::path& path) {
  const auto t = io::read_table(path, '\t', ErrorCode::FeatureSetMismatch);
  const auto ctx = path.string();
  const auto c_sub = t.require_column("subject_id", ErrorCode::FeatureSetMismatch, ctx);
  const auto c_ses = t.require_column("session_id", ErrorCode::FeatureSetMismatch, ctx);
  std::vector<FeatureVector> out;
  for (const auto& row : t.rows) {
    FeatureVector fv{{row[c_sub], row[c_ses]}, {}};
    for (std::size_t c = 0; c < t.header.size(); ++c) {
      if (c == c_sub || c == c_ses) continue;
      auto v = io::parse_double(row[c]);
      if (!v || !std::isfinite(*v)) fail(ErrorCode::FeatureSetMismatch, ctx + ": non-numeric value for " + t.header[c]);
      fv.values[t.header[c]] = *v;
    }
    out.push_back(std::move(fv));
  }
  return out;
}

/// Adds externally computed columns, keyed by transcript, to each vector.
inline void merge_external_features(std::vector<FeatureVector>& rows, const std::vector<FeatureVector>& external) {
  std::map<TranscriptRef, const FeatureVector*> by_ref;
  for (const auto& e : external) by_ref[e.ref] = &e;
  for (auto& fv : rows) {
    auto it = by_ref.find(fv.ref);
    if (it == by_ref.end()) fail(ErrorCode::FeatureSetMismatch, "no external features for " + fv.ref.str());
    for (const auto& [k, v] : it->second->values) {
      if (!fv.values.emplace(k, v).second) fail(ErrorCode::FeatureSetMismatch, "external column '" + k + "' clashes");
    }
  }
}

}  // namespace pplad
