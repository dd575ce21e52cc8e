#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pplad/error.hpp"
#include "pplad/io.hpp"
#include "pplad/ppl.hpp"
#include "pplad/transcript.hpp"

namespace pplad {

struct ScoredSample {
  TranscriptRef ref;
  double score = 0;
  Label label = Label::HC;
  std::optional<int> mmse;

  bool operator==(const ScoredSample&) const = default;
};

namespace detail {

// Scores re-signed so that larger always means "more positive".
inline std::vector<std::pair<double, bool>> oriented(std::span<const ScoredSample> samples, Label positive,
                                                     Orientation orientation, std::size_t& n_pos, std::size_t& n_neg) {
  const bool flip = (orientation == Orientation::HigherIsAD) != (positive == Label::AD);
  std::vector<std::pair<double, bool>> out;
  out.reserve(samples.size());
  n_pos = n_neg = 0;
  for (const auto& s : samples) {
    if (!std::isfinite(s.score)) fail(ErrorCode::InvalidScores, s.ref.str() + ": non-finite score");
    const bool pos = s.label == positive;
    (pos ? n_pos : n_neg) += 1;
    out.emplace_back(flip ? -s.score : s.score, pos);
  }
  if (n_pos == 0 || n_neg == 0) fail(ErrorCode::SingleClass, "both classes must be present");
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

/// Mann-Whitney AUC: P(positive outscores negative), ties count 1/2.
/// Accumulated in integer half-units, so the result is the exact ratio.
inline double auc(std::span<const ScoredSample> samples, Label positive = Label::AD,
                  Orientation orientation = Orientation::HigherIsAD) {
  std::size_t n_pos = 0, n_neg = 0;
  const auto xs = detail::oriented(samples, positive, orientation, n_pos, n_neg);
  std::uint64_t twice_u = 0;
  std::uint64_t neg_below = 0;
  for (std::size_t i = 0; i < xs.size();) {
    std::size_t j = i;
    std::uint64_t pos_here = 0, neg_here = 0;
    while (j < xs.size() && xs[j].first == xs[i].first) {
      (xs[j].second ? pos_here : neg_here) += 1;
      ++j;
    }
    twice_u += 2 * pos_here * neg_below + pos_here * neg_here;
    neg_below += neg_here;
    i = j;
  }
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct EerResult {
  double accuracy = 0;
  double threshold = 0;  // in the caller's score scale
  double fpr = 0;
  double fnr = 0;
};

/// Operating point minimising |FPR - FNR| over the thresholds {-inf,
/// midpoints between adjacent distinct scores, +inf}. Ties go to the higher
/// accuracy, then to the lower (oriented) threshold. A score equal to the
/// threshold is predicted positive.
inline EerResult acc_at_eer(std::span<const ScoredSample> samples, Label positive = Label::AD,
                            Orientation orientation = Orientation::HigherIsAD) {
  std::size_t n_pos = 0, n_neg = 0;
  const auto xs = detail::oriented(samples, positive, orientation, n_pos, n_neg);
  const bool flip = (orientation == Orientation::HigherIsAD) != (positive == Label::AD);

  // Candidate k predicts positive for everything above the k-th distinct value.
  std::uint64_t fn = 0, tn = 0;  // at threshold -inf nothing is negative
  auto evaluate = [&](std::uint64_t fn_k, std::uint64_t tn_k) {
    const std::uint64_t fp = n_neg - tn_k;
    const std::uint64_t tp = n_pos - fn_k;
    const auto a = static_cast<std::int64_t>(fp * n_pos);
    const auto b = static_cast<std::int64_t>(fn_k * n_neg);
    return std::pair<std::uint64_t, std::uint64_t>{static_cast<std::uint64_t>(std::llabs(a - b)), tp + tn_k};
  };
  auto [best_gap, best_correct] = evaluate(fn, tn);
  double best_t = -std::numeric_limits<double>::infinity();
  std::uint64_t best_fn = fn, best_tn = tn;
  for (std::size_t i = 0; i < xs.size();) {
    std::size_t j = i;
    while (j < xs.size() && xs[j].first == xs[i].first) {
      (xs[j].second ? fn : tn) += 1;
      ++j;
    }
    const double t = j < xs.size() ? std::midpoint(xs[i].first, xs[j].first) : std::numeric_limits<double>::infinity();
    const auto [gap, correct] = evaluate(fn, tn);
    if (gap < best_gap || (gap == best_gap && correct > best_correct)) {
      best_gap = gap;
      best_correct = correct;
      best_t = t;
      best_fn = fn;
      best_tn = tn;
    }
    i = j;
  }
  EerResult r;
  r.accuracy = static_cast<double>(best_correct) / static_cast<double>(n_pos + n_neg);
  r.threshold = flip ? -best_t : best_t;
  r.fnr = static_cast<double>(best_fn) / static_cast<double>(n_pos);
  r.fpr = static_cast<double>(n_neg - best_tn) / static_cast<double>(n_neg);
  return r;
}

inline double pearson_r(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorCode::InvalidScores, "pearson_r: length mismatch");
  if (x.size() < 2) fail(ErrorCode::TooFew, "pearson_r needs at least 2 pairs");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0 || syy == 0) fail(ErrorCode::ZeroVariance, "pearson_r: a variable has zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Pearson r between score and MMSE over the samples that carry an MMSE.
inline double pearson_r(std::span<const ScoredSample> samples) {
  std::vector<double> x, y;
  for (const auto& s : samples) {
    if (!s.mmse) continue;
    x.push_back(s.score);
    y.push_back(*s.mmse);
  }
  return pearson_r(std::span<const double>(x), std::span<const double>(y));
}

struct EvalReport {
  double auc = 0;
  double acc_at_eer = 0;
  double eer_threshold = 0;
  std::optional<double> r_mmse;
  std::size_t n = 0;
};

inline EvalReport evaluate(std::span<const ScoredSample> samples, Label positive, Orientation orientation) {
  EvalReport r;
  r.n = samples.size();
  r.auc = auc(samples, positive, orientation);
  const auto eer = acc_at_eer(samples, positive, orientation);
  r.acc_at_eer = eer.accuracy;
  r.eer_threshold = eer.threshold;
  try {
    r.r_mmse = pearson_r(samples);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::TooFew && e.code() != ErrorCode::ZeroVariance) throw;
  }
  return r;
}

/// Mean score per transcript across seeds, summed in ascending seed order.
inline std::vector<ScoredSample> aggregate(const std::map<std::int64_t, std::vector<ScoredSample>>& per_seed) {
  if (per_seed.empty()) fail(ErrorCode::SeedCoverageMismatch, "no seeds to aggregate");
  std::map<TranscriptRef, ScoredSample> acc;
  const auto& [first_seed, first] = *per_seed.begin();
  for (const auto& s : first) {
    if (!acc.emplace(s.ref, s).second) fail(ErrorCode::SeedCoverageMismatch, "duplicate transcript " + s.ref.str());
    acc[s.ref].score = 0;
  }
  for (const auto& [seed, samples] : per_seed) {
    if (samples.size() != acc.size()) {
      fail(ErrorCode::SeedCoverageMismatch, "seed " + std::to_string(seed) + " covers " + std::to_string(samples.size()) +
                                                " transcripts, seed " + std::to_string(first_seed) + " covers " +
                                                std::to_string(acc.size()));
    }
    std::set<TranscriptRef> seen;
    for (const auto& s : samples) {
      auto it = acc.find(s.ref);
      if (it == acc.end() || !seen.insert(s.ref).second) {
        fail(ErrorCode::SeedCoverageMismatch, "seed " + std::to_string(seed) + ": unexpected transcript " + s.ref.str());
      }
      if (it->second.label != s.label || it->second.mmse != s.mmse) {
        fail(ErrorCode::SeedCoverageMismatch, s.ref.str() + ": label or MMSE differs between seeds");
      }
      it->second.score += s.score;
    }
  }
  std::vector<ScoredSample> out;
  out.reserve(acc.size());
  const auto n = static_cast<double>(per_seed.size());
  for (auto& [ref, s] : acc) {
    s.score /= n;
    out.push_back(s);
  }
  return out;
}

struct MetricSummary {
  double mean = 0;
  double sd = 0;
  double best = 0;
  std::int64_t best_seed = 0;
  double agg = 0;
  std::size_t n_seeds = 0;
  bool available = false;
};

struct SeedSummary {
  MetricSummary acc_at_eer;
  MetricSummary auc;
  MetricSummary r_mmse;
};

namespace detail {

// `better(a, b)` says whether a beats b; ties keep the earlier (lower) seed.
template <class Better>
MetricSummary summarize_metric(const std::vector<std::pair<std::int64_t, double>>& values, std::optional<double> agg,
                               Better better) {
  MetricSummary m;
  m.n_seeds = values.size();
  if (values.empty()) return m;
  m.available = true;
  double sum = 0;
  for (const auto& [seed, v] : values) sum += v;
  m.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0;
    for (const auto& [seed, v] : values) ss += (v - m.mean) * (v - m.mean);
    m.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  m.best = values.front().second;
  m.best_seed = values.front().first;
  for (const auto& [seed, v] : values) {
    if (better(v, m.best) || (!better(m.best, v) && seed < m.best_seed)) {
      m.best = v;
      m.best_seed = seed;
    }
  }
  m.agg = agg.value_or(std::numeric_limits<double>::quiet_NaN());
  return m;
}

}  // namespace detail

/// Mean, sample SD, best and aggregated value per metric. "Best" is chosen
/// per metric: highest accuracy, highest AUC, largest |r| (sign kept).
inline SeedSummary summarize_seeds(const std::vector<std::pair<std::int64_t, EvalReport>>& per_seed,
                                   const EvalReport& aggregated) {
  std::vector<std::pair<std::int64_t, EvalReport>> sorted = per_seed;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::pair<std::int64_t, double>> acc, au, r;
  for (const auto& [seed, rep] : sorted) {
    acc.emplace_back(seed, rep.acc_at_eer);
    au.emplace_back(seed, rep.auc);
    if (rep.r_mmse) r.emplace_back(seed, *rep.r_mmse);
  }
  const auto higher = [](double a, double b) { return a > b; };
  SeedSummary s;
  s.acc_at_eer = detail::summarize_metric(acc, aggregated.acc_at_eer, higher);
  s.auc = detail::summarize_metric(au, aggregated.auc, higher);
  s.r_mmse = detail::summarize_metric(r, aggregated.r_mmse, [](double a, double b) { return std::abs(a) > std::abs(b); });
  return s;
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["n"] = r.n;
  j["auc"] = r.auc;
  j["acc_at_eer"] = r.acc_at_eer;
  j["eer_threshold"] = io::format_double(r.eer_threshold);
  j["r_mmse"] = r.r_mmse ? nlohmann::ordered_json(*r.r_mmse) : nlohmann::ordered_json(nullptr);
  return j;
}

inline nlohmann::ordered_json to_json(const MetricSummary& m) {
  nlohmann::ordered_json j;
  if (!m.available) return nullptr;
  j["mean"] = m.mean;
  j["sd"] = m.sd;
  j["best"] = m.best;
  j["best_seed"] = m.best_seed;
  j["agg"] = std::isnan(m.agg) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(m.agg);
  j["n_seeds"] = m.n_seeds;
  return j;
}

inline nlohmann::ordered_json to_json(const SeedSummary& s) {
  nlohmann::ordered_json j;
  j["acc_at_eer"] = to_json(s.acc_at_eer);
  j["auc"] = to_json(s.auc);
  j["r_mmse"] = to_json(s.r_mmse);
  j["best_rule"] = "per-metric: max accuracy, max AUC, max |r|; ties to the lower seed";
  return j;
}

/// Fixed-width table with Mean/SD/Best/Agg columns for accuracy at EER (%),
/// AUC (%) and Pearson r with MMSE, one row per score variant.
inline std::string render_summary_table(const std::vector<std::pair<std::string, SeedSummary>>& rows) {
  auto cell = [](const MetricSummary& m, double value, double scale, int digits) {
    if (!m.available || std::isnan(value)) return std::string("-");
    return io::format_fixed(value * scale, digits);
  };
  std::string out;
  char line[512];
  std::snprintf(line, sizeof line, "%-12s | %-35s | %-35s | %-35s\n", "", "Accuracy at EER (%)", "AUC (%)",
                "Pearson's r with MMSE");
  out += line;
  std::snprintf(line, sizeof line, "%-12s | %8s %8s %8s %8s | %8s %8s %8s %8s | %8s %8s %8s %8s\n", "score", "Mean", "SD",
                "Best", "Agg", "Mean", "SD", "Best", "Agg", "Mean", "SD", "Best", "Agg");
  out += line;
  for (const auto& [name, s] : rows) {
    std::snprintf(line, sizeof line, "%-12s | %8s %8s %8s %8s | %8s %8s %8s %8s | %8s %8s %8s %8s\n", name.c_str(),
                  cell(s.acc_at_eer, s.acc_at_eer.mean, 100, 2).c_str(), cell(s.acc_at_eer, s.acc_at_eer.sd, 100, 2).c_str(),
                  cell(s.acc_at_eer, s.acc_at_eer.best, 100, 2).c_str(), cell(s.acc_at_eer, s.acc_at_eer.agg, 100, 2).c_str(),
                  cell(s.auc, s.auc.mean, 100, 2).c_str(), cell(s.auc, s.auc.sd, 100, 2).c_str(),
                  cell(s.auc, s.auc.best, 100, 2).c_str(), cell(s.auc, s.auc.agg, 100, 2).c_str(),
                  cell(s.r_mmse, s.r_mmse.mean, 1, 2).c_str(), cell(s.r_mmse, s.r_mmse.sd, 1, 2).c_str(),
                  cell(s.r_mmse, s.r_mmse.best, 1, 2).c_str(), cell(s.r_mmse, s.r_mmse.agg, 1, 2).c_str());
    out += line;
  }
  return out;
}

}  // namespace pplad
