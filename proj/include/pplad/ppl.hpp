#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "pplad/error.hpp"
#include "pplad/lm.hpp"
#include "pplad/transcript.hpp"

namespace pplad {

/// exp(-mean(logprobs)). The mean is accumulated in long double with
/// Neumaier compensation so the result does not depend on sequence length
/// beyond rounding of the inputs themselves.
inline double perplexity(std::span<const double> logprobs) {
  if (logprobs.empty()) fail(ErrorCode::InvalidScores, "perplexity of an empty sequence");
  long double sum = 0, comp = 0;
  for (double lp : logprobs) {
    if (!std::isfinite(lp) || lp > 0) fail(ErrorCode::InvalidScores, "logprob " + io::format_double(lp) + " is not finite and <= 0");
    const long double x = lp;
    const long double t = sum + x;
    comp += std::fabs(sum) >= std::fabs(x) ? (sum - t) + x : (x - t) + sum;
    sum = t;
  }
  const long double mean = (sum + comp) / static_cast<long double>(logprobs.size());
  return static_cast<double>(std::exp(-mean));
}

inline double perplexity(const TokenScores& scores) { return perplexity(std::span<const double>(scores.logprobs)); }

struct ScorePair {
  TranscriptRef ref;
  std::int64_t seed = 0;
  double ppl_ad = 1;
  double ppl_c = 1;

  double d() const { return ppl_ad - ppl_c; }
};

inline ScorePair make_score_pair(const TokenScores& ad, const TokenScores& c) {
  if (ad.model_id != ModelId::AD || c.model_id != ModelId::C || !(ad.ref == c.ref) || ad.seed != c.seed) {
    fail(ErrorCode::InvalidScores, "score pair mismatch for " + ad.ref.str());
  }
  ScorePair p{ad.ref, ad.seed, perplexity(ad), perplexity(c)};
  if (!(p.ppl_ad >= 1) || !(p.ppl_c >= 1)) fail(ErrorCode::InvalidScores, ad.ref.str() + ": perplexity below 1");
  return p;
}

/// Per-class mean and sample SD (n - 1) of D = PPL_AD - PPL_C over a
/// training set.
struct TrainStats {
  double mean_d_c = 0;
  double mean_d_ad = 0;
  double sd_d_c = 0;
  double sd_d_ad = 0;
  std::size_t n_c = 0;
  std::size_t n_ad = 0;
};

inline TrainStats fit_train_stats(const std::vector<std::pair<ScorePair, Label>>& train_pairs) {
  std::vector<double> ad, hc;
  for (const auto& [p, label] : train_pairs) (label == Label::AD ? ad : hc).push_back(p.d());
  if (ad.size() < 2 || hc.size() < 2) {
    fail(ErrorCode::InsufficientGroup, "need >= 2 training pairs per label, got AD " + std::to_string(ad.size()) + ", HC " +
                                           std::to_string(hc.size()));
  }
  auto mean_sd = [](const std::vector<double>& xs) {
    double m = 0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    double ss = 0;
    for (double x : xs) ss += (x - m) * (x - m);
    return std::pair{m, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
  };
  TrainStats s;
  std::tie(s.mean_d_ad, s.sd_d_ad) = mean_sd(ad);
  std::tie(s.mean_d_c, s.sd_d_c) = mean_sd(hc);
  s.n_ad = ad.size();
  s.n_c = hc.size();
  return s;
}

enum class ScoreVariant { D, DLogNorm, DBar, DBarStar };

inline constexpr std::array<ScoreVariant, 4> kAllVariants = {ScoreVariant::D, ScoreVariant::DLogNorm, ScoreVariant::DBar,
                                                             ScoreVariant::DBarStar};

inline std::string_view to_string(ScoreVariant v) {
  switch (v) {
    case ScoreVariant::D: return "d";
    case ScoreVariant::DLogNorm: return "d_log_norm";
    case ScoreVariant::DBar: return "d_bar";
    case ScoreVariant::DBarStar: return "d_bar_star";
  }
  return "?";
}

inline std::optional<ScoreVariant> parse_variant(std::string_view s) {
  for (auto v : kAllVariants)
    if (to_string(v) == s) return v;
  return std::nullopt;
}

enum class Orientation { HigherIsAD, HigherIsHC };

/// D is AD-like when negative (PPL_AD < PPL_C); the other three scores are
/// AD-like when positive.
inline Orientation orientation_of(ScoreVariant v) {
  return v == ScoreVariant::D ? Orientation::HigherIsHC : Orientation::HigherIsAD;
}

struct DiffScores {
  TranscriptRef ref;
  std::int64_t seed = 0;
  double ppl_ad = 1;
  double ppl_c = 1;
  double d = 0;
  std::optional<double> d_log_norm;  // unset when PPL_C == 1 (log denominator is zero)
  double d_bar = 0;
  double d_bar_star = 0;

  std::optional<double> get(ScoreVariant v) const {
    switch (v) {
      case ScoreVariant::D: return d;
      case ScoreVariant::DLogNorm: return d_log_norm;
      case ScoreVariant::DBar: return d_bar;
      case ScoreVariant::DBarStar: return d_bar_star;
    }
    return std::nullopt;
  }
};

namespace detail {

// |d - cut_c| - |d - cut_ad|, written piecewise so that the two flat arms
// come out bit-identical for every d beyond the cutoffs. Evaluating the
// absolute values directly leaves ulp noise there, which breaks exact ties
// and perturbs rank metrics.
inline double translated(double d, double cut_c, double cut_ad) {
  if (cut_c <= cut_ad) {
    if (d <= cut_c) return cut_c - cut_ad;
    if (d >= cut_ad) return cut_ad - cut_c;
    return std::clamp((d - cut_c) - (cut_ad - d), cut_c - cut_ad, cut_ad - cut_c);
  }
  if (d >= cut_c) return cut_ad - cut_c;
  if (d <= cut_ad) return cut_c - cut_ad;
  return std::clamp((cut_c - d) - (d - cut_ad), cut_ad - cut_c, cut_c - cut_ad);
}

}  // namespace detail

inline DiffScores diff_scores(const ScorePair& pair, const TrainStats& stats) {
  DiffScores s;
  s.ref = pair.ref;
  s.seed = pair.seed;
  s.ppl_ad = pair.ppl_ad;
  s.ppl_c = pair.ppl_c;
  s.d = pair.ppl_ad - pair.ppl_c;
  const double log_c = std::log(pair.ppl_c);
  if (log_c != 0) s.d_log_norm = (log_c - std::log(pair.ppl_ad)) / log_c;
  const double cut_c = stats.mean_d_c;
  const double cut_ad = stats.mean_d_ad;
  const double cut_c_star = stats.mean_d_c - 2.0 * stats.sd_d_c;
  const double cut_ad_star = stats.mean_d_ad + 2.0 * stats.sd_d_ad;
  s.d_bar = detail::translated(s.d, cut_c, cut_ad);
  s.d_bar_star = detail::translated(s.d, cut_c_star, cut_ad_star);
  return s;
}

/// AD iff the score lies on the AD side of `threshold`; a score exactly at
/// the threshold is AD. classify(d_bar, HigherIsAD, 0) is the nearest-class-
/// mean rule.
inline Label classify(double score, Orientation orientation, double threshold) {
  if (!std::isfinite(score)) fail(ErrorCode::InvalidScores, "cannot classify a non-finite score");
  if (orientation == Orientation::HigherIsAD) return score >= threshold ? Label::AD : Label::HC;
  return score <= threshold ? Label::AD : Label::HC;
}

}  // namespace pplad
