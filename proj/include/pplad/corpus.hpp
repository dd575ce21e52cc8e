#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <concepts>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <ranges>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pplad/error.hpp"
#include "pplad/io.hpp"
#include "pplad/rng.hpp"
#include "pplad/transcript.hpp"

namespace pplad {

enum class Side { Train, Test };
enum class BalanceField { Age, Gender, Education, Mmse };

inline constexpr std::array<BalanceField, 4> kAllBalanceFields = {BalanceField::Age, BalanceField::Gender,
                                                                  BalanceField::Education, BalanceField::Mmse};

inline std::string_view to_string(Side s) { return s == Side::Train ? "train" : "test"; }

inline std::string_view to_string(BalanceField f) {
  switch (f) {
    case BalanceField::Age: return "age";
    case BalanceField::Gender: return "gender";
    case BalanceField::Education: return "education";
    case BalanceField::Mmse: return "mmse";
  }
  return "?";
}

inline std::optional<BalanceField> parse_balance_field(std::string_view s) {
  for (auto f : kAllBalanceFields)
    if (to_string(f) == s) return f;
  return std::nullopt;
}

/// Value of a balance field for one subject; gender is encoded as 1 for F so
/// that its group mean is the female proportion.
inline std::optional<double> field_value(const SubjectMeta& m, BalanceField f) {
  switch (f) {
    case BalanceField::Age: return m.age;
    case BalanceField::Gender: return m.gender == Gender::F ? 1.0 : 0.0;
    case BalanceField::Education: return m.education ? std::optional<double>(*m.education) : std::nullopt;
    case BalanceField::Mmse: return m.mmse ? std::optional<double>(*m.mmse) : std::nullopt;
  }
  return std::nullopt;
}

struct SplitSpec {
  double train_fraction = 0.70;
  // Transcripts kept per label. Unset: as many as the smaller label allows.
  std::optional<std::size_t> per_label_total;
  // Maximum |mean(AD) - mean(HC)| over both sides together.
  std::map<BalanceField, double> group_tolerance = {
      {BalanceField::Age, 2.0}, {BalanceField::Gender, 0.10}, {BalanceField::Education, 1.0}};
  // Maximum |mean(train) - mean(test)| within each label.
  std::map<BalanceField, double> side_tolerance = {{BalanceField::Age, 2.0},
                                                   {BalanceField::Gender, 0.10},
                                                   {BalanceField::Education, 1.0},
                                                   {BalanceField::Mmse, 1.5}};
  std::set<std::string> exclusions;       // barred from train
  std::set<std::string> test_exclusions;  // barred from test
  std::uint64_t seed = 0;
  int restarts = 16;
  long max_steps = 200000;
};

struct GroupStats {
  double mean = 0;
  double sd = 0;
  std::size_t n = 0;
  std::size_t missing = 0;
};

struct Residual {
  std::string level;  // "group", "side:AD", "side:HC"
  BalanceField field = BalanceField::Age;
  double value = 0;
  double tolerance = 0;
  bool within = true;
};

struct BalanceReport {
  // [label][side] transcript counts and their targets
  std::array<std::array<std::size_t, 2>, 2> counts{};
  std::array<std::array<std::size_t, 2>, 2> targets{};
  // field -> [label][side]
  std::map<BalanceField, std::array<std::array<GroupStats, 2>, 2>> stats;
  std::vector<Residual> residuals;
  bool feasible = false;

  double max_normalized() const {
    double m = 0;
    for (const auto& r : residuals) m = std::max(m, r.value / r.tolerance);
    return m;
  }
};

struct Split {
  std::set<TranscriptRef> train;
  std::set<TranscriptRef> test;
  BalanceReport report;

  bool operator==(const Split& o) const { return train == o.train && test == o.test; }
};

class InfeasibleSplit : public Error {
 public:
  InfeasibleSplit(const std::string& message, BalanceReport best)
      : Error(ErrorCode::Infeasible, message), best_(std::move(best)) {}
  const BalanceReport& best() const { return best_; }

 private:
  BalanceReport best_;
};

template <class R>
concept SessionRecord = requires(const R& r) {
  { record_meta(r) } -> std::convertible_to<const SubjectMeta&>;
  { record_session(r) } -> std::convertible_to<std::string_view>;
};

namespace detail {

inline std::size_t label_index(Label l) { return l == Label::AD ? 0 : 1; }

struct SplitUnit {
  SubjectMeta meta;
  std::vector<std::string> sessions;
  std::array<std::optional<double>, 4> values{};
  bool train_ok = true;
  bool test_ok = true;
};

// Incremental per-cell sums. Metadata values are integers, so every sum is
// exact in double arithmetic and add/remove never drifts.
class SplitState {
 public:
  static constexpr int kUnused = 2;

  SplitState(const std::vector<SplitUnit>& units, const SplitSpec& spec,
             std::array<std::array<std::size_t, 2>, 2> targets)
      : units_(units), spec_(spec), targets_(targets), state_(units.size(), kUnused) {}

  int state(std::size_t i) const { return state_[i]; }
  const std::vector<int>& states() const { return state_; }

  void set(std::size_t i, int s) {
    if (state_[i] == s) return;
    apply(i, state_[i], -1);
    state_[i] = s;
    apply(i, s, +1);
  }

  std::size_t count(std::size_t label, int side) const { return counts_[label][static_cast<std::size_t>(side)]; }

  struct Key {
    double count_dev = 0;
    double max_norm = 0;
    double sum_norm = 0;
    bool operator<(const Key& o) const {
      if (count_dev != o.count_dev) return count_dev < o.count_dev;
      if (max_norm != o.max_norm) return max_norm < o.max_norm;
      return sum_norm < o.sum_norm;
    }
  };

  Key key() const {
    Key k;
    for (std::size_t l = 0; l < 2; ++l)
      for (std::size_t s = 0; s < 2; ++s)
        k.count_dev += std::abs(static_cast<double>(counts_[l][s]) - static_cast<double>(targets_[l][s]));
    auto consider = [&](double residual, double tol) {
      const double norm = residual / tol;
      k.max_norm = std::max(k.max_norm, norm);
      k.sum_norm += norm;
    };
    for (const auto& [f, tol] : spec_.group_tolerance) {
      if (auto r = group_residual(f)) consider(*r, tol);
    }
    for (const auto& [f, tol] : spec_.side_tolerance) {
      for (std::size_t l = 0; l < 2; ++l)
        if (auto r = side_residual(f, l)) consider(*r, tol);
    }
    return k;
  }

  std::optional<double> group_residual(BalanceField f) const {
    const auto fi = static_cast<std::size_t>(f);
    std::array<double, 2> sum{}, n{};
    for (std::size_t l = 0; l < 2; ++l) {
      sum[l] = sums_[fi][l][0] + sums_[fi][l][1];
      n[l] = ns_[fi][l][0] + ns_[fi][l][1];
    }
    if (n[0] == 0 || n[1] == 0) return std::nullopt;
    return std::abs(sum[0] / n[0] - sum[1] / n[1]);
  }

  std::optional<double> side_residual(BalanceField f, std::size_t l) const {
    const auto fi = static_cast<std::size_t>(f);
    if (ns_[fi][l][0] == 0 || ns_[fi][l][1] == 0) return std::nullopt;
    return std::abs(sums_[fi][l][0] / ns_[fi][l][0] - sums_[fi][l][1] / ns_[fi][l][1]);
  }

 private:
  void apply(std::size_t i, int side, int sign) {
    if (side == kUnused) return;
    const auto& u = units_[i];
    const auto l = label_index(u.meta.label);
    const auto s = static_cast<std::size_t>(side);
    const auto w = static_cast<double>(u.sessions.size());
    counts_[l][s] = static_cast<std::size_t>(static_cast<long>(counts_[l][s]) + sign * static_cast<long>(u.sessions.size()));
    for (std::size_t f = 0; f < 4; ++f) {
      if (!u.values[f]) continue;
      sums_[f][l][s] += sign * w * *u.values[f];
      ns_[f][l][s] += sign * w;
    }
  }

  const std::vector<SplitUnit>& units_;
  const SplitSpec& spec_;
  std::array<std::array<std::size_t, 2>, 2> targets_;
  std::vector<int> state_;
  std::array<std::array<std::size_t, 2>, 2> counts_{};
  std::array<std::array<std::array<double, 2>, 2>, 4> sums_{};
  std::array<std::array<std::array<double, 2>, 2>, 4> ns_{};
};

template <class Range>
std::vector<SplitUnit> collect_units(const Range& corpus, const SplitSpec& spec) {
  std::map<std::string, SplitUnit> by_subject;
  for (const auto& rec : corpus) {
    const SubjectMeta& m = record_meta(rec);
    auto [it, inserted] = by_subject.try_emplace(m.subject_id);
    auto& u = it->second;
    if (inserted) {
      u.meta = m;
      for (auto f : kAllBalanceFields) u.values[static_cast<std::size_t>(f)] = field_value(m, f);
      u.train_ok = !spec.exclusions.contains(m.subject_id);
      u.test_ok = !spec.test_exclusions.contains(m.subject_id);
    }
    u.sessions.emplace_back(record_session(rec));
  }
  std::vector<SplitUnit> units;
  for (auto& [id, u] : by_subject) {
    std::sort(u.sessions.begin(), u.sessions.end());
    units.push_back(std::move(u));
  }
  return units;
}

inline GroupStats weighted_stats(const std::vector<SplitUnit>& units, const std::vector<int>& states,
                                 BalanceField f, std::size_t label, int side) {
  GroupStats g;
  double sum = 0;
  double n = 0;
  const auto fi = static_cast<std::size_t>(f);
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (states[i] != side || label_index(units[i].meta.label) != label) continue;
    const auto w = static_cast<double>(units[i].sessions.size());
    if (!units[i].values[fi]) {
      g.missing += units[i].sessions.size();
      continue;
    }
    sum += w * *units[i].values[fi];
    n += w;
  }
  g.n = static_cast<std::size_t>(n);
  if (n == 0) return g;
  g.mean = sum / n;
  if (n > 1) {
    double ss = 0;
    for (std::size_t i = 0; i < units.size(); ++i) {
      if (states[i] != side || label_index(units[i].meta.label) != label || !units[i].values[fi]) continue;
      const auto d = *units[i].values[fi] - g.mean;
      ss += static_cast<double>(units[i].sessions.size()) * d * d;
    }
    g.sd = std::sqrt(ss / (n - 1));
  }
  return g;
}

inline BalanceReport build_report(const std::vector<SplitUnit>& units, const SplitState& st, const SplitSpec& spec,
                                  std::array<std::array<std::size_t, 2>, 2> targets) {
  BalanceReport rep;
  rep.targets = targets;
  for (std::size_t l = 0; l < 2; ++l)
    for (int s = 0; s < 2; ++s) rep.counts[l][static_cast<std::size_t>(s)] = st.count(l, s);
  for (auto f : kAllBalanceFields) {
    auto& cell = rep.stats[f];
    for (std::size_t l = 0; l < 2; ++l)
      for (int s = 0; s < 2; ++s) cell[l][static_cast<std::size_t>(s)] = weighted_stats(units, st.states(), f, l, s);
  }
  bool ok = rep.counts == targets;
  for (const auto& [f, tol] : spec.group_tolerance) {
    if (auto r = st.group_residual(f)) {
      rep.residuals.push_back({"group", f, *r, tol, *r <= tol});
      ok = ok && *r <= tol;
    }
  }
  for (const auto& [f, tol] : spec.side_tolerance) {
    for (std::size_t l = 0; l < 2; ++l) {
      if (auto r = st.side_residual(f, l)) {
        rep.residuals.push_back({std::string("side:") + (l == 0 ? "AD" : "HC"), f, *r, tol, *r <= tol});
        ok = ok && *r <= tol;
      }
    }
  }
  rep.feasible = ok;
  return rep;
}

}  // namespace detail

/// Balanced, speaker-disjoint train/test assignment. All sessions of a subject
/// share a side; a subject may also be left out when the labels are uneven.
///
/// Search: seeded random label-stratified start, then first-improvement hill
/// climbing over same-label state swaps and single-subject moves, minimising
/// (count deviation, max normalised residual, sum of normalised residuals).
/// The best of `spec.restarts` restarts is returned, earliest restart on ties.
template <std::ranges::input_range Range>
  requires SessionRecord<std::ranges::range_value_t<Range>>
Split make_split(const Range& corpus, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    fail(ErrorCode::Config, "train_fraction must lie in (0, 1)");
  }
  for (const auto* tols : {&spec.group_tolerance, &spec.side_tolerance})
    for (const auto& [f, tol] : *tols)
      if (!(tol > 0)) fail(ErrorCode::Config, std::string("tolerance for ") + std::string(to_string(f)) + " must be positive");

  const auto units = detail::collect_units(corpus, spec);
  std::array<std::vector<std::size_t>, 2> by_label;
  std::array<std::size_t, 2> available{};
  for (std::size_t i = 0; i < units.size(); ++i) {
    const auto l = detail::label_index(units[i].meta.label);
    by_label[l].push_back(i);
    if (units[i].train_ok || units[i].test_ok) available[l] += units[i].sessions.size();
  }
  if (by_label[0].size() < 2 || by_label[1].size() < 2) {
    fail(ErrorCode::Infeasible, "need at least 2 subjects per label");
  }
  const auto per_label = spec.per_label_total.value_or(std::min(available[0], available[1]));
  const auto train_target = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(per_label)));
  std::array<std::array<std::size_t, 2>, 2> targets{};
  for (auto& t : targets) t = {train_target, per_label - train_target};

  std::optional<detail::SplitState::Key> best_key;
  std::vector<int> best_states;

  for (int restart = 0; restart < std::max(1, spec.restarts); ++restart) {
    Rng rng(spec.seed, static_cast<std::uint64_t>(restart));
    detail::SplitState st(units, spec, targets);
    for (std::size_t l = 0; l < 2; ++l) {
      auto order = by_label[l];
      rng.shuffle(std::span<std::size_t>(order));
      for (auto i : order) {
        const auto n = units[i].sessions.size();
        if (units[i].train_ok && st.count(l, 0) + n <= targets[l][0]) {
          st.set(i, 0);
        } else if (units[i].test_ok && st.count(l, 1) + n <= targets[l][1]) {
          st.set(i, 1);
        }
      }
    }

    auto allowed = [&](std::size_t i, int s) {
      return s == detail::SplitState::kUnused || (s == 0 ? units[i].train_ok : units[i].test_ok);
    };

    auto current = st.key();
    long steps = 0;
    bool improved = true;
    while (improved && steps < spec.max_steps && (current.count_dev > 0 || current.max_norm > 0)) {
      improved = false;
      for (std::size_t l = 0; l < 2 && !improved; ++l) {
        const auto& members = by_label[l];
        const auto m = members.size();
        const auto off_a = static_cast<std::size_t>(rng.below(m));
        const auto off_b = static_cast<std::size_t>(rng.below(m));
        for (std::size_t a = 0; a < m && !improved; ++a) {
          const auto i = members[(a + off_a) % m];
          const int si = st.state(i);
          // single-subject moves
          for (int target = 0; target < 3 && !improved; ++target) {
            if (target == si || !allowed(i, target)) continue;
            st.set(i, target);
            ++steps;
            if (auto k = st.key(); k < current) {
              current = k;
              improved = true;
            } else {
              st.set(i, si);
            }
          }
          // swaps with another same-label subject
          for (std::size_t b = 0; b < m && !improved; ++b) {
            const auto j = members[(b + off_b) % m];
            const int sj = st.state(j);
            if (sj == si || !allowed(i, sj) || !allowed(j, si)) continue;
            st.set(i, sj);
            st.set(j, si);
            ++steps;
            if (auto k = st.key(); k < current) {
              current = k;
              improved = true;
            } else {
              st.set(j, sj);
              st.set(i, si);
            }
          }
        }
      }
    }
    if (!best_key || current < *best_key) {
      best_key = current;
      best_states = st.states();
    }
  }

  detail::SplitState final_state(units, spec, targets);
  for (std::size_t i = 0; i < units.size(); ++i) final_state.set(i, best_states[i]);
  Split split;
  split.report = detail::build_report(units, final_state, spec, targets);
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (best_states[i] == detail::SplitState::kUnused) continue;
    auto& side = best_states[i] == 0 ? split.train : split.test;
    for (const auto& s : units[i].sessions) side.insert({units[i].meta.subject_id, s});
  }
  if (!split.report.feasible) {
    std::string msg = "no assignment within tolerance after " + std::to_string(spec.restarts) + " restarts; best residuals:";
    for (const auto& r : split.report.residuals) {
      msg += " " + r.level + "/" + std::string(to_string(r.field)) + "=" + io::format_fixed(r.value, 4) + "(tol " +
             io::format_fixed(r.tolerance, 4) + ")";
    }
    msg += "; counts AD " + std::to_string(split.report.counts[0][0]) + "/" + std::to_string(split.report.counts[0][1]) +
           " HC " + std::to_string(split.report.counts[1][0]) + "/" + std::to_string(split.report.counts[1][1]) +
           " (target " + std::to_string(targets[0][0]) + "/" + std::to_string(targets[0][1]) + ")";
    throw InfeasibleSplit(msg, split.report);
  }
  return split;
}

// ---------------------------------------------------------------------------
// Invariant checks and cross-split leakage.

/// Returns a description of every violated Split invariant; empty when valid.
template <std::ranges::input_range Range>
  requires SessionRecord<std::ranges::range_value_t<Range>>
std::vector<std::string> check_split(const Split& split, const Range& corpus, const SplitSpec& spec) {
  std::map<std::string, Label> labels;
  for (const auto& rec : corpus) labels[record_meta(rec).subject_id] = record_meta(rec).label;
  std::vector<std::string> problems;
  std::set<std::string> train_subjects, test_subjects;
  for (const auto& r : split.train) train_subjects.insert(r.subject_id);
  for (const auto& r : split.test) test_subjects.insert(r.subject_id);
  for (const auto& s : train_subjects) {
    if (test_subjects.contains(s)) problems.push_back("subject " + s + " on both sides");
    if (spec.exclusions.contains(s)) problems.push_back("excluded subject " + s + " in train");
  }
  for (const auto& s : test_subjects)
    if (spec.test_exclusions.contains(s)) problems.push_back("excluded subject " + s + " in test");
  for (const auto* side : {&split.train, &split.test}) {
    long ad = 0, hc = 0;
    for (const auto& r : *side) {
      auto it = labels.find(r.subject_id);
      if (it == labels.end()) {
        problems.push_back("unknown subject " + r.subject_id);
        continue;
      }
      (it->second == Label::AD ? ad : hc) += 1;
    }
    if (std::abs(ad - hc) > 1)
      problems.push_back(std::string(side == &split.train ? "train" : "test") + " label counts differ by " +
                         std::to_string(std::abs(ad - hc)));
  }
  return problems;
}

struct LeakageViolation {
  std::string subject_id;
  std::string direction;  // e.g. "a.test->b.train"

  bool operator==(const LeakageViolation&) const = default;
};

/// Every subject present on the test side of one split and the train side of
/// the other. verify_leakage(s, s) therefore reports s's own overlap.
inline std::vector<LeakageViolation> verify_leakage(const Split& a, const Split& b) {
  auto subjects = [](const std::set<TranscriptRef>& refs) {
    std::set<std::string> out;
    for (const auto& r : refs) out.insert(r.subject_id);
    return out;
  };
  const auto a_train = subjects(a.train), a_test = subjects(a.test);
  const auto b_train = subjects(b.train), b_test = subjects(b.test);
  std::vector<LeakageViolation> out;
  for (const auto& s : a_test)
    if (b_train.contains(s)) out.push_back({s, "a.test->b.train"});
  for (const auto& s : a_train)
    if (b_test.contains(s)) out.push_back({s, "a.train->b.test"});
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline std::string render_split(const Split& split) {
  io::Table t;
  t.header = {"side", "subject_id", "session_id"};
  for (const auto& r : split.train) t.rows.push_back({"train", r.subject_id, r.session_id});
  for (const auto& r : split.test) t.rows.push_back({"test", r.subject_id, r.session_id});
  return io::render_table(t, '\t');
}

inline void write_split(const Split& split, const std::filesystem::path& path) {
  io::write_file(path, render_split(split));
}

inline Split read_split(const std::filesystem::path& path) {
  const auto t = io::read_table(path, '\t', ErrorCode::MalformedManifest);
  const auto ctx = path.string();
  const auto c_side = t.require_column("side", ErrorCode::MalformedManifest, ctx);
  const auto c_sub = t.require_column("subject_id", ErrorCode::MalformedManifest, ctx);
  const auto c_ses = t.require_column("session_id", ErrorCode::MalformedManifest, ctx);
  Split s;
  for (const auto& row : t.rows) {
    TranscriptRef ref{row[c_sub], row[c_ses]};
    if (row[c_side] == "train") {
      if (!s.train.insert(ref).second) fail(ErrorCode::DuplicateSession, ctx + ": " + ref.str());
    } else if (row[c_side] == "test") {
      if (!s.test.insert(ref).second) fail(ErrorCode::DuplicateSession, ctx + ": " + ref.str());
    } else {
      fail(ErrorCode::MalformedManifest, ctx + ": side must be 'train' or 'test', got '" + row[c_side] + "'");
    }
  }
  return s;
}

inline nlohmann::json to_json(const BalanceReport& rep) {
  nlohmann::json j;
  j["feasible"] = rep.feasible;
  for (std::size_t l = 0; l < 2; ++l) {
    const auto name = std::string(l == 0 ? "AD" : "HC");
    j["counts"][name] = {{"train", rep.counts[l][0]}, {"test", rep.counts[l][1]}};
    j["targets"][name] = {{"train", rep.targets[l][0]}, {"test", rep.targets[l][1]}};
  }
  for (const auto& [f, cells] : rep.stats) {
    auto& jf = j["fields"][std::string(to_string(f))];
    for (std::size_t l = 0; l < 2; ++l)
      for (std::size_t s = 0; s < 2; ++s) {
        const auto& g = cells[l][s];
        jf[l == 0 ? "AD" : "HC"][s == 0 ? "train" : "test"] = {
            {"mean", g.mean}, {"sd", g.sd}, {"n", g.n}, {"missing", g.missing}};
      }
  }
  j["residuals"] = nlohmann::json::array();
  for (const auto& r : rep.residuals) {
    j["residuals"].push_back({{"level", r.level},
                              {"field", std::string(to_string(r.field))},
                              {"value", r.value},
                              {"tolerance", r.tolerance},
                              {"within", r.within}});
  }
  return j;
}

inline std::string render_balance_table(const BalanceReport& rep) {
  std::string out = "field      label side   n     missing mean      sd\n";
  for (const auto& [f, cells] : rep.stats) {
    for (std::size_t l = 0; l < 2; ++l)
      for (std::size_t s = 0; s < 2; ++s) {
        const auto& g = cells[l][s];
        char line[160];
        std::snprintf(line, sizeof line, "%-10s %-5s %-6s %-5zu %-7zu %-9s %s\n", std::string(to_string(f)).c_str(),
                      l == 0 ? "AD" : "HC", s == 0 ? "train" : "test", g.n, g.missing,
                      io::format_fixed(g.mean, 3).c_str(), io::format_fixed(g.sd, 3).c_str());
        out += line;
      }
  }
  out += "\nresidual   field      value     tolerance within\n";
  for (const auto& r : rep.residuals) {
    char line[160];
    std::snprintf(line, sizeof line, "%-10s %-10s %-9s %-9s %s\n", r.level.c_str(), std::string(to_string(r.field)).c_str(),
                  io::format_fixed(r.value, 4).c_str(), io::format_fixed(r.tolerance, 4).c_str(), r.within ? "yes" : "NO");
    out += line;
  }
  char line[160];
  std::snprintf(line, sizeof line, "\ncounts     AD %zu/%zu  HC %zu/%zu  (train/test)\n", rep.counts[0][0], rep.counts[0][1],
                rep.counts[1][0], rep.counts[1][1]);
  out += line;
  return out;
}

}  // namespace pplad
