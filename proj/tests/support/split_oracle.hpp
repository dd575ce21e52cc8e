#pragma once

// Brute-force reference for make_split on small corpora: enumerates every
// unused/train/test assignment of subjects and checks the balance rules from
// raw metadata.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pplad/corpus.hpp"
#include "pplad/rng.hpp"

namespace pplad::testkit {

struct OracleSubject {
  SubjectMeta meta;
  std::size_t sessions = 0;
  bool train_ok = true;
  bool test_ok = true;
};

inline std::vector<OracleSubject> oracle_subjects(const std::vector<LabeledTranscript>& corpus, const SplitSpec& spec) {
  std::map<std::string, OracleSubject> by_id;
  for (const auto& t : corpus) {
    auto& s = by_id[t.meta.subject_id];
    s.meta = t.meta;
    s.sessions += 1;
    s.train_ok = !spec.exclusions.contains(t.meta.subject_id);
    s.test_ok = !spec.test_exclusions.contains(t.meta.subject_id);
  }
  std::vector<OracleSubject> out;
  for (auto& [id, s] : by_id) out.push_back(s);
  return out;
}

inline std::optional<double> oracle_value(const SubjectMeta& m, BalanceField f) {
  switch (f) {
    case BalanceField::Age: return m.age;
    case BalanceField::Gender: return m.gender == Gender::F ? 1.0 : 0.0;
    case BalanceField::Education:
      if (m.education) return *m.education;
      return std::nullopt;
    case BalanceField::Mmse:
      if (m.mmse) return *m.mmse;
      return std::nullopt;
  }
  return std::nullopt;
}

// side: 0 train, 1 test, 2 unused
inline bool oracle_feasible(const std::vector<OracleSubject>& subs, const std::vector<int>& side, const SplitSpec& spec) {
  std::array<std::size_t, 2> avail{};
  for (const auto& s : subs)
    if (s.train_ok || s.test_ok) avail[s.meta.label == Label::AD ? 0 : 1] += s.sessions;
  const auto per_label = spec.per_label_total.value_or(std::min(avail[0], avail[1]));
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(per_label)));
  std::size_t counts[2][2] = {};
  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (side[i] == 2) continue;
    if (side[i] == 0 && !subs[i].train_ok) return false;
    if (side[i] == 1 && !subs[i].test_ok) return false;
    counts[subs[i].meta.label == Label::AD ? 0 : 1][side[i]] += subs[i].sessions;
  }
  for (int l = 0; l < 2; ++l)
    if (counts[l][0] != n_train || counts[l][1] != per_label - n_train) return false;

  auto mean = [&](BalanceField f, int label, int which_side) -> std::optional<double> {
    // which_side -1: both sides
    double sum = 0, n = 0;
    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (side[i] == 2 || (subs[i].meta.label == Label::AD ? 0 : 1) != label) continue;
      if (which_side >= 0 && side[i] != which_side) continue;
      auto v = oracle_value(subs[i].meta, f);
      if (!v) continue;
      sum += static_cast<double>(subs[i].sessions) * *v;
      n += static_cast<double>(subs[i].sessions);
    }
    if (n == 0) return std::nullopt;
    return sum / n;
  };
  for (const auto& [f, tol] : spec.group_tolerance) {
    auto a = mean(f, 0, -1), b = mean(f, 1, -1);
    if (a && b && std::abs(*a - *b) > tol) return false;
  }
  for (const auto& [f, tol] : spec.side_tolerance) {
    for (int l = 0; l < 2; ++l) {
      auto a = mean(f, l, 0), b = mean(f, l, 1);
      if (a && b && std::abs(*a - *b) > tol) return false;
    }
  }
  return true;
}

/// Number of feasible assignments (0 means the instance is infeasible).
inline std::size_t oracle_count_feasible(const std::vector<OracleSubject>& subs, const SplitSpec& spec) {
  std::vector<int> side(subs.size(), 0);
  std::size_t feasible = 0;
  while (true) {
    if (oracle_feasible(subs, side, spec)) ++feasible;
    std::size_t k = 0;
    while (k < side.size() && side[k] == 2) side[k++] = 0;
    if (k == side.size()) break;
    ++side[k];
  }
  return feasible;
}

/// Checks a returned Split against the brute-force rules.
inline bool oracle_accepts(const std::vector<OracleSubject>& subs, const Split& split, const SplitSpec& spec) {
  std::vector<int> side(subs.size(), 2);
  for (std::size_t i = 0; i < subs.size(); ++i) {
    std::size_t in_train = 0, in_test = 0;
    for (const auto& r : split.train) in_train += r.subject_id == subs[i].meta.subject_id;
    for (const auto& r : split.test) in_test += r.subject_id == subs[i].meta.subject_id;
    if (in_train && in_test) return false;
    if (in_train) {
      if (in_train != subs[i].sessions) return false;
      side[i] = 0;
    }
    if (in_test) {
      if (in_test != subs[i].sessions) return false;
      side[i] = 1;
    }
  }
  return oracle_feasible(subs, side, spec);
}

inline LabeledTranscript oracle_record(const std::string& subject, const std::string& session, Label label, int age,
                                       Gender g, std::optional<int> edu, std::optional<int> mmse) {
  LabeledTranscript t;
  t.transcript = transcript_from_text(subject, session, "the boy .");
  t.meta = {subject, age, g, edu, mmse, label};
  return t;
}

struct Instance {
  std::vector<LabeledTranscript> corpus;
  SplitSpec spec;
};

// 4..12 subjects, 1-2 sessions each, partially missing metadata and
// tolerances drawn around the spread of the metadata.
inline Instance random_instance(std::uint64_t seed) {
  Rng rng(seed, 99);
  Instance inst;
  const auto n = 4 + rng.below(9);
  for (std::size_t i = 0; i < n; ++i) {
    const Label label = i < 2 ? Label::AD : (i < 4 ? Label::HC : (rng.below(2) ? Label::AD : Label::HC));
    const auto sessions = rng.below(4) == 0 ? 2 : 1;
    const int age = 60 + static_cast<int>(rng.below(20));
    const Gender g = rng.below(2) ? Gender::F : Gender::M;
    std::optional<int> edu;
    if (rng.below(5)) edu = 8 + static_cast<int>(rng.below(9));
    std::optional<int> mmse;
    if (rng.below(4)) mmse = label == Label::AD ? 14 + static_cast<int>(rng.below(10)) : 26 + static_cast<int>(rng.below(5));
    const auto id = "S" + std::to_string(i);
    for (int s = 0; s < sessions; ++s) inst.corpus.push_back(oracle_record(id, std::to_string(s), label, age, g, edu, mmse));
  }
  const double scale = 1.0 + 9.0 * rng.uniform();
  inst.spec.group_tolerance = {{BalanceField::Age, scale}, {BalanceField::Gender, 0.15 * scale},
                               {BalanceField::Education, scale}};
  inst.spec.side_tolerance = {{BalanceField::Age, scale},
                              {BalanceField::Gender, 0.15 * scale},
                              {BalanceField::Education, scale},
                              {BalanceField::Mmse, scale}};
  inst.spec.train_fraction = rng.below(2) ? 0.5 : 0.7;
  if (rng.below(3) == 0) inst.spec.per_label_total = 2;
  if (rng.below(3) == 0) inst.spec.test_exclusions.insert("S" + std::to_string(rng.below(n)));
  if (rng.below(4) == 0) inst.spec.exclusions.insert("S" + std::to_string(rng.below(n)));
  inst.spec.seed = seed;
  return inst;
}

}  // namespace pplad::testkit
