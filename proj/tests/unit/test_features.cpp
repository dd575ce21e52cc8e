#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "pplad/features.hpp"
#include "pplad/rng.hpp"
#include "tmpdir.hpp"

using namespace pplad;

namespace {

ErrorCode error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::Io;
}

double feature(const std::string& text, const std::string& name) {
  return extract_features(transcript_from_text("S", "1", text)).values.at(name);
}

FeatureVector fv(const std::string& id, std::map<std::string, double> values) { return {{id, "1"}, std::move(values)}; }

}  // namespace

TEST(Features, HandCounts) {
  EXPECT_EQ(feature("the the the .", "ttr"), 0.5);
  EXPECT_EQ(feature("the the the .", "type_count"), 2.0);
  EXPECT_EQ(feature("the the the .", "repetition_rate"), 0.5);
  EXPECT_DOUBLE_EQ(feature("uh the boy um falls .", "filler_rate"), 2.0 / 6.0);
  EXPECT_EQ(feature("hello", "ttr"), 1.0);
  EXPECT_EQ(feature("the boy . he falls .", "mean_sentence_len"), 2.0);
  EXPECT_DOUBLE_EQ(feature("the boy . he falls .", "pronoun_ratio"), 1.0 / 6.0);
  EXPECT_DOUBLE_EQ(feature("ab abcd .", "mean_word_length"), 3.0);
  EXPECT_EQ(feature("ab abcd", "mean_sentence_len"), 2.0);
}

TEST(Features, LexicalRichnessFormulas) {
  // n = 6, V = 4 (the, boy, falls, .), hapax = 3
  const auto v = extract_features(transcript_from_text("S", "1", "the boy the falls the .")).values;
  EXPECT_DOUBLE_EQ(v.at("brunet_w"), std::pow(6.0, std::pow(4.0, -0.165)));
  EXPECT_DOUBLE_EQ(v.at("honore_r"), 100.0 * std::log(6.0) / (1.0 - 3.0 / 4.0));
  // all hapaxes: floored denominator 1/V
  EXPECT_DOUBLE_EQ(feature("a b c", "honore_r"), 100.0 * std::log(3.0) * 3.0);
  EXPECT_TRUE(std::isfinite(feature("a", "honore_r")));
}

TEST(Features, RareWordsUseTopList) {
  FeatureConfig cfg;
  cfg.frequency_list = {"the", "boy", "a"};
  cfg.top_k = 2;
  cfg.enabled = {"rare_word_rate"};
  const auto v = extract_features(transcript_from_text("S", "1", "the boy a cookie ."), cfg);
  EXPECT_EQ(v.values.size(), 1u);
  EXPECT_DOUBLE_EQ(v.values.at("rare_word_rate"), 2.0 / 5.0);
}

TEST(Features, DuplicationDoublesCountKeepsTtr) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::string text;
    for (std::size_t i = 0, n = 1 + rng.below(30); i < n; ++i) text += "w" + std::to_string(rng.below(10)) + " ";
    const auto once = extract_features(transcript_from_text("S", "1", text)).values;
    const auto twice = extract_features(transcript_from_text("S", "1", text + text)).values;
    EXPECT_EQ(twice.at("token_count"), 2 * once.at("token_count"));
    EXPECT_LE(twice.at("ttr"), once.at("ttr"));
  }
}

TEST(Features, DefaultSetAndUnknownName) {
  const auto v = extract_features(transcript_from_text("S", "1", "the boy ."));
  EXPECT_EQ(v.values.size(), default_feature_names().size());
  for (const auto& [k, x] : v.values) EXPECT_TRUE(std::isfinite(x)) << k;
  FeatureConfig cfg;
  cfg.enabled = {"ttr", "pos_tags"};
  EXPECT_EQ(error_of([&] { extract_features(transcript_from_text("S", "1", "a"), cfg); }), ErrorCode::Config);
}

TEST(Ks, Examples) {
  const std::vector<double> a = {1, 2, 3}, b = {2, 3, 4};
  EXPECT_DOUBLE_EQ(ks_two_sample(a, b).statistic, 1.0 / 3.0);
  EXPECT_EQ(ks_two_sample(std::vector<double>{0, 1}, std::vector<double>{10, 11}).statistic, 1.0);
  const auto same = ks_two_sample(a, a);
  EXPECT_EQ(same.statistic, 0.0);
  EXPECT_EQ(same.p_value, 1.0);
  EXPECT_FALSE(same.significant);
  EXPECT_TRUE(same.small_sample);
  EXPECT_EQ(error_of([&] { ks_two_sample(a, std::vector<double>{}); }), ErrorCode::EmptySample);
  EXPECT_EQ(error_of([&] { ks_two_sample(a, std::vector<double>{NAN}); }), ErrorCode::InvalidScores);
}

TEST(Ks, KolmogorovDistributionValues) {
  // reference values of the Kolmogorov survival function
  const std::vector<std::pair<double, double>> ref = {
      {0.3, 0.9999906941986655}, {0.5, 0.9639452436648751},    {1.0, 0.26999967167735456},
      {1.17, 0.12939004218561884}, {1.19, 0.11774229287977166}, {1.36, 0.049485876755377876},
      {2.0, 0.0006709252557796953}, {3.0, 3.045995948942526e-08}};
  for (const auto& [lambda, q] : ref) EXPECT_NEAR(kolmogorov_q(lambda), q, 1e-12 + 1e-9 * q) << lambda;
  EXPECT_EQ(kolmogorov_q(0), 1.0);
  EXPECT_EQ(kolmogorov_q(40), 0.0);
}

TEST(Ks, PValueUsesEffectiveN) {
  std::vector<double> a(40), b(50);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<double>(i);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = static_cast<double>(i) + 9.5;
  const auto r = ks_two_sample(a, b);
  const double ne = 40.0 * 50.0 / 90.0;
  EXPECT_DOUBLE_EQ(r.p_value, kolmogorov_q((std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * r.statistic));
  EXPECT_FALSE(r.small_sample);
  // fully separated large samples: p clamped above zero
  std::vector<double> far(200, 1e6);
  EXPECT_GT(ks_two_sample(a, far).p_value, 0.0);
}

TEST(Ks, SymmetricAndMonotoneInvariant) {
  Rng rng(21);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> a(1 + rng.below(30)), b(1 + rng.below(30));
    for (auto& x : a) x = static_cast<double>(rng.below(12)) * 0.5;
    for (auto& x : b) x = static_cast<double>(rng.below(12)) * 0.5 + 0.5;
    const auto ab = ks_two_sample(a, b), ba = ks_two_sample(b, a);
    EXPECT_EQ(ab.statistic, ba.statistic);
    EXPECT_EQ(ab.p_value, ba.p_value);
    auto ta = a, tb = b;
    for (auto& x : ta) x = std::exp(x) - 3;
    for (auto& x : tb) x = std::exp(x) - 3;
    EXPECT_EQ(ks_two_sample(ta, tb).statistic, ab.statistic);
  }
}

TEST(CompareSets, IdenticalSetsNothingSignificant) {
  std::vector<FeatureVector> set;
  for (int i = 0; i < 25; ++i) set.push_back(fv("S" + std::to_string(i), {{"x", i * 1.0}, {"y", i % 3 * 1.0}}));
  const auto rep = compare_sets(set, set);
  EXPECT_EQ(rep.results.size(), 2u);
  EXPECT_EQ(rep.n_significant, 0u);
  for (const auto& r : rep.results) EXPECT_EQ(r.statistic, 0.0);
  EXPECT_EQ(rep.means_a.at("x"), 12.0);
  const auto text = render_ks_report(rep);
  EXPECT_EQ(text.rfind("# significant 0 of 2 features at alpha 0.05\n", 0), 0u);
}

TEST(CompareSets, ShiftedFeatureDetected) {
  // one shifted feature, one unshifted: repeated trials
  Rng rng(77);
  int detected = 0, false_alarms = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    std::vector<FeatureVector> a, b;
    for (int i = 0; i < 60; ++i) {
      a.push_back(fv("A" + std::to_string(i), {{"shifted", rng.uniform()}, {"same", rng.uniform()}}));
      b.push_back(fv("B" + std::to_string(i), {{"shifted", rng.uniform() + 0.4}, {"same", rng.uniform()}}));
    }
    const auto rep = compare_sets(a, b);
    for (const auto& r : rep.results) {
      if (r.feature_name == "shifted") detected += r.significant;
      if (r.feature_name == "same") false_alarms += r.significant;
    }
  }
  EXPECT_GE(detected, trials * 95 / 100);
  EXPECT_LE(false_alarms, trials * 10 / 100);
}

TEST(CompareSets, Mismatch) {
  std::vector<FeatureVector> a = {fv("A", {{"x", 1}})}, b = {fv("B", {{"y", 1}})};
  EXPECT_EQ(error_of([&] { compare_sets(a, b); }), ErrorCode::FeatureSetMismatch);
  a.push_back(fv("A2", {{"x", 1}, {"z", 2}}));
  EXPECT_EQ(error_of([&] { compare_sets(a, a); }), ErrorCode::FeatureSetMismatch);
  EXPECT_EQ(error_of([&] { compare_sets({}, b); }), ErrorCode::EmptySample);
}

TEST(FeatureMatrix, RoundTripAndMerge) {
  testkit::TempDir dir;
  std::vector<FeatureVector> rows = {fv("A", {{"ttr", 0.5}, {"token_count", 10}}), fv("B", {{"ttr", 0.25}, {"token_count", 3}})};
  io::write_file(dir / "f.tsv", render_feature_matrix(rows));
  const auto back = read_feature_matrix(dir / "f.tsv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].values, rows[1].values);

  io::write_file(dir / "ext.tsv", "subject_id\tsession_id\tparse_depth\nB\t1\t4.5\nA\t1\t3\n");
  auto merged = rows;
  merge_external_features(merged, read_feature_matrix(dir / "ext.tsv"));
  EXPECT_EQ(merged[0].values.at("parse_depth"), 3.0);
  EXPECT_EQ(merged[1].values.size(), 3u);

  EXPECT_EQ(error_of([&] { merge_external_features(merged, read_feature_matrix(dir / "ext.tsv")); }),
            ErrorCode::FeatureSetMismatch);
  io::write_file(dir / "short.tsv", "subject_id\tsession_id\tparse_depth\nA\t1\t3\n");
  auto again = rows;
  EXPECT_EQ(error_of([&] { merge_external_features(again, read_feature_matrix(dir / "short.tsv")); }),
            ErrorCode::FeatureSetMismatch);
  io::write_file(dir / "bad.tsv", "subject_id\tsession_id\tx\nA\t1\tabc\n");
  EXPECT_EQ(error_of([&] { read_feature_matrix(dir / "bad.tsv"); }), ErrorCode::FeatureSetMismatch);
}
