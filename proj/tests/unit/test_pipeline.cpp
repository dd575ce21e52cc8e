#include <gtest/gtest.h>

#include <functional>

#include "pplad/pplad.hpp"
#include "synthetic.hpp"
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

std::string tree_digest(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string out;
  for (const auto& f : files) out += fs::relative(f, root).generic_string() + " " + io::hash_hex(io::read_file(f)) + "\n";
  return out;
}

// Small two-dialect corpus on disk plus a config pointing at it.
struct Fixture {
  testkit::TempDir dir;
  std::vector<LabeledTranscript> corpus;

  explicit Fixture(std::size_t per_label = 40) {
    testkit::DialectSpec spec;
    spec.per_label = per_label;
    spec.sentences = 8;
    corpus = testkit::make_dialect_corpus(spec);
    write_transcripts(corpus, dir / "transcripts.jsonl");
  }

  Config config(const std::string& extra = "") const {
    return Config::parse("[data]\ntranscripts = transcripts.jsonl\n"
                         "[split]\ngroup_tolerance = age:3, gender:0.2, education:1.5\n"
                         "side_tolerance = age:3, gender:0.2, education:1.5, mmse:2\n"
                         "[run]\nseeds = 0-2\noutput_dir = out\n" +
                         extra);
  }
};

}  // namespace

TEST(ConfigFile, Grammar) {
  const auto c = Config::parse(
      "# leading comment\n"
      "top = 1\n"
      "[backend]\n"
      "; semicolon comment\n"
      "  order =  4 \n"
      "kind=ngram\n"
      "[run]\n"
      "variants = d, d_bar\n"
      "flag = yes\n");
  EXPECT_EQ(c.get("top"), "1");
  EXPECT_EQ(c.get_int("backend.order"), 4);
  EXPECT_EQ(c.get("backend.kind"), "ngram");
  EXPECT_EQ(c.get_list("run.variants"), (std::vector<std::string>{"d", "d_bar"}));
  EXPECT_EQ(c.get_bool("run.flag"), true);
  EXPECT_FALSE(c.get("run.missing").has_value());
  EXPECT_EQ(c.get_or("run.missing", "x"), "x");

  EXPECT_EQ(error_of([] { Config::parse("[a]\nk = 1\nk = 2\n"); }), ErrorCode::Config);
  EXPECT_EQ(error_of([] { Config::parse("[a\n"); }), ErrorCode::Config);
  EXPECT_EQ(error_of([] { Config::parse("[]\n"); }), ErrorCode::Config);
  EXPECT_EQ(error_of([] { Config::parse("no equals sign\n"); }), ErrorCode::Config);
  EXPECT_EQ(error_of([] { Config::parse(" = 3\n"); }), ErrorCode::Config);
  EXPECT_EQ(error_of([&] { c.get_int("backend.kind"); }), ErrorCode::Config);
  EXPECT_EQ(error_of([&] { c.get_double("run.variants"); }), ErrorCode::Config);
}

TEST(ConfigFile, OverridesAndCanonicalForm) {
  auto c = Config::parse("[b]\nx = 1\n[a]\ny = 2\n");
  c.set_override("b.x=5");
  c.set_override("c.z = new");
  EXPECT_EQ(c.get("b.x"), "5");
  EXPECT_EQ(c.canonical(), "a.y = 2\nb.x = 5\nc.z = new\n");
  EXPECT_EQ(c.canonical({"b.x"}), "a.y = 2\nc.z = new\n");
  EXPECT_EQ(error_of([&] { c.set_override("novalue"); }), ErrorCode::Usage);
  EXPECT_EQ(error_of([&] { c.require_known({"a.y"}); }), ErrorCode::Config);
}

TEST(SeedList, Forms) {
  EXPECT_EQ(parse_seed_list("0-4"), (std::vector<std::int64_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(parse_seed_list("7, 3,\n11 20-21"), (std::vector<std::int64_t>{7, 3, 11, 20, 21}));
  EXPECT_EQ(parse_seed_list("0-49").size(), 50u);
  EXPECT_EQ(error_of([] { parse_seed_list(""); }), ErrorCode::Config);
  EXPECT_EQ(error_of([] { parse_seed_list("1,1"); }), ErrorCode::Config);
  EXPECT_EQ(error_of([] { parse_seed_list("5-2"); }), ErrorCode::Config);
  EXPECT_EQ(error_of([] { parse_seed_list("x"); }), ErrorCode::Config);
}

TEST(ExperimentConfigParse, DefaultsAndErrors) {
  const auto e = experiment_config(Config::parse("[data]\ntranscripts = t.jsonl\n"), "/base");
  EXPECT_EQ(*e.transcripts, fs::path("/base/t.jsonl"));
  EXPECT_EQ(e.seeds.size(), 50u);
  EXPECT_EQ(e.seeds.front(), 0);
  EXPECT_EQ(e.variants.size(), 4u);
  EXPECT_EQ(e.ngram.order, 3);
  EXPECT_EQ(e.ngram.smoothing, Smoothing::witten_bell());
  EXPECT_EQ(e.split_spec.train_fraction, 0.7);
  EXPECT_TRUE(e.resample);

  const auto t = experiment_config(
      Config::parse("[data]\ntranscripts = t.jsonl\n[split]\ngroup_tolerance = none\nside_tolerance = age: 4\n"));
  EXPECT_TRUE(t.split_spec.group_tolerance.empty());
  EXPECT_EQ(t.split_spec.side_tolerance, (std::map<BalanceField, double>{{BalanceField::Age, 4.0}}));

  auto bad = [](const std::string& extra) {
    return error_of([&] { experiment_config(Config::parse("[data]\ntranscripts = t.jsonl\n" + extra)); });
  };
  EXPECT_EQ(bad("[backend]\nkind = neural\n"), ErrorCode::Config);
  EXPECT_EQ(bad("[backend]\nkind = external\n"), ErrorCode::Config);
  EXPECT_EQ(bad("[backend]\nsmoothing = kneser_ney\n"), ErrorCode::Config);
  EXPECT_EQ(bad("[backend]\norder = 0\n"), ErrorCode::Config);
  EXPECT_EQ(bad("[run]\nvariants = d, ratio\n"), ErrorCode::Config);
  EXPECT_EQ(bad("[run]\nworkers = 0\n"), ErrorCode::Config);
  EXPECT_EQ(bad("[run]\ntypo = 1\n"), ErrorCode::Config);
  EXPECT_EQ(bad("[split]\nside_tolerance = age=2\n"), ErrorCode::Config);
  EXPECT_EQ(bad("[data]\nmanifest = m.tsv\n"), ErrorCode::Config);
  EXPECT_EQ(error_of([] { experiment_config(Config::parse("[run]\nseeds = 1\n")); }), ErrorCode::Config);
}

TEST(ExperimentConfigParse, HashIgnoresOutputDirAndWorkers) {
  const auto a = experiment_config(Config::parse("[data]\ntranscripts = t\n[run]\noutput_dir = x\nworkers = 2\n"));
  const auto b = experiment_config(Config::parse("[run]\nworkers = 8\n[data]\ntranscripts = t\n"));
  const auto c = experiment_config(Config::parse("[data]\ntranscripts = t\n[run]\nseeds = 0-3\n"));
  EXPECT_EQ(a.config_hash, b.config_hash);
  EXPECT_NE(a.config_hash, c.config_hash);
}

TEST(DiffTable, RoundTrip) {
  testkit::TempDir dir;
  std::vector<DiffRow> rows;
  rows.push_back({diff_scores({{"A", "1"}, 3, 12.5, 10.0}, {-5, 5, 1, 1}), Label::AD, 18});
  rows.push_back({diff_scores({{"B", "2"}, 3, 4.0, 1.0}, {-5, 5, 1, 1}), Label::HC, std::nullopt});
  const auto text = render_diff_table(rows, "cafe");
  EXPECT_EQ(text.rfind("# config_hash=cafe\nsubject_id\tsession_id\tseed\tlabel\tmmse\tppl_ad\tppl_c\td\td_log_norm\td_bar\td_bar_star\n", 0),
            0u);
  io::write_file(dir / "t.tsv", text);
  const auto back = read_diff_table(dir / "t.tsv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].scores.d_bar, rows[0].scores.d_bar);
  EXPECT_EQ(back[0].scores.d_log_norm, rows[0].scores.d_log_norm);
  EXPECT_EQ(back[0].mmse, 18);
  EXPECT_FALSE(back[1].mmse.has_value());
  EXPECT_FALSE(back[1].scores.d_log_norm.has_value());
  EXPECT_EQ(render_diff_table(back, "cafe"), text);
  EXPECT_EQ(samples_for(back, ScoreVariant::DLogNorm).size(), 1u);
  EXPECT_EQ(samples_for(back, ScoreVariant::DBar).size(), 2u);
}

TEST(RunExperiment, NgramSmallRun) {
  Fixture fx;
  auto cfg = experiment_config(fx.config(), fx.dir.path());
  const auto result = run_experiment(cfg);
  EXPECT_EQ(result.completed_seeds, (std::vector<std::int64_t>{0, 1, 2}));
  EXPECT_TRUE(result.failed_seeds.empty());
  ASSERT_EQ(result.variants.size(), 4u);
  const auto out = fx.dir / "out";
  for (const char* f : {"split.tsv", "balance.json", "report.json", "report.txt", "manifest.json", "aggregated_scores.tsv",
                        "seeds/0/diff_scores.tsv", "seeds/2/scores.jsonl"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  // every output carries the config hash
  for (const char* f : {"split.tsv", "report.json", "report.txt", "manifest.json", "aggregated_scores.tsv",
                        "seeds/1/diff_scores.tsv", "seeds/1/scores.jsonl", "balance.json"})
    EXPECT_NE(io::read_file(out / f).find(cfg.config_hash), std::string::npos) << f;

  const auto report = nlohmann::json::parse(io::read_file(out / "report.json"));
  EXPECT_EQ(report["n_test"].get<std::size_t>(), result.split.test.size());
  EXPECT_EQ(report["variants"]["d"]["orientation"], "higher_is_hc");
  const auto d_bar = report["variants"]["d_bar"]["summary"];
  EXPECT_GT(d_bar["auc"]["agg"].get<double>(), 0.8);
  // scores written per seed: two records per test transcript
  const auto set = load_scores(out / "seeds/0/scores.jsonl");
  EXPECT_EQ(set.records.size(), 2 * result.split.test.size());
  // diff tables re-evaluate to the same per-seed numbers
  const auto rows = read_diff_table(out / "seeds/1/diff_scores.tsv");
  const auto rep = evaluate(samples_for(rows, ScoreVariant::DBar), Label::AD, Orientation::HigherIsAD);
  EXPECT_EQ(rep.auc, result.variants[2].per_seed[1].second.auc);
}

TEST(RunExperiment, DeterministicAcrossRunsAndWorkers) {
  Fixture fx;
  auto cfg = experiment_config(fx.config(), fx.dir.path());
  cfg.output_dir = fx.dir / "a";
  run_experiment(cfg);
  cfg.output_dir = fx.dir / "b";
  cfg.workers = 3;
  run_experiment(cfg);
  EXPECT_EQ(tree_digest(fx.dir / "a"), tree_digest(fx.dir / "b"));
  EXPECT_FALSE(tree_digest(fx.dir / "a").empty());
}

TEST(RunExperiment, SeedsDifferWhenResampling) {
  Fixture fx;
  auto cfg = experiment_config(fx.config(), fx.dir.path());
  run_experiment(cfg);
  EXPECT_NE(io::read_file(fx.dir / "out/seeds/0/diff_scores.tsv"), io::read_file(fx.dir / "out/seeds/1/diff_scores.tsv"));
  auto fixed = experiment_config(fx.config("[backend]\nresample = false\n"), fx.dir.path());
  fixed.output_dir = fx.dir / "fixed";
  const auto r = run_experiment(fixed);
  EXPECT_EQ(r.variants[0].per_seed[0].second.auc, r.variants[0].per_seed[2].second.auc);
}

TEST(RunExperiment, PrecomputedSplitAndExternalScores) {
  Fixture fx(20);
  // hand split: first 14 of each label train, the rest test
  Split split;
  for (const auto& t : fx.corpus) {
    const auto idx = std::stoi(t.meta.subject_id.substr(2));
    (idx < 14 ? split.train : split.test).insert(t.ref());
  }
  write_split(split, fx.dir / "split.tsv");
  // external scores: AD model favours AD transcripts
  std::vector<TokenScores> scores;
  Rng rng(5);
  for (std::int64_t seed = 0; seed < 3; ++seed)
    for (const auto& t : fx.corpus) {
      const bool ad = t.meta.label == Label::AD;
      for (auto m : {ModelId::AD, ModelId::C}) {
        std::vector<double> lps(5);
        const double base = (m == ModelId::AD) == ad ? -1.0 : -1.6;
        for (auto& lp : lps) lp = base - 0.8 * rng.uniform();
        scores.push_back({t.ref(), m, seed, lps});
      }
    }
  write_scores(scores, fx.dir / "scores/all.jsonl");
  auto c = fx.config("[backend]\nkind = external\nscore_dir = scores\n");
  c.set("split.path", "split.tsv");
  const auto cfg = experiment_config(c, fx.dir.path());
  const auto result = run_experiment(cfg);
  EXPECT_EQ(result.split, split);
  EXPECT_FALSE(fs::exists(fx.dir / "out/split.tsv"));
  EXPECT_FALSE(fs::exists(fx.dir / "out/seeds/0/scores.jsonl"));
  EXPECT_EQ(result.variants[0].aggregated.auc, 1.0);
  const auto manifest = nlohmann::json::parse(io::read_file(fx.dir / "out/manifest.json"));
  EXPECT_TRUE(manifest["data_hashes"].contains("scores/all.jsonl"));
  EXPECT_TRUE(manifest["data_hashes"].contains("split"));
}

TEST(RunExperiment, PartialSeedFailureReportsCompletedSeeds) {
  Fixture fx(20);
  Split split;
  for (const auto& t : fx.corpus) (std::stoi(t.meta.subject_id.substr(2)) < 14 ? split.train : split.test).insert(t.ref());
  write_split(split, fx.dir / "split.tsv");
  std::vector<TokenScores> scores;
  for (std::int64_t seed = 0; seed < 3; ++seed)
    for (const auto& t : fx.corpus) {
      if (seed == 1 && t.meta.subject_id == "hc0017") continue;  // a test transcript missing at seed 1
      scores.push_back({t.ref(), ModelId::AD, seed, {t.meta.label == Label::AD ? -1.0 : -2.0}});
      scores.push_back({t.ref(), ModelId::C, seed, {-1.5}});
    }
  write_scores(scores, fx.dir / "scores.jsonl");
  auto c = fx.config("[backend]\nkind = external\nscore_dir = scores.jsonl\n");
  c.set("split.path", "split.tsv");
  const auto cfg = experiment_config(c, fx.dir.path());
  try {
    run_experiment(cfg);
    FAIL() << "expected SeedFailure";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SeedFailure);
    EXPECT_NE(std::string(e.what()).find("seed 1"), std::string::npos);
  }
  const auto report = nlohmann::json::parse(io::read_file(fx.dir / "out/report.json"));
  EXPECT_EQ(report["completed_seeds"], nlohmann::json::array({0, 2}));
  EXPECT_TRUE(report["failed_seeds"].contains("1"));
  EXPECT_TRUE(report["variants"].contains("d_bar"));
  EXPECT_FALSE(fs::exists(fx.dir / "out/seeds/1"));
}

TEST(RunExperiment, InvalidSplitRejected) {
  Fixture fx(10);
  Split split;
  split.train = {{"ad0000", "s1"}, {"hc0000", "s1"}};
  split.test = {{"ad0000", "s1"}};
  write_split(split, fx.dir / "split.tsv");
  auto c = fx.config();
  c.set("split.path", "split.tsv");
  EXPECT_EQ(error_of([&] { run_experiment(experiment_config(c, fx.dir.path())); }), ErrorCode::MalformedManifest);
}
