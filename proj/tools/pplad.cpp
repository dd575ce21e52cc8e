// pplad command-line front end. Exit codes: 0 success, 1 data error,
// 2 usage or configuration error.

#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pplad/pplad.hpp"

namespace fs = std::filesystem;
using namespace pplad;

namespace {

void write_or_print(const std::optional<std::string>& out, const std::string& content) {
  if (out) {
    io::write_file(*out, content);
  } else {
    std::cout << content;
  }
}

std::vector<std::int64_t> seeds_from(const std::string& arg) {
  if (fs::is_regular_file(arg)) return parse_seed_list(io::read_file(arg));
  return parse_seed_list(arg);
}

std::vector<LabeledTranscript> select(const std::vector<LabeledTranscript>& corpus, const std::optional<Split>& split,
                                      const std::string& side) {
  if (!split || side == "all") return corpus;
  const auto& refs = side == "train" ? split->train : split->test;
  std::vector<LabeledTranscript> out;
  for (const auto& t : corpus)
    if (refs.contains(t.ref())) out.push_back(t);
  return out;
}

Label label_arg(const std::string& s) {
  auto l = parse_label(s);
  if (!l) fail(ErrorCode::Usage, "label must be AD or HC, got '" + s + "'");
  return *l;
}

ScoreVariant variant_arg(const std::string& s) {
  auto v = parse_variant(s);
  if (!v) fail(ErrorCode::Usage, "unknown score variant '" + s + "'");
  return *v;
}

Config config_with_overrides(const std::optional<std::string>& path, const std::vector<std::string>& overrides) {
  Config c = path ? Config::load(*path) : Config{};
  for (const auto& o : overrides) c.set_override(o);
  return c;
}

// Split and backend settings for the single-step subcommands; the data
// source is taken from the command line when the config has none.
ExperimentConfig partial_config(const std::optional<std::string>& path, const std::vector<std::string>& overrides,
                                const std::string& transcripts) {
  Config c = config_with_overrides(path, overrides);
  if (!c.has("data.manifest") && !c.has("data.transcripts")) c.set("data.transcripts", transcripts);
  return experiment_config(c);
}

std::string report_line(const std::string& name, const std::optional<double>& v) {
  return name + "\t" + (v ? io::format_double(*v) : std::string("NA")) + "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Perplexity-difference dementia detection toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  std::optional<std::string> config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "Config file")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "Config override section.key=value (repeatable)");

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Normalize raw transcripts listed in a manifest");
  std::string pre_manifest, pre_out;
  std::optional<std::string> pre_meta, pre_ipa;
  pre->add_option("--manifest", pre_manifest, "Manifest TSV")->required();
  pre->add_option("--metadata", pre_meta, "Subject metadata TSV");
  pre->add_option("--ipa-map", pre_ipa, "IPA substitution table");
  pre->add_option("--out", pre_out, "Normalized transcripts (JSONL)")->required();

  // split
  auto* spl = app.add_subcommand("split", "Build a balanced, leakage-free train/test split");
  std::string spl_transcripts, spl_out;
  std::optional<std::string> spl_report;
  std::optional<std::uint64_t> spl_seed;
  std::optional<double> spl_frac;
  std::optional<std::size_t> spl_total;
  spl->add_option("--transcripts", spl_transcripts, "Normalized transcripts (JSONL)")->required();
  spl->add_option("--out", spl_out, "Split TSV")->required();
  spl->add_option("--balance-report", spl_report, "Balance report (JSON)");
  spl->add_option("--seed", spl_seed);
  spl->add_option("--train-fraction", spl_frac);
  spl->add_option("--per-label-total", spl_total);

  // verify-leakage
  auto* leak = app.add_subcommand("verify-leakage", "Check that two splits share no subject across sides");
  std::string leak_a, leak_b;
  leak->add_option("--a", leak_a)->required();
  leak->add_option("--b", leak_b)->required();

  // train-ngram
  auto* trn = app.add_subcommand("train-ngram", "Train an n-gram model on one label's train transcripts");
  std::string trn_transcripts, trn_label, trn_out;
  std::optional<std::string> trn_split;
  trn->add_option("--transcripts", trn_transcripts)->required();
  trn->add_option("--split", trn_split, "Restrict to the split's train side");
  trn->add_option("--label", trn_label, "AD or HC")->required();
  trn->add_option("--out", trn_out, "Model file")->required();

  // score
  auto* sco = app.add_subcommand("score", "Per-token log-probabilities under a trained model");
  std::string sco_model, sco_model_id, sco_transcripts, sco_side = "test";
  std::optional<std::string> sco_split, sco_out;
  std::int64_t sco_seed = 0;
  sco->add_option("--model", sco_model)->required()->check(CLI::ExistingFile);
  sco->add_option("--model-id", sco_model_id, "AD or C")->required();
  sco->add_option("--transcripts", sco_transcripts)->required();
  sco->add_option("--split", sco_split);
  sco->add_option("--side", sco_side, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
  sco->add_option("--seed", sco_seed);
  sco->add_option("--out", sco_out, "Score file (JSONL)");

  // ingest-scores
  auto* ing = app.add_subcommand("ingest-scores", "Validate and pair external score files");
  std::string ing_scores;
  std::optional<std::string> ing_out;
  ing->add_option("--scores", ing_scores, "Score file or directory")->required();
  ing->add_option("--out", ing_out, "Write the validated, paired records here");

  // classify
  auto* cls = app.add_subcommand("classify", "Label transcripts from a diff-score table");
  std::string cls_table, cls_variant = "d_bar";
  double cls_threshold = 0;
  std::optional<std::string> cls_out;
  cls->add_option("--scores", cls_table, "Diff-score table")->required();
  cls->add_option("--variant", cls_variant);
  cls->add_option("--threshold", cls_threshold);
  cls->add_option("--out", cls_out);

  // evaluate
  auto* evl = app.add_subcommand("evaluate", "AUC, accuracy at EER and Pearson r for one diff-score table");
  std::string evl_table, evl_variant = "d_bar", evl_metric = "all";
  evl->add_option("--scores", evl_table, "Diff-score table")->required();
  evl->add_option("--variant", evl_variant);
  evl->add_option("--metric", evl_metric)->check(CLI::IsMember({"auc", "acc", "r", "threshold", "all"}));

  // aggregate
  auto* agg = app.add_subcommand("aggregate", "Mean/SD/Best/Agg over per-seed diff-score tables");
  std::vector<std::string> agg_tables, agg_variants;
  std::optional<std::string> agg_out;
  agg->add_option("--scores", agg_tables, "Per-seed diff-score tables")->required();
  agg->add_option("--variants", agg_variants, "Score variants (default: all)");
  agg->add_option("--out", agg_out, "Write the summary JSON here");

  // features
  auto* fea = app.add_subcommand("features", "Extract the surface feature matrix");
  std::string fea_transcripts;
  std::optional<std::string> fea_out, fea_external, fea_top_words, fea_split;
  std::string fea_side = "all";
  std::vector<std::string> fea_names;
  fea->add_option("--transcripts", fea_transcripts)->required();
  fea->add_option("--split", fea_split);
  fea->add_option("--side", fea_side)->check(CLI::IsMember({"train", "test", "all"}));
  fea->add_option("--features", fea_names, "Feature names (default: all)");
  fea->add_option("--top-words", fea_top_words, "Frequency-ranked word list, one per line");
  fea->add_option("--external", fea_external, "Extra feature columns keyed by subject_id/session_id");
  fea->add_option("--out", fea_out);

  // ks
  auto* ks = app.add_subcommand("ks", "Two-sample KS test per feature");
  std::optional<std::string> ks_a, ks_b, ks_matrix, ks_transcripts, ks_out;
  double ks_alpha = 0.05;
  ks->add_option("--a", ks_a, "Feature matrix of group A");
  ks->add_option("--b", ks_b, "Feature matrix of group B");
  ks->add_option("--features", ks_matrix, "One feature matrix, grouped AD vs HC via --transcripts");
  ks->add_option("--transcripts", ks_transcripts);
  ks->add_option("--alpha", ks_alpha);
  ks->add_option("--out", ks_out);

  // emit-instructions
  auto* ins = app.add_subcommand("emit-instructions", "Write per-label instruction datasets");
  std::string ins_transcripts, ins_split, ins_dir;
  std::optional<std::string> ins_prompt, ins_prompt_file;
  ins->add_option("--transcripts", ins_transcripts)->required();
  ins->add_option("--split", ins_split)->required();
  ins->add_option("--out-dir", ins_dir)->required();
  ins->add_option("--prompt", ins_prompt);
  ins->add_option("--prompt-file", ins_prompt_file)->check(CLI::ExistingFile);

  // run
  auto* run = app.add_subcommand("run", "Full multi-seed experiment");
  std::optional<std::string> run_seeds, run_out;
  std::optional<std::size_t> run_workers;
  run->add_option("--seed-list", run_seeds, "Seeds, inline (\"0-49\", \"1,2,3\") or a file");
  run->add_option("--output-dir", run_out);
  run->add_option("--workers", run_workers);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*pre) {
      const auto ipa = pre_ipa ? IpaMap::load(*pre_ipa) : IpaMap{};
      std::optional<fs::path> meta;
      if (pre_meta) meta = *pre_meta;
      const auto corpus = normalize_corpus(parse_corpus(pre_manifest, meta), ipa);
      write_transcripts(corpus, pre_out);
      std::cerr << "normalized " << corpus.size() << " transcripts\n";
    } else if (*spl) {
      auto spec = partial_config(config_path, overrides, spl_transcripts).split_spec;
      if (spl_seed) spec.seed = *spl_seed;
      if (spl_frac) spec.train_fraction = *spl_frac;
      if (spl_total) spec.per_label_total = *spl_total;
      const auto corpus = read_transcripts(spl_transcripts);
      try {
        const auto split = make_split(corpus, spec);
        write_split(split, spl_out);
        if (spl_report) io::write_file(*spl_report, to_json(split.report).dump(2) + "\n");
        std::cerr << render_balance_table(split.report);
      } catch (const InfeasibleSplit& e) {
        std::cerr << render_balance_table(e.best());
        throw;
      }
    } else if (*leak) {
      const auto v = verify_leakage(read_split(leak_a), read_split(leak_b));
      for (const auto& x : v) std::cout << x.subject_id << "\t" << x.direction << "\n";
      if (!v.empty()) {
        std::cerr << v.size() << " leakage violation(s)\n";
        return 1;
      }
    } else if (*trn) {
      const auto opts = partial_config(config_path, overrides, trn_transcripts).ngram;
      const auto label = label_arg(trn_label);
      std::optional<Split> split;
      if (trn_split) split = read_split(*trn_split);
      std::vector<Transcript> ts;
      for (const auto& t : select(read_transcripts(trn_transcripts), split, "train"))
        if (t.meta.label == label) ts.push_back(t.transcript);
      save_ngram(train_ngram(ts, opts), trn_out);
      std::cerr << "trained on " << ts.size() << " transcripts\n";
    } else if (*sco) {
      const auto model = load_ngram(sco_model);
      auto id = parse_model_id(sco_model_id);
      if (!id) fail(ErrorCode::Usage, "--model-id must be AD or C");
      std::optional<Split> split;
      if (sco_split) split = read_split(*sco_split);
      std::vector<TokenScores> scores;
      for (const auto& t : select(read_transcripts(sco_transcripts), split, sco_side))
        scores.push_back(score(model, t.transcript, *id, sco_seed));
      std::string out;
      for (const auto& s : scores) out += render_score_record(s) + "\n";
      write_or_print(sco_out, out);
    } else if (*ing) {
      const auto set = load_scores(ing_scores);
      for (const auto& q : set.quarantined) {
        std::cerr << "quarantined " << q.scores.ref.str() << " model " << to_string(q.scores.model_id) << " seed "
                  << q.scores.seed << ": " << q.reason << "\n";
      }
      std::cerr << set.records.size() << " paired records, " << set.quarantined.size() << " quarantined\n";
      if (ing_out) write_scores(set.records, *ing_out);
    } else if (*cls) {
      const auto v = variant_arg(cls_variant);
      io::Table t;
      t.header = {"subject_id", "session_id", "score", "predicted", "label"};
      for (const auto& s : samples_for(read_diff_table(cls_table), v)) {
        t.rows.push_back({s.ref.subject_id, s.ref.session_id, io::format_double(s.score),
                          std::string(to_string(classify(s.score, orientation_of(v), cls_threshold))),
                          std::string(to_string(s.label))});
      }
      write_or_print(cls_out, io::render_table(t, '\t'));
    } else if (*evl) {
      const auto v = variant_arg(evl_variant);
      const auto samples = samples_for(read_diff_table(evl_table), v);
      const auto rep = evaluate(samples, Label::AD, orientation_of(v));
      if (evl_metric == "auc") {
        std::cout << io::format_double(rep.auc) << "\n";
      } else if (evl_metric == "acc") {
        std::cout << io::format_double(rep.acc_at_eer) << "\n";
      } else if (evl_metric == "r") {
        std::cout << (rep.r_mmse ? io::format_double(*rep.r_mmse) : "NA") << "\n";
      } else if (evl_metric == "threshold") {
        std::cout << io::format_double(rep.eer_threshold) << "\n";
      } else {
        std::cout << "n\t" << rep.n << "\n"
                  << report_line("auc", rep.auc) << report_line("acc_at_eer", rep.acc_at_eer)
                  << report_line("eer_threshold", rep.eer_threshold) << report_line("r_mmse", rep.r_mmse);
      }
    } else if (*agg) {
      std::vector<ScoreVariant> variants;
      for (const auto& name : agg_variants) variants.push_back(variant_arg(name));
      if (variants.empty()) variants.assign(kAllVariants.begin(), kAllVariants.end());
      std::map<std::int64_t, std::vector<DiffRow>> by_seed;
      for (const auto& path : agg_tables) {
        for (auto& r : read_diff_table(path)) by_seed[r.scores.seed].push_back(std::move(r));
      }
      std::vector<SeedOutcome> outcomes;
      for (auto& [seed, rows] : by_seed) outcomes.push_back({seed, {}, std::move(rows), {}, std::nullopt});
      std::vector<const SeedOutcome*> ptrs;
      for (const auto& o : outcomes) ptrs.push_back(&o);
      std::vector<std::pair<std::string, SeedSummary>> rows;
      nlohmann::ordered_json j;
      for (auto v : variants) {
        const auto vr = detail::evaluate_variant(v, ptrs);
        rows.emplace_back(std::string(to_string(v)), vr.summary);
        j[std::string(to_string(v))] = to_json(vr.summary);
      }
      std::cout << render_summary_table(rows);
      if (agg_out) io::write_file(*agg_out, j.dump(2) + "\n");
    } else if (*fea) {
      FeatureConfig fc;
      if (!fea_names.empty()) fc.enabled = {fea_names.begin(), fea_names.end()};
      if (fea_top_words) {
        fc.frequency_list.clear();
        for (const auto& line : io::lines(io::read_file(*fea_top_words)))
          if (auto w = io::trim(line); !w.empty() && w.front() != '#') fc.frequency_list.emplace_back(w);
        fc.top_k = fc.frequency_list.size();
      }
      std::optional<Split> split;
      if (fea_split) split = read_split(*fea_split);
      std::vector<FeatureVector> rows;
      for (const auto& t : select(read_transcripts(fea_transcripts), split, fea_side))
        rows.push_back(extract_features(t.transcript, fc));
      if (fea_external) merge_external_features(rows, read_feature_matrix(*fea_external));
      write_or_print(fea_out, render_feature_matrix(rows));
    } else if (*ks) {
      std::vector<FeatureVector> a, b;
      if (ks_a && ks_b) {
        a = read_feature_matrix(*ks_a);
        b = read_feature_matrix(*ks_b);
      } else if (ks_matrix && ks_transcripts) {
        std::map<TranscriptRef, Label> labels;
        for (const auto& t : read_transcripts(*ks_transcripts)) labels[t.ref()] = t.meta.label;
        for (auto& fv : read_feature_matrix(*ks_matrix)) {
          auto it = labels.find(fv.ref);
          if (it == labels.end()) fail(ErrorCode::FeatureSetMismatch, "no label for " + fv.ref.str());
          (it->second == Label::AD ? a : b).push_back(std::move(fv));
        }
      } else {
        fail(ErrorCode::Usage, "ks needs --a and --b, or --features and --transcripts");
      }
      write_or_print(ks_out, render_ks_report(compare_sets(a, b, ks_alpha)));
    } else if (*ins) {
      std::string prompt(kDefaultPrompt);
      if (ins_prompt) prompt = *ins_prompt;
      if (ins_prompt_file) prompt = std::string(io::trim(io::read_file(*ins_prompt_file)));
      const auto ds = build_instruction_dataset(read_split(ins_split), read_transcripts(ins_transcripts), prompt);
      write_instruction_dataset(ds, ins_dir);
      std::cerr << "AD " << ds.ad.size() << " records, HC " << ds.hc.size() << " records\n";
    } else if (*run) {
      if (!config_path) fail(ErrorCode::Usage, "run needs --config");
      auto c = config_with_overrides(config_path, overrides);
      if (run_seeds) {
        std::string joined;
        for (auto s : seeds_from(*run_seeds)) joined += (joined.empty() ? "" : ",") + std::to_string(s);
        c.set("run.seeds", joined);
      }
      if (run_out) {
        c.set("run.output_dir", fs::absolute(*run_out).string());
      } else if (!c.has("run.output_dir")) {
        if (const char* env = std::getenv("PPLAD_OUTPUT_DIR")) c.set("run.output_dir", fs::absolute(env).string());
      }
      if (run_workers) c.set("run.workers", std::to_string(*run_workers));
      const auto cfg = experiment_config(c, fs::path(*config_path).parent_path());
      const auto result = run_experiment(cfg);
      std::cout << io::read_file(result.output_dir / "report.txt");
    }
  } catch (const Error& e) {
    std::cerr << "pplad: " << e.what() << "\n";
    return e.is_usage() ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "pplad: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
