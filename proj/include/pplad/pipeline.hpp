#pragma once

#include <algorithm>
#include <array>
#include <exception>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "pplad/config.hpp"
#include "pplad/corpus.hpp"
#include "pplad/error.hpp"
#include "pplad/eval.hpp"
#include "pplad/io.hpp"
#include "pplad/lm.hpp"
#include "pplad/ppl.hpp"
#include "pplad/rng.hpp"
#include "pplad/transcript.hpp"

namespace pplad {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Diff-score tables: one row per test transcript, label and MMSE carried along
// so the table is self-contained for evaluation.

struct DiffRow {
  DiffScores scores;
  Label label = Label::HC;
  std::optional<int> mmse;
};

inline std::string render_diff_table(const std::vector<DiffRow>& rows, std::string_view config_hash = {}) {
  io::Table t;
  if (!config_hash.empty()) t.comments.push_back("# config_hash=" + std::string(config_hash));
  t.header = {"subject_id", "session_id", "seed", "label", "mmse", "ppl_ad", "ppl_c"};
  for (auto v : kAllVariants) t.header.emplace_back(to_string(v));
  for (const auto& r : rows) {
    const auto& s = r.scores;
    std::vector<std::string> row = {s.ref.subject_id,
                                    s.ref.session_id,
                                    std::to_string(s.seed),
                                    std::string(to_string(r.label)),
                                    r.mmse ? std::to_string(*r.mmse) : "NA",
                                    io::format_double(s.ppl_ad),
                                    io::format_double(s.ppl_c)};
    for (auto v : kAllVariants) {
      auto x = s.get(v);
      row.push_back(x ? io::format_double(*x) : "NA");
    }
    t.rows.push_back(std::move(row));
  }
  return io::render_table(t, '\t');
}

inline std::vector<DiffRow> read_diff_table(const fs::path& path) {
  const auto t = io::read_table(path, '\t', ErrorCode::InvalidScores);
  const auto ctx = path.string();
  auto col = [&](const char* name) { return t.require_column(name, ErrorCode::InvalidScores, ctx); };
  const auto c_sub = col("subject_id"), c_ses = col("session_id"), c_label = col("label");
  const auto c_seed = t.column("seed"), c_mmse = t.column("mmse");
  const auto c_ad = t.column("ppl_ad"), c_c = t.column("ppl_c");
  std::vector<DiffRow> out;
  for (const auto& row : t.rows) {
    DiffRow r;
    auto& s = r.scores;
    s.ref = {row[c_sub], row[c_ses]};
    auto label = parse_label(row[c_label]);
    if (!label) fail(ErrorCode::InvalidScores, ctx + ": bad label '" + row[c_label] + "'");
    r.label = *label;
    auto num = [&](std::optional<std::size_t> c) -> std::optional<double> {
      if (!c || row[*c] == "NA" || row[*c].empty()) return std::nullopt;
      auto v = io::parse_double(row[*c]);
      if (!v) fail(ErrorCode::InvalidScores, ctx + ": bad number '" + row[*c] + "' for " + s.ref.str());
      return v;
    };
    if (c_seed) {
      auto seed = io::parse_int(row[*c_seed]);
      if (!seed) fail(ErrorCode::InvalidScores, ctx + ": bad seed for " + s.ref.str());
      s.seed = *seed;
    }
    if (auto m = num(c_mmse)) r.mmse = static_cast<int>(std::lround(*m));
    s.ppl_ad = num(c_ad).value_or(NAN);
    s.ppl_c = num(c_c).value_or(NAN);
    s.d = num(t.column("d")).value_or(NAN);
    s.d_log_norm = num(t.column("d_log_norm"));
    s.d_bar = num(t.column("d_bar")).value_or(NAN);
    s.d_bar_star = num(t.column("d_bar_star")).value_or(NAN);
    out.push_back(std::move(r));
  }
  return out;
}

/// Samples for one variant; rows where the variant is undefined are skipped.
inline std::vector<ScoredSample> samples_for(const std::vector<DiffRow>& rows, ScoreVariant v) {
  std::vector<ScoredSample> out;
  for (const auto& r : rows) {
    auto x = r.scores.get(v);
    if (!x) continue;
    if (std::isnan(*x)) fail(ErrorCode::InvalidScores, r.scores.ref.str() + ": no " + std::string(to_string(v)) + " column");
    out.push_back({r.scores.ref, *x, r.label, r.mmse});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiment configuration

enum class Backend { Ngram, External };

struct ExperimentConfig {
  std::optional<fs::path> manifest;
  std::optional<fs::path> metadata;
  std::optional<fs::path> transcripts;  // normalized JSONL, used instead of a manifest
  std::optional<fs::path> ipa_map;
  std::optional<fs::path> split_path;  // precomputed split; otherwise generated
  SplitSpec split_spec;

  Backend backend = Backend::Ngram;
  NgramOptions ngram;
  // Seeds draw a fresh model-training subset of each label's train side; the
  // rest of the train side supplies the cutoff statistics.
  bool resample = true;
  double resample_fraction = 0.70;
  std::optional<fs::path> score_dir;

  std::vector<std::int64_t> seeds = parse_seed_list("0-49");
  std::vector<ScoreVariant> variants{kAllVariants.begin(), kAllVariants.end()};
  std::size_t workers = 1;
  fs::path output_dir = "pplad-out";

  std::string config_hash;  // over the canonical config, minus run.output_dir and run.workers
  std::string canonical;
};

inline const std::set<std::string>& experiment_config_keys() {
  static const std::set<std::string> keys = {
      "data.manifest",         "data.metadata",        "data.transcripts",  "data.ipa_map",
      "split.path",            "split.train_fraction", "split.per_label_total", "split.seed",
      "split.restarts",        "split.max_steps",      "split.group_tolerance", "split.side_tolerance",
      "split.exclusions",      "split.test_exclusions", "backend.kind",     "backend.order",
      "backend.smoothing",     "backend.k",            "backend.unk_min_count", "backend.resample",
      "backend.resample_fraction", "backend.score_dir", "run.seeds",       "run.variants",
      "run.workers",           "run.output_dir"};
  return keys;
}

namespace detail {

// "age:2, gender:0.1"; "none" clears every tolerance.
inline std::map<BalanceField, double> parse_tolerances(const std::vector<std::string>& items, const std::string& key) {
  std::map<BalanceField, double> out;
  if (items.size() == 1 && items[0] == "none") return out;
  for (const auto& item : items) {
    const auto colon = item.find(':');
    auto field = parse_balance_field(io::trim(std::string_view(item).substr(0, colon)));
    auto value = colon == std::string::npos ? std::nullopt : io::parse_double(io::trim(std::string_view(item).substr(colon + 1)));
    if (!field || !value) fail(ErrorCode::Config, key + ": bad entry '" + item + "', expected field:value");
    out[*field] = *value;
  }
  return out;
}

}  // namespace detail

/// Relative paths resolve against `base_dir` (normally the config file's
/// directory).
inline ExperimentConfig experiment_config(const Config& c, const fs::path& base_dir = {}) {
  c.require_known(experiment_config_keys());
  ExperimentConfig e;
  auto path = [&](const std::string& key) -> std::optional<fs::path> {
    auto v = c.get(key);
    if (!v || v->empty()) return std::nullopt;
    fs::path p(*v);
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  };
  e.manifest = path("data.manifest");
  e.metadata = path("data.metadata");
  e.transcripts = path("data.transcripts");
  e.ipa_map = path("data.ipa_map");
  if (!e.manifest && !e.transcripts) fail(ErrorCode::Config, "one of data.manifest or data.transcripts is required");
  if (e.manifest && e.transcripts) fail(ErrorCode::Config, "data.manifest and data.transcripts are mutually exclusive");

  e.split_path = path("split.path");
  auto& sp = e.split_spec;
  if (auto v = c.get_double("split.train_fraction")) sp.train_fraction = *v;
  if (auto v = c.get_int("split.per_label_total")) {
    if (*v < 2) fail(ErrorCode::Config, "split.per_label_total must be >= 2");
    sp.per_label_total = static_cast<std::size_t>(*v);
  }
  if (auto v = c.get_int("split.seed")) sp.seed = static_cast<std::uint64_t>(*v);
  if (auto v = c.get_int("split.restarts")) sp.restarts = static_cast<int>(*v);
  if (auto v = c.get_int("split.max_steps")) sp.max_steps = static_cast<long>(*v);
  if (auto v = c.get_list("split.group_tolerance")) sp.group_tolerance = detail::parse_tolerances(*v, "split.group_tolerance");
  if (auto v = c.get_list("split.side_tolerance")) sp.side_tolerance = detail::parse_tolerances(*v, "split.side_tolerance");
  if (auto v = c.get_list("split.exclusions")) sp.exclusions = {v->begin(), v->end()};
  if (auto v = c.get_list("split.test_exclusions")) sp.test_exclusions = {v->begin(), v->end()};

  const auto kind = c.get_or("backend.kind", "ngram");
  if (kind == "ngram") {
    e.backend = Backend::Ngram;
  } else if (kind == "external") {
    e.backend = Backend::External;
  } else {
    fail(ErrorCode::Config, "backend.kind must be 'ngram' or 'external'");
  }
  if (auto v = c.get_int("backend.order")) {
    if (*v < 1 || *v > 10) fail(ErrorCode::Config, "backend.order must lie in [1, 10]");
    e.ngram.order = static_cast<int>(*v);
  }
  const auto smoothing = c.get_or("backend.smoothing", "witten_bell");
  if (smoothing == "witten_bell") {
    e.ngram.smoothing = Smoothing::witten_bell();
  } else if (smoothing == "add_k") {
    e.ngram.smoothing = Smoothing::add_k(c.get_double("backend.k").value_or(1.0));
  } else {
    fail(ErrorCode::Config, "backend.smoothing must be 'witten_bell' or 'add_k'");
  }
  if (auto v = c.get_int("backend.unk_min_count")) e.ngram.unk_min_count = static_cast<int>(*v);
  if (auto v = c.get_bool("backend.resample")) e.resample = *v;
  if (auto v = c.get_double("backend.resample_fraction")) e.resample_fraction = *v;
  if (!(e.resample_fraction > 0 && e.resample_fraction < 1)) fail(ErrorCode::Config, "backend.resample_fraction must lie in (0, 1)");
  e.score_dir = path("backend.score_dir");
  if (e.backend == Backend::External && !e.score_dir) fail(ErrorCode::Config, "external backend needs backend.score_dir");

  if (auto v = c.get("run.seeds")) e.seeds = parse_seed_list(*v);
  if (auto v = c.get_list("run.variants")) {
    e.variants.clear();
    for (const auto& name : *v) {
      auto var = parse_variant(name);
      if (!var) fail(ErrorCode::Config, "unknown score variant '" + name + "'");
      if (std::find(e.variants.begin(), e.variants.end(), *var) == e.variants.end()) e.variants.push_back(*var);
    }
    if (e.variants.empty()) fail(ErrorCode::Config, "run.variants is empty");
    std::sort(e.variants.begin(), e.variants.end());
  }
  if (auto v = c.get_int("run.workers")) {
    if (*v < 1) fail(ErrorCode::Config, "run.workers must be >= 1");
    e.workers = static_cast<std::size_t>(*v);
  }
  if (auto v = path("run.output_dir")) e.output_dir = *v;

  e.canonical = c.canonical({"run.output_dir", "run.workers"});
  e.config_hash = io::hash_hex(e.canonical);
  return e;
}

// ---------------------------------------------------------------------------
// Experiment run

struct VariantResult {
  ScoreVariant variant = ScoreVariant::D;
  std::vector<std::pair<std::int64_t, EvalReport>> per_seed;
  std::vector<ScoredSample> aggregated_samples;
  EvalReport aggregated;
  SeedSummary summary;
};

struct SeedOutcome {
  std::int64_t seed = 0;
  TrainStats stats;
  std::vector<DiffRow> rows;
  std::vector<TokenScores> scores;  // n-gram backend only
  std::optional<std::string> error;
};

struct ExperimentResult {
  std::string config_hash;
  std::vector<std::int64_t> completed_seeds;
  std::map<std::int64_t, std::string> failed_seeds;
  std::vector<VariantResult> variants;
  Split split;
  fs::path output_dir;
};

namespace detail {

inline std::vector<LabeledTranscript> load_experiment_corpus(const ExperimentConfig& cfg) {
  if (cfg.transcripts) return read_transcripts(*cfg.transcripts);
  const auto ipa = cfg.ipa_map ? IpaMap::load(*cfg.ipa_map) : IpaMap{};
  return normalize_corpus(parse_corpus(*cfg.manifest, cfg.metadata), ipa);
}

inline void validate_split(const Split& split, const std::map<TranscriptRef, const LabeledTranscript*>& by_ref) {
  std::set<std::string> train_subjects;
  for (const auto& r : split.train) {
    if (!by_ref.contains(r)) fail(ErrorCode::MalformedManifest, "split train transcript " + r.str() + " not in corpus");
    train_subjects.insert(r.subject_id);
  }
  for (const auto& r : split.test) {
    if (!by_ref.contains(r)) fail(ErrorCode::MalformedManifest, "split test transcript " + r.str() + " not in corpus");
    if (train_subjects.contains(r.subject_id)) {
      fail(ErrorCode::MalformedManifest, "subject " + r.subject_id + " appears on both sides of the split");
    }
  }
  if (split.test.empty()) fail(ErrorCode::MalformedManifest, "split has no test transcripts");
}

inline std::uint64_t seed_bits(std::int64_t seed) { return static_cast<std::uint64_t>(seed); }

struct RunContext {
  const ExperimentConfig& cfg;
  std::map<TranscriptRef, const LabeledTranscript*> by_ref;
  std::array<std::vector<TranscriptRef>, 2> train_by_label;  // [AD, HC], sorted
  std::vector<TranscriptRef> test;
  std::optional<ScoreSet> external;
};

inline DiffRow make_row(const RunContext& ctx, const ScorePair& pair, const TrainStats& stats) {
  const auto& meta = ctx.by_ref.at(pair.ref)->meta;
  return {diff_scores(pair, stats), meta.label, meta.mmse};
}

inline SeedOutcome run_ngram_seed(const RunContext& ctx, std::int64_t seed) {
  SeedOutcome out;
  out.seed = seed;
  std::array<std::vector<TranscriptRef>, 2> model_refs, stats_refs;
  for (std::size_t l = 0; l < 2; ++l) {
    auto refs = ctx.train_by_label[l];
    if (ctx.cfg.resample) {
      Rng rng(seed_bits(seed), 0x7265'7361'6d70ULL);
      rng.shuffle(std::span<TranscriptRef>(refs));
      const auto n = refs.size();
      auto k = static_cast<std::size_t>(std::llround(ctx.cfg.resample_fraction * static_cast<double>(n)));
      k = std::clamp<std::size_t>(k, 1, n > 2 ? n - 2 : 1);
      model_refs[l].assign(refs.begin(), refs.begin() + static_cast<std::ptrdiff_t>(k));
      stats_refs[l].assign(refs.begin() + static_cast<std::ptrdiff_t>(k), refs.end());
      std::sort(model_refs[l].begin(), model_refs[l].end());
      std::sort(stats_refs[l].begin(), stats_refs[l].end());
    } else {
      model_refs[l] = refs;
      stats_refs[l] = refs;
    }
  }
  auto opts = ctx.cfg.ngram;
  opts.seed = seed;
  auto transcripts = [&](const std::vector<TranscriptRef>& refs) {
    std::vector<Transcript> ts;
    for (const auto& r : refs) ts.push_back(ctx.by_ref.at(r)->transcript);
    return ts;
  };
  const auto model_ad = train_ngram(transcripts(model_refs[0]), opts);
  const auto model_c = train_ngram(transcripts(model_refs[1]), opts);
  auto pair_for = [&](const TranscriptRef& ref, bool keep) {
    const auto& t = ctx.by_ref.at(ref)->transcript;
    auto ad = score(model_ad, t, ModelId::AD, seed);
    auto c = score(model_c, t, ModelId::C, seed);
    auto p = make_score_pair(ad, c);
    if (keep) {
      out.scores.push_back(std::move(ad));
      out.scores.push_back(std::move(c));
    }
    return p;
  };
  std::vector<std::pair<ScorePair, Label>> train_pairs;
  for (std::size_t l = 0; l < 2; ++l)
    for (const auto& r : stats_refs[l]) train_pairs.emplace_back(pair_for(r, false), l == 0 ? Label::AD : Label::HC);
  out.stats = fit_train_stats(train_pairs);
  for (const auto& r : ctx.test) out.rows.push_back(make_row(ctx, pair_for(r, true), out.stats));
  return out;
}

inline SeedOutcome run_external_seed(const RunContext& ctx, std::int64_t seed) {
  SeedOutcome out;
  out.seed = seed;
  auto pair_for = [&](const TranscriptRef& ref) {
    const auto* ad = ctx.external->find(ref, ModelId::AD, seed);
    const auto* c = ctx.external->find(ref, ModelId::C, seed);
    if (!ad || !c) fail(ErrorCode::SeedCoverageMismatch, "no paired scores for " + ref.str() + " at seed " + std::to_string(seed));
    return make_score_pair(*ad, *c);
  };
  std::vector<std::pair<ScorePair, Label>> train_pairs;
  for (std::size_t l = 0; l < 2; ++l)
    for (const auto& r : ctx.train_by_label[l]) train_pairs.emplace_back(pair_for(r), l == 0 ? Label::AD : Label::HC);
  out.stats = fit_train_stats(train_pairs);
  for (const auto& r : ctx.test) out.rows.push_back(make_row(ctx, pair_for(r), out.stats));
  return out;
}

inline nlohmann::ordered_json to_json(const TrainStats& s) {
  nlohmann::ordered_json j;
  j["mean_d_c"] = s.mean_d_c;
  j["mean_d_ad"] = s.mean_d_ad;
  j["sd_d_c"] = s.sd_d_c;
  j["sd_d_ad"] = s.sd_d_ad;
  j["n_c"] = s.n_c;
  j["n_ad"] = s.n_ad;
  return j;
}

// Per-variant evaluation over completed seeds. A transcript whose score is
// undefined at any seed (d_log_norm with PPL_C == 1) is left out of that
// variant entirely so every seed covers the same set.
inline VariantResult evaluate_variant(ScoreVariant v, const std::vector<const SeedOutcome*>& seeds) {
  VariantResult vr;
  vr.variant = v;
  std::set<TranscriptRef> undefined;
  for (const auto* s : seeds)
    for (const auto& r : s->rows)
      if (!r.scores.get(v)) undefined.insert(r.scores.ref);
  std::map<std::int64_t, std::vector<ScoredSample>> per_seed;
  for (const auto* s : seeds) {
    auto& samples = per_seed[s->seed];
    for (auto& x : samples_for(s->rows, v))
      if (!undefined.contains(x.ref)) samples.push_back(std::move(x));
    vr.per_seed.emplace_back(s->seed, evaluate(samples, Label::AD, orientation_of(v)));
  }
  vr.aggregated_samples = aggregate(per_seed);
  vr.aggregated = evaluate(vr.aggregated_samples, Label::AD, orientation_of(v));
  vr.summary = summarize_seeds(vr.per_seed, vr.aggregated);
  return vr;
}

}  // namespace detail

/// Writes, under cfg.output_dir:
///   split.tsv, balance.json (generated splits only)
///   seeds/<seed>/diff_scores.tsv, seeds/<seed>/scores.jsonl (n-gram backend)
///   aggregated_scores.tsv, report.json, report.txt, manifest.json
/// If any seed fails, the report covers the completed seeds and SeedFailure is
/// thrown afterwards.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  if (cfg.seeds.empty()) fail(ErrorCode::Config, "no seeds");
  if (std::set<std::int64_t>(cfg.seeds.begin(), cfg.seeds.end()).size() != cfg.seeds.size()) {
    fail(ErrorCode::Config, "duplicate seeds");
  }
  const auto out_dir = cfg.output_dir;
  const auto& hash = cfg.config_hash;
  const auto hash_line = "# config_hash=" + hash;
  std::map<std::string, std::string> data_hashes;
  std::map<std::string, std::string> output_hashes;
  auto emit = [&](const fs::path& rel, const std::string& content) {
    io::write_file(out_dir / rel, content);
    output_hashes[rel.generic_string()] = io::hash_hex(content);
  };

  const auto corpus = detail::load_experiment_corpus(cfg);
  {
    std::string rendered;
    for (const auto& t : corpus) rendered += to_json(t).dump() + "\n";
    data_hashes["corpus"] = io::hash_hex(rendered);
  }
  detail::RunContext ctx{cfg, {}, {}, {}, {}};
  for (const auto& t : corpus) ctx.by_ref[t.ref()] = &t;

  ExperimentResult result;
  result.config_hash = hash;
  result.output_dir = out_dir;
  if (cfg.split_path) {
    result.split = read_split(*cfg.split_path);
    data_hashes["split"] = io::hash_hex(io::read_file(*cfg.split_path));
  } else {
    result.split = make_split(corpus, cfg.split_spec);
    emit("split.tsv", hash_line + "\n" + render_split(result.split));
    auto bal = to_json(result.split.report);
    bal["config_hash"] = hash;
    emit("balance.json", bal.dump(2) + "\n");
  }
  detail::validate_split(result.split, ctx.by_ref);
  for (const auto& r : result.split.train) ctx.train_by_label[ctx.by_ref.at(r)->meta.label == Label::AD ? 0 : 1].push_back(r);
  ctx.test.assign(result.split.test.begin(), result.split.test.end());

  if (cfg.backend == Backend::External) {
    ctx.external = load_scores(*cfg.score_dir);
    if (fs::is_directory(*cfg.score_dir)) {
      for (const auto& e : fs::directory_iterator(*cfg.score_dir))
        if (e.is_regular_file() && e.path().extension() == ".jsonl")
          data_hashes["scores/" + e.path().filename().string()] = io::hash_hex(io::read_file(e.path()));
    } else {
      data_hashes["scores"] = io::hash_hex(io::read_file(*cfg.score_dir));
    }
  }

  // Seeds run on worker threads; each writes only its own slot.
  std::vector<SeedOutcome> outcomes(cfg.seeds.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < cfg.seeds.size(); i = next++) {
      const auto seed = cfg.seeds[i];
      try {
        outcomes[i] = cfg.backend == Backend::Ngram ? detail::run_ngram_seed(ctx, seed) : detail::run_external_seed(ctx, seed);
      } catch (const std::exception& e) {
        outcomes[i] = SeedOutcome{};
        outcomes[i].seed = seed;
        outcomes[i].error = e.what();
      }
    }
  };
  const auto n_workers = std::max<std::size_t>(1, std::min(cfg.workers, cfg.seeds.size()));
  if (n_workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(work);
  }

  // Single-threaded merge in ascending seed order.
  std::vector<const SeedOutcome*> done;
  for (const auto& o : outcomes) {
    if (o.error) {
      result.failed_seeds[o.seed] = *o.error;
    } else {
      done.push_back(&o);
    }
  }
  std::sort(done.begin(), done.end(), [](const auto* a, const auto* b) { return a->seed < b->seed; });
  for (const auto* o : done) {
    result.completed_seeds.push_back(o->seed);
    const auto dir = fs::path("seeds") / std::to_string(o->seed);
    emit(dir / "diff_scores.tsv", render_diff_table(o->rows, hash));
    if (!o->scores.empty()) {
      std::string lines;
      for (const auto& s : o->scores) lines += render_score_record(s, hash) + "\n";
      emit(dir / "scores.jsonl", lines);
    }
  }

  nlohmann::ordered_json report;
  report["config_hash"] = hash;
  report["backend"] = cfg.backend == Backend::Ngram ? "ngram" : "external";
  report["seeds"] = cfg.seeds;
  report["completed_seeds"] = result.completed_seeds;
  report["failed_seeds"] = nlohmann::ordered_json::object();
  for (const auto& [seed, msg] : result.failed_seeds) report["failed_seeds"][std::to_string(seed)] = msg;
  report["n_train"] = result.split.train.size();
  report["n_test"] = result.split.test.size();
  report["train_stats"] = nlohmann::ordered_json::object();
  for (const auto* o : done) report["train_stats"][std::to_string(o->seed)] = detail::to_json(o->stats);
  report["variants"] = nlohmann::ordered_json::object();

  std::exception_ptr eval_error;
  if (!done.empty()) {
    try {
      for (auto v : cfg.variants) result.variants.push_back(detail::evaluate_variant(v, done));
    } catch (const Error& e) {
      eval_error = std::current_exception();
      report["evaluation_error"] = e.what();
      result.variants.clear();
    }
  }
  std::vector<std::pair<std::string, SeedSummary>> table_rows;
  for (const auto& vr : result.variants) {
    nlohmann::ordered_json j;
    j["orientation"] = orientation_of(vr.variant) == Orientation::HigherIsAD ? "higher_is_ad" : "higher_is_hc";
    j["summary"] = to_json(vr.summary);
    j["aggregated"] = to_json(vr.aggregated);
    j["per_seed"] = nlohmann::ordered_json::object();
    for (const auto& [seed, rep] : vr.per_seed) j["per_seed"][std::to_string(seed)] = to_json(rep);
    report["variants"][std::string(to_string(vr.variant))] = j;
    table_rows.emplace_back(std::string(to_string(vr.variant)), vr.summary);
  }

  if (!result.variants.empty()) {
    io::Table agg;
    agg.comments.push_back(hash_line);
    agg.header = {"subject_id", "session_id", "label", "mmse"};
    std::map<TranscriptRef, std::vector<std::string>> rows;
    for (const auto& r : ctx.test) {
      const auto& meta = ctx.by_ref.at(r)->meta;
      rows[r] = {r.subject_id, r.session_id, std::string(to_string(meta.label)),
                 meta.mmse ? std::to_string(*meta.mmse) : "NA"};
    }
    for (const auto& vr : result.variants) {
      agg.header.emplace_back(to_string(vr.variant));
      for (auto& [ref, row] : rows) row.emplace_back("NA");
      for (const auto& s : vr.aggregated_samples) rows.at(s.ref).back() = io::format_double(s.score);
    }
    for (auto& [ref, row] : rows) agg.rows.push_back(std::move(row));
    emit("aggregated_scores.tsv", io::render_table(agg, '\t'));
  }
  emit("report.json", report.dump(2) + "\n");
  emit("report.txt", hash_line + "\n" + render_summary_table(table_rows));

  nlohmann::ordered_json manifest;
  manifest["config_hash"] = hash;
  manifest["config"] = cfg.canonical;
  manifest["data_hashes"] = data_hashes;
  manifest["outputs"] = output_hashes;
  io::write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");

  if (!result.failed_seeds.empty()) {
    std::string msg = std::to_string(result.failed_seeds.size()) + " of " + std::to_string(cfg.seeds.size()) +
                      " seeds failed; report covers seeds that completed. First failure (seed " +
                      std::to_string(result.failed_seeds.begin()->first) + "): " + result.failed_seeds.begin()->second;
    fail(ErrorCode::SeedFailure, msg);
  }
  if (eval_error) std::rethrow_exception(eval_error);
  return result;
}

}  // namespace pplad
