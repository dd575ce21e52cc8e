#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "pplad/corpus.hpp"
#include "pplad/error.hpp"
#include "pplad/io.hpp"
#include "pplad/transcript.hpp"

namespace pplad {

inline constexpr std::string_view kDefaultPrompt =
    "Describe everything you see going on in the Cookie Theft picture: the boy on the stool, the girl, the mother at the "
    "sink, and anything else happening in the kitchen.";

struct InstructionRecord {
  std::string prompt;
  std::string response;
  Label label = Label::HC;
  TranscriptRef ref;

  bool operator==(const InstructionRecord&) const = default;
};

struct InstructionDataset {
  std::vector<InstructionRecord> ad;
  std::vector<InstructionRecord> hc;
};

/// One record per train transcript, split by label and sorted by ref.
inline InstructionDataset build_instruction_dataset(const Split& split, const std::vector<LabeledTranscript>& corpus,
                                                    std::string_view prompt = kDefaultPrompt) {
  std::map<TranscriptRef, const LabeledTranscript*> by_ref;
  for (const auto& t : corpus) by_ref[t.ref()] = &t;
  InstructionDataset ds;
  for (const auto& ref : split.train) {
    auto it = by_ref.find(ref);
    if (it == by_ref.end()) fail(ErrorCode::MalformedManifest, "train transcript " + ref.str() + " not in corpus");
    const auto& t = *it->second;
    InstructionRecord r{std::string(prompt), t.transcript.text, t.meta.label, ref};
    (r.label == Label::AD ? ds.ad : ds.hc).push_back(std::move(r));
  }
  if (ds.ad.empty()) fail(ErrorCode::EmptyLabelSubset, "no AD transcripts in the train split");
  if (ds.hc.empty()) fail(ErrorCode::EmptyLabelSubset, "no HC transcripts in the train split");
  return ds;
}

inline std::string render_instructions(const std::vector<InstructionRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["prompt"] = r.prompt;
    j["response"] = r.response;
    j["label"] = to_string(r.label);
    j["subject_id"] = r.ref.subject_id;
    j["session_id"] = r.ref.session_id;
    out += j.dump();
    out += '\n';
  }
  return out;
}

/// Writes instruct_AD.jsonl and instruct_HC.jsonl under `dir`.
inline void write_instruction_dataset(const InstructionDataset& ds, const std::filesystem::path& dir) {
  io::write_file(dir / "instruct_AD.jsonl", render_instructions(ds.ad));
  io::write_file(dir / "instruct_HC.jsonl", render_instructions(ds.hc));
}

inline std::vector<InstructionRecord> read_instructions(const std::filesystem::path& path) {
  std::vector<InstructionRecord> out;
  std::size_t line_no = 0;
  for (const auto& line : io::lines(io::read_file(path))) {
    ++line_no;
    if (io::trim(line).empty()) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    try {
      const auto j = nlohmann::json::parse(line);
      auto label = parse_label(j.at("label").get<std::string>());
      if (!label) fail(ErrorCode::SchemaViolation, where + ": bad label");
      out.push_back({j.at("prompt").get<std::string>(), j.at("response").get<std::string>(), *label,
                     {j.at("subject_id").get<std::string>(), j.at("session_id").get<std::string>()}});
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::SchemaViolation, where + ": " + e.what());
    }
  }
  return out;
}

}  // namespace pplad
