#pragma once

// Slot-labeled utterances. JSONL schema, one object per line:
//   {"text": ..., "slot": ..., "span": [s,e] | null, "requested": bool,
//    "id": ..., "domain": ... (optional)}
// An importer accepts the nested restaurants-8k-style format and converts it
// to this schema.

#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "clozespan/corpus.hpp"

namespace clozespan {

struct LabeledExample {
  std::string text;
  std::string slot;
  std::optional<CharSpan> span;  // byte offsets into text
  bool requested = false;
  std::string source_id;
  std::string domain;

  void validate() const {
    if (span) {
      if (span->begin >= span->end || span->end > text.size())
        throw std::invalid_argument("LabeledExample " + source_id +
                                    ": span out of bounds");
    }
  }
};

inline nlohmann::json labeled_to_json(const LabeledExample& e) {
  nlohmann::json j;
  j["text"] = e.text;
  j["slot"] = e.slot;
  if (e.span)
    j["span"] = {e.span->begin, e.span->end};
  else
    j["span"] = nullptr;
  j["requested"] = e.requested;
  j["id"] = e.source_id;
  if (!e.domain.empty()) j["domain"] = e.domain;
  return j;
}

inline LabeledExample labeled_from_json(const nlohmann::json& j) {
  LabeledExample e;
  e.text = j.at("text").get<std::string>();
  e.slot = j.at("slot").get<std::string>();
  if (!j.at("span").is_null())
    e.span = CharSpan{j.at("span").at(0).get<std::size_t>(),
                      j.at("span").at(1).get<std::size_t>()};
  e.requested = j.value("requested", false);
  e.source_id = j.at("id").get<std::string>();
  e.domain = j.value("domain", std::string());
  e.validate();
  return e;
}

inline void write_labeled_jsonl(std::ostream& out,
                                const std::vector<LabeledExample>& examples) {
  for (const LabeledExample& e : examples) out << labeled_to_json(e).dump() << "\n";
}

inline std::vector<LabeledExample> read_labeled_jsonl(std::istream& in) {
  std::vector<LabeledExample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(labeled_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

inline std::vector<LabeledExample> read_labeled_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open labeled data: " + path);
  return read_labeled_jsonl(in);
}

// Converts the nested format used by the restaurants-8k-style releases:
//   [{"userInput": {"text": ...},
//     "labels": [{"slot": ..., "valueSpan": {"startIndex": s, "endIndex": e}}],
//     "context": {"requestedSlots": [...]}}, ...]
// Each (utterance, slot) combination becomes one flat example; `slots` lists
// the slot inventory so utterances missing a slot produce a no-value example.
inline std::vector<LabeledExample> import_nested_format(
    const nlohmann::json& data, const std::vector<std::string>& slots,
    const std::string& domain = "") {
  std::vector<LabeledExample> out;
  std::size_t index = 0;
  for (const auto& item : data) {
    const std::string text = item.at("userInput").at("text").get<std::string>();
    std::vector<std::string> requested;
    if (item.contains("context") && item.at("context").contains("requestedSlots"))
      for (const auto& r : item.at("context").at("requestedSlots"))
        requested.push_back(r.get<std::string>());
    const std::string id = "u" + std::to_string(index++);
    for (const std::string& slot : slots) {
      LabeledExample e;
      e.text = text;
      e.slot = slot;
      e.source_id = id;
      e.domain = domain;
      for (const std::string& r : requested)
        if (r == slot) e.requested = true;
      if (item.contains("labels"))
        for (const auto& label : item.at("labels")) {
          if (label.at("slot").get<std::string>() != slot) continue;
          const auto& vs = label.at("valueSpan");
          const std::size_t begin =
              vs.contains("startIndex") ? vs.at("startIndex").get<std::size_t>() : 0;
          e.span = CharSpan{begin, vs.at("endIndex").get<std::size_t>()};
        }
      e.validate();
      out.push_back(std::move(e));
    }
  }
  return out;
}

}  // namespace clozespan
