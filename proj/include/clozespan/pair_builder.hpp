#pragma once

// Builds cloze sentence pairs: sentences in the same group sharing a
// keyphrase are chained into (template, input) pairs, shared context around
// the keyphrase is expanded, and the template side is blanked.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "clozespan/corpus.hpp"
#include "clozespan/keyphrase.hpp"
#include "clozespan/rng.hpp"

namespace clozespan {

struct ClozePair {
  std::string template_text;  // keyphrase replaced by BLANK
  std::string input_text;
  std::optional<CharSpan> span;  // keyphrase span in input_text; absent for negatives
  std::string keyphrase;
  std::string group_key;
  bool is_negative = false;
};

// Replaces text[span] with a space-delimited BLANK token; whitespace touching
// the span collapses to the single delimiting space.
inline std::string blank_template(std::string_view text, CharSpan span) {
  if (span.begin > span.end || span.end > text.size())
    throw std::invalid_argument("blank_template: span out of bounds");
  std::string_view prefix = text.substr(0, span.begin);
  prefix = prefix.substr(0, utf8::trim_range(prefix).second);
  std::string_view suffix = text.substr(span.end);
  const auto [sb, se] = utf8::trim_range(suffix);
  suffix = se > sb ? suffix.substr(sb) : std::string_view();
  std::string out;
  out.reserve(text.size() + kBlankToken.size());
  if (!prefix.empty()) {
    out += prefix;
    out += ' ';
  }
  out += kBlankToken;
  if (!suffix.empty()) {
    out += ' ';
    out += suffix;
  }
  return out;
}

// Grows both spans outward, one code point at a time, while the flanking text
// matches in both sentences. Stops at sentence boundaries.
inline std::pair<CharSpan, CharSpan> expand_keyphrase(std::string_view template_text,
                                                      std::string_view input_text,
                                                      CharSpan span_t, CharSpan span_i) {
  // left
  for (;;) {
    if (span_t.begin == 0 || span_i.begin == 0) break;
    // step back one code point in each
    auto prev_cp_start = [](std::string_view s, std::size_t pos) {
      std::size_t p = pos - 1;
      while (p > 0 && (static_cast<unsigned char>(s[p]) & 0xC0) == 0x80) --p;
      return p;
    };
    const std::size_t tb = prev_cp_start(template_text, span_t.begin);
    const std::size_t ib = prev_cp_start(input_text, span_i.begin);
    if (span_t.begin - tb != span_i.begin - ib) break;
    if (template_text.substr(tb, span_t.begin - tb) !=
        input_text.substr(ib, span_i.begin - ib))
      break;
    span_t.begin = tb;
    span_i.begin = ib;
  }
  // right
  for (;;) {
    if (span_t.end >= template_text.size() || span_i.end >= input_text.size()) break;
    const std::size_t tl = utf8::decode(template_text, span_t.end).second;
    const std::size_t il = utf8::decode(input_text, span_i.end).second;
    if (tl != il) break;
    if (template_text.substr(span_t.end, tl) != input_text.substr(span_i.end, il)) break;
    span_t.end += tl;
    span_i.end += il;
  }
  return {span_t, span_i};
}

struct SentenceEntry {
  std::string text;
  std::string group_key;
  std::vector<KeyphraseCandidate> keyphrases;
};

// Emits positive pairs. Within each (group, keyphrase) bucket of n >= 2
// distinct sentences, the bucket is shuffled and chained cyclically, so every
// sentence serves once as template and once as input per keyphrase. Pairs
// whose expanded span exceeds max_span_fraction of either sentence are
// dropped. Output order is a stable sort by (group, keyphrase, content hash).
inline std::vector<ClozePair> build_pairs(const std::vector<SentenceEntry>& sentences,
                                          std::uint64_t seed,
                                          double max_span_fraction = 0.5) {
  struct Mention {
    std::size_t sentence;
    CharSpan span;
  };
  std::map<std::pair<std::string, std::string>, std::vector<Mention>> buckets;
  for (std::size_t si = 0; si < sentences.size(); ++si) {
    const SentenceEntry& s = sentences[si];
    for (const KeyphraseCandidate& kp : s.keyphrases)
      buckets[{s.group_key, kp.joined()}].push_back(
          Mention{si, CharSpan{kp.begin, kp.end}});
  }

  const Rng base(seed);
  std::vector<ClozePair> pairs;
  for (auto& [key, mentions] : buckets) {
    if (mentions.size() < 2) continue;
    Rng rng = base.substream("pairs/" + key.first + "\x1f" + key.second);
    rng.shuffle(mentions);
    const std::size_t n = mentions.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Mention& mt = mentions[i];
      const Mention& mi = mentions[(i + 1) % n];
      if (mt.sentence == mi.sentence) continue;
      const std::string& ttext = sentences[mt.sentence].text;
      const std::string& itext = sentences[mi.sentence].text;
      auto [span_t, span_i] = expand_keyphrase(ttext, itext, mt.span, mi.span);
      if (static_cast<double>(span_t.size()) >
              max_span_fraction * static_cast<double>(ttext.size()) ||
          static_cast<double>(span_i.size()) >
              max_span_fraction * static_cast<double>(itext.size()))
        continue;
      ClozePair pair;
      pair.template_text = blank_template(ttext, span_t);
      pair.input_text = itext;
      pair.span = span_i;
      pair.keyphrase = itext.substr(span_i.begin, span_i.size());
      pair.group_key = key.first;
      pairs.push_back(std::move(pair));
    }
  }

  std::stable_sort(pairs.begin(), pairs.end(), [](const ClozePair& a, const ClozePair& b) {
    if (a.group_key != b.group_key) return a.group_key < b.group_key;
    if (a.keyphrase != b.keyphrase) return a.keyphrase < b.keyphrase;
    return fnv1a64(a.template_text + '\x1f' + a.input_text) <
           fnv1a64(b.template_text + '\x1f' + b.input_text);
  });
  return pairs;
}

// Hash split on (group, keyphrase): a keyphrase bucket never straddles the
// train/test boundary.
inline std::pair<std::vector<ClozePair>, std::vector<ClozePair>> split_train_test(
    const std::vector<ClozePair>& pairs, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw std::invalid_argument("split_train_test: test_fraction must be in (0, 1)");
  std::vector<ClozePair> train, test;
  for (const ClozePair& p : pairs) {
    const std::uint64_t h =
        splitmix64_once(seed ^ fnv1a64(p.group_key + '\x1f' + p.keyphrase));
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    (u < test_fraction ? test : train).push_back(p);
  }
  return {std::move(train), std::move(test)};
}

inline nlohmann::json pair_to_json(const ClozePair& p) {
  nlohmann::json j;
  j["template"] = p.template_text;
  j["input"] = p.input_text;
  if (p.span)
    j["span"] = {p.span->begin, p.span->end};
  else
    j["span"] = nullptr;
  j["keyphrase"] = p.keyphrase;
  j["group"] = p.group_key;
  return j;
}

inline ClozePair pair_from_json(const nlohmann::json& j) {
  ClozePair p;
  p.template_text = j.at("template").get<std::string>();
  p.input_text = j.at("input").get<std::string>();
  if (!j.at("span").is_null())
    p.span = CharSpan{j.at("span").at(0).get<std::size_t>(),
                      j.at("span").at(1).get<std::size_t>()};
  p.keyphrase = j.at("keyphrase").get<std::string>();
  p.group_key = j.at("group").get<std::string>();
  p.is_negative = !p.span.has_value();
  return p;
}

inline void write_pairs_jsonl(std::ostream& out, const std::vector<ClozePair>& pairs) {
  for (const ClozePair& p : pairs) out << pair_to_json(p).dump() << "\n";
}

inline std::vector<ClozePair> read_pairs_jsonl(std::istream& in) {
  std::vector<ClozePair> pairs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    pairs.push_back(pair_from_json(nlohmann::json::parse(line)));
  }
  return pairs;
}

inline std::vector<ClozePair> read_pairs_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open pair file: " + path);
  return read_pairs_jsonl(in);
}

}  // namespace clozespan
