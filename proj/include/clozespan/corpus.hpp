#pragma once

// Raw comment ingestion: length filtering, word tokenization and corpus
// frequency statistics. All offsets in this codebase are byte offsets into
// UTF-8 text; only the length filter counts Unicode scalar values.

#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace clozespan {

struct RawComment {
  std::string text;
  std::string group_key;
};

// Byte range [begin, end) into UTF-8 text.
struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const CharSpan&) const = default;
  std::size_t size() const { return end - begin; }
};

// Reserved blank token; it never splits under subword tokenization.
inline constexpr std::string_view kBlankToken = "BLANK";

namespace utf8 {

// Decodes the code point starting at `pos`; returns (code point, byte length).
// Invalid bytes are treated as single Latin-1 code units so that every input
// decodes to something.
inline std::pair<char32_t, std::size_t> decode(std::string_view s, std::size_t pos) {
  const unsigned char b0 = static_cast<unsigned char>(s[pos]);
  if (b0 < 0x80) return {b0, 1};
  auto cont = [&](std::size_t i) {
    return pos + i < s.size() &&
           (static_cast<unsigned char>(s[pos + i]) & 0xC0) == 0x80;
  };
  auto bits = [&](std::size_t i) {
    return static_cast<char32_t>(static_cast<unsigned char>(s[pos + i]) & 0x3F);
  };
  if ((b0 & 0xE0) == 0xC0 && cont(1))
    return {(static_cast<char32_t>(b0 & 0x1F) << 6) | bits(1), 2};
  if ((b0 & 0xF0) == 0xE0 && cont(1) && cont(2))
    return {(static_cast<char32_t>(b0 & 0x0F) << 12) | (bits(1) << 6) | bits(2), 3};
  if ((b0 & 0xF8) == 0xF0 && cont(1) && cont(2) && cont(3))
    return {(static_cast<char32_t>(b0 & 0x07) << 18) | (bits(1) << 12) |
                (bits(2) << 6) | bits(3),
            4};
  return {b0, 1};
}

inline bool is_space(char32_t cp) {
  switch (cp) {
    case U'\t': case U'\n': case U'\v': case U'\f': case U'\r': case U' ':
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

inline std::size_t count_code_points(std::string_view s) {
  std::size_t n = 0, pos = 0;
  while (pos < s.size()) {
    pos += decode(s, pos).second;
    ++n;
  }
  return n;
}

// Byte range [begin, end) of the text with Unicode whitespace trimmed.
inline std::pair<std::size_t, std::size_t> trim_range(std::string_view s) {
  std::size_t begin = 0, pos = 0;
  std::size_t end = 0;
  bool seen = false;
  while (pos < s.size()) {
    auto [cp, len] = decode(s, pos);
    if (!is_space(cp)) {
      if (!seen) begin = pos;
      seen = true;
      end = pos + len;
    }
    pos += len;
  }
  if (!seen) return {0, 0};
  return {begin, end};
}

inline std::string_view trim(std::string_view s) {
  auto [b, e] = trim_range(s);
  return s.substr(b, e - b);
}

}  // namespace utf8

// Keeps the comment iff its trimmed length, in Unicode scalar values, lies in
// [min_chars, max_chars]. The returned comment carries the trimmed text.
inline std::optional<RawComment> filter_by_length(const RawComment& comment,
                                                  std::size_t min_chars = 9,
                                                  std::size_t max_chars = 127) {
  if (min_chars > max_chars)
    throw std::invalid_argument("filter_by_length: min_chars > max_chars");
  std::string_view trimmed = utf8::trim(comment.text);
  const std::size_t n = utf8::count_code_points(trimmed);
  if (n < min_chars || n > max_chars) return std::nullopt;
  return RawComment{std::string(trimmed), comment.group_key};
}

struct Word {
  std::string text;        // lowercased, punctuation-stripped
  std::size_t begin = 0;   // byte offsets of the stripped word in the source
  std::size_t end = 0;
};

namespace detail {
// Word characters are ASCII alphanumerics and everything outside ASCII.
inline bool is_word_char(char32_t cp) {
  if (cp >= 0x80) return true;
  return (cp >= U'0' && cp <= U'9') || (cp >= U'a' && cp <= U'z') ||
         (cp >= U'A' && cp <= U'Z');
}
}  // namespace detail

// Lowercase, split on Unicode whitespace, strip leading/trailing
// non-alphanumeric characters. Interior punctuation survives ("7pm", "/r/all").
// Tokens that strip to nothing are dropped.
inline std::vector<Word> word_tokenize(std::string_view text) {
  std::vector<Word> words;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto [cp, len] = utf8::decode(text, pos);
    if (utf8::is_space(cp)) {
      pos += len;
      continue;
    }
    const std::size_t tok_begin = pos;
    std::size_t tok_end = pos;
    while (tok_end < text.size()) {
      auto [c, l] = utf8::decode(text, tok_end);
      if (utf8::is_space(c)) break;
      tok_end += l;
    }
    // strip edges
    std::size_t b = tok_begin, e = tok_end;
    while (b < e) {
      auto [c, l] = utf8::decode(text, b);
      if (detail::is_word_char(c)) break;
      b += l;
    }
    std::size_t last_end = b;
    for (std::size_t p = b; p < e;) {
      auto [c, l] = utf8::decode(text, p);
      if (detail::is_word_char(c)) last_end = p + l;
      p += l;
    }
    e = last_end;
    if (b < e) {
      std::string w(text.substr(b, e - b));
      for (char& ch : w)
        if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
      words.push_back(Word{std::move(w), b, e});
    }
    pos = tok_end;
  }
  return words;
}

// Corpus word counts. |D| for keyphrase scoring is num_sentences.
struct WordFrequencyTable {
  std::unordered_map<std::string, std::uint64_t> counts;
  std::uint64_t num_sentences = 0;

  void add_sentence(std::string_view text) {
    for (const Word& w : word_tokenize(text)) ++counts[w.text];
    ++num_sentences;
  }

  // Occurrence count with an implicit floor of 1 for unseen words.
  std::uint64_t count_or_one(const std::string& word) const {
    auto it = counts.find(word);
    return it == counts.end() ? 1 : it->second;
  }

  void merge(const WordFrequencyTable& other) {
    for (const auto& [w, c] : other.counts) counts[w] += c;
    num_sentences += other.num_sentences;
  }
};

template <class Range>
WordFrequencyTable count_words(const Range& comments) {
  WordFrequencyTable table;
  for (const RawComment& c : comments) table.add_sentence(c.text);
  return table;
}

// Serialized as a header line `#sentences<TAB>N` followed by
// `word<TAB>count` lines sorted by word.
inline void write_frequency_table(std::ostream& out, const WordFrequencyTable& table) {
  out << "#sentences\t" << table.num_sentences << "\n";
  std::map<std::string, std::uint64_t> ordered(table.counts.begin(), table.counts.end());
  for (const auto& [w, c] : ordered) out << w << "\t" << c << "\n";
}

inline WordFrequencyTable read_frequency_table(std::istream& in) {
  WordFrequencyTable table;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("frequency table: malformed line: " + line);
    if (!header) {
      if (line.substr(0, tab) != "#sentences")
        throw std::runtime_error("frequency table: missing #sentences header");
      table.num_sentences = std::stoull(line.substr(tab + 1));
      header = true;
      continue;
    }
    table.counts[line.substr(0, tab)] = std::stoull(line.substr(tab + 1));
  }
  if (!header) throw std::runtime_error("frequency table: empty input");
  return table;
}

// Line-oriented corpus: `group<TAB>text`, or bare text (group "default").
// Lines that trim to nothing are skipped.
inline std::vector<RawComment> read_corpus_lines(std::istream& in) {
  std::vector<RawComment> comments;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string group = "default";
    std::string_view text = line;
    const std::size_t tab = line.find('\t');
    if (tab != std::string::npos) {
      group = line.substr(0, tab);
      text = std::string_view(line).substr(tab + 1);
    }
    if (utf8::trim(text).empty()) continue;
    comments.push_back(RawComment{std::string(text), std::move(group)});
  }
  return comments;
}

inline std::vector<RawComment> read_corpus_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  return read_corpus_lines(in);
}

}  // namespace clozespan
