#pragma once

// Span <-> tag-sequence codec over {BEFORE, BEGIN, INSIDE, AFTER}.
// Valid sequences follow the grammar  BEFORE* (BEGIN INSIDE*)? AFTER*.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "clozespan/subword.hpp"

namespace clozespan {

enum class Tag : std::uint8_t { kBefore = 0, kBegin = 1, kInside = 2, kAfter = 3 };

inline constexpr int kNumTags = 4;

using TagSequence = std::vector<Tag>;

inline char tag_letter(Tag t) {
  switch (t) {
    case Tag::kBefore: return 'B';
    case Tag::kBegin: return 'G';
    case Tag::kInside: return 'I';
    case Tag::kAfter: return 'A';
  }
  return '?';
}

inline bool is_valid_tag_sequence(const TagSequence& tags) {
  // states: 0 = BEFORE*, 1 = inside span, 2 = AFTER*
  int state = 0;
  for (Tag t : tags) {
    switch (state) {
      case 0:
        if (t == Tag::kBefore) continue;
        if (t == Tag::kBegin) { state = 1; continue; }
        if (t == Tag::kAfter) { state = 2; continue; }
        return false;  // INSIDE without BEGIN
      case 1:
        if (t == Tag::kInside) continue;
        if (t == Tag::kAfter) { state = 2; continue; }
        return false;  // second BEGIN or BEFORE after the span
      default:
        if (t != Tag::kAfter) return false;
    }
  }
  return true;
}

// Token index range [begin, end) encoded by a valid tag sequence; nullopt for
// the no-span sequence. Throws on structurally invalid input.
inline std::optional<std::pair<std::size_t, std::size_t>> token_range_from_tags(
    const TagSequence& tags) {
  if (!is_valid_tag_sequence(tags))
    throw std::invalid_argument("token_range_from_tags: invalid tag sequence");
  std::optional<std::size_t> begin;
  std::size_t end = 0;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i] == Tag::kBegin) begin = i;
    if (tags[i] == Tag::kBegin || tags[i] == Tag::kInside) end = i + 1;
  }
  if (!begin) return std::nullopt;
  return std::make_pair(*begin, end);
}

inline TagSequence tags_from_token_range(
    std::size_t length, std::optional<std::pair<std::size_t, std::size_t>> range) {
  TagSequence tags(length, Tag::kBefore);
  if (!range) return tags;
  auto [b, e] = *range;
  if (b >= e || e > length)
    throw std::invalid_argument("tags_from_token_range: bad token range");
  tags[b] = Tag::kBegin;
  for (std::size_t i = b + 1; i < e; ++i) tags[i] = Tag::kInside;
  for (std::size_t i = e; i < length; ++i) tags[i] = Tag::kAfter;
  return tags;
}

struct SnappedSpan {
  std::size_t tok_begin = 0;  // token index range [tok_begin, tok_end)
  std::size_t tok_end = 0;
  CharSpan char_span;         // character span covered by those tokens
  std::size_t max_shift = 0;  // largest boundary move caused by snapping
};

// Snaps a character span outward to the smallest covering token range.
// Returns nullopt when the span intersects no token (empty-range BOS/EOS
// tokens never intersect).
inline std::optional<SnappedSpan> snap_span(const TokenizedText& tokens, CharSpan span) {
  if (span.begin >= span.end)
    throw std::invalid_argument("snap_span: empty or reversed span");
  SnappedSpan snapped;
  bool found = false;
  for (std::size_t i = 0; i < tokens.offsets.size(); ++i) {
    const CharSpan& t = tokens.offsets[i];
    if (t.end > span.begin && t.begin < span.end) {
      if (!found) {
        snapped.tok_begin = i;
        snapped.char_span.begin = t.begin;
        found = true;
      }
      snapped.tok_end = i + 1;
      snapped.char_span.end = t.end;
    }
  }
  if (!found) return std::nullopt;
  const std::size_t left_shift = span.begin > snapped.char_span.begin
                                     ? span.begin - snapped.char_span.begin
                                     : snapped.char_span.begin - span.begin;
  const std::size_t right_shift = span.end > snapped.char_span.end
                                      ? span.end - snapped.char_span.end
                                      : snapped.char_span.end - span.end;
  snapped.max_shift = std::max(left_shift, right_shift);
  return snapped;
}

// Tags for a character span (snapped outward to token boundaries); an absent
// span yields all BEFORE. Throws if the span is degenerate or covers no token.
inline TagSequence span_to_tags(const TokenizedText& tokens,
                                std::optional<CharSpan> span) {
  if (!span) return TagSequence(tokens.size(), Tag::kBefore);
  auto snapped = snap_span(tokens, *span);
  if (!snapped)
    throw std::invalid_argument("span_to_tags: span covers no token");
  return tags_from_token_range(tokens.size(),
                               std::make_pair(snapped->tok_begin, snapped->tok_end));
}

// Character span encoded by the tags: start of the BEGIN token, end of the
// last token in the BEGIN/INSIDE run. Absent when no BEGIN is present.
inline std::optional<CharSpan> tags_to_span(const TokenizedText& tokens,
                                            const TagSequence& tags) {
  if (tags.size() != tokens.size())
    throw std::invalid_argument("tags_to_span: length mismatch");
  auto range = token_range_from_tags(tags);
  if (!range) return std::nullopt;
  return CharSpan{tokens.offsets[range->first].begin,
                  tokens.offsets[range->second - 1].end};
}

}  // namespace clozespan
