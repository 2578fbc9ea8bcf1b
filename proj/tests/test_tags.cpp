#include "clozespan/tags.hpp"

#include <gtest/gtest.h>

#include "clozespan/rng.hpp"

using namespace clozespan;

namespace {

// A tokenization with `n` single-character words ("a b c ...") and no BOS/EOS,
// for direct control over token counts.
TokenizedText bare_tokens(std::size_t n) {
  TokenizedText t;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) t.text += ' ';
    t.ids.push_back(Vocabulary::kFirstPiece);
    t.offsets.push_back(CharSpan{2 * i, 2 * i + 1});
    t.text += 'a';
  }
  return t;
}

// Realistic shape: BOS + n words + EOS.
TokenizedText framed_tokens(std::size_t n) {
  TokenizedText t = bare_tokens(n);
  t.ids.insert(t.ids.begin(), Vocabulary::kBos);
  t.offsets.insert(t.offsets.begin(), CharSpan{0, 0});
  t.ids.push_back(Vocabulary::kEos);
  t.offsets.push_back(CharSpan{t.text.size(), t.text.size()});
  return t;
}

}  // namespace

TEST(SpanToTags, FiveTokensMiddleSpan) {
  TokenizedText t = bare_tokens(5);
  // tokens 2..3 (characters 4..7)
  TagSequence tags = span_to_tags(t, CharSpan{4, 7});
  const TagSequence expected = {Tag::kBefore, Tag::kBefore, Tag::kBegin, Tag::kInside,
                                Tag::kAfter};
  EXPECT_EQ(tags, expected);
}

TEST(SpanToTags, AbsentSpanIsAllBefore) {
  TokenizedText t = framed_tokens(3);
  TagSequence tags = span_to_tags(t, std::nullopt);
  for (Tag tag : tags) EXPECT_EQ(tag, Tag::kBefore);
  EXPECT_FALSE(tags_to_span(t, tags).has_value());
}

TEST(SpanToTags, FullCoverage) {
  TokenizedText t = bare_tokens(4);
  TagSequence tags = span_to_tags(t, CharSpan{0, t.text.size()});
  const TagSequence expected = {Tag::kBegin, Tag::kInside, Tag::kInside, Tag::kInside};
  EXPECT_EQ(tags, expected);
}

TEST(SpanToTags, BosEosNeverEnterSpans) {
  TokenizedText t = framed_tokens(3);
  TagSequence tags = span_to_tags(t, CharSpan{0, t.text.size()});
  EXPECT_EQ(tags.front(), Tag::kBefore);  // BOS
  EXPECT_EQ(tags.back(), Tag::kAfter);    // EOS
  EXPECT_EQ(tags[1], Tag::kBegin);
}

TEST(SpanToTags, SnapsOutward) {
  // three-character words at 0, 4, 8, 12
  TokenizedText t;
  t.text = "abc def ghi jkl";
  for (std::size_t i = 0; i < 4; ++i) {
    t.ids.push_back(Vocabulary::kFirstPiece);
    t.offsets.push_back(CharSpan{4 * i, 4 * i + 3});
  }
  // span starts one byte into token 1 and ends two bytes into token 2
  auto snapped = snap_span(t, CharSpan{5, 10});
  ASSERT_TRUE(snapped.has_value());
  EXPECT_EQ(snapped->tok_begin, 1u);
  EXPECT_EQ(snapped->tok_end, 3u);
  EXPECT_EQ(snapped->char_span, (CharSpan{4, 11}));
  EXPECT_EQ(snapped->max_shift, 1u);
}

TEST(SpanToTags, Errors) {
  TokenizedText t = bare_tokens(3);
  EXPECT_THROW(span_to_tags(t, CharSpan{2, 2}), std::invalid_argument);  // empty
  EXPECT_THROW(span_to_tags(t, CharSpan{4, 2}), std::invalid_argument);  // reversed
  // a span lying entirely in whitespace covers no token
  EXPECT_THROW(span_to_tags(t, CharSpan{1, 2}), std::invalid_argument);
}

TEST(TagsToSpan, StructurallyInvalidSequencesRejected) {
  TokenizedText t = bare_tokens(3);
  EXPECT_THROW(tags_to_span(t, {Tag::kBefore, Tag::kInside, Tag::kAfter}),
               std::invalid_argument);
  EXPECT_THROW(tags_to_span(t, {Tag::kBegin, Tag::kBegin, Tag::kAfter}),
               std::invalid_argument);
  EXPECT_THROW(tags_to_span(t, {Tag::kAfter, Tag::kBegin, Tag::kInside}),
               std::invalid_argument);
  EXPECT_THROW(tags_to_span(t, {Tag::kBegin, Tag::kAfter, Tag::kInside}),
               std::invalid_argument);
  EXPECT_THROW(tags_to_span(t, {Tag::kBefore, Tag::kBefore}), std::invalid_argument);
}

TEST(TagGrammar, MatchesReferenceAutomaton) {
  // oracle: a sequence is valid iff it is BEFORE* (BEGIN INSIDE*)? AFTER*
  for (std::size_t len = 1; len <= 6; ++len) {
    const std::size_t total = static_cast<std::size_t>(std::pow(4.0, len));
    for (std::size_t code = 0; code < total; ++code) {
      TagSequence tags(len);
      std::size_t c = code;
      for (std::size_t i = 0; i < len; ++i) {
        tags[i] = static_cast<Tag>(c % 4);
        c /= 4;
      }
      // reference: regex-style scan
      std::size_t i = 0;
      while (i < len && tags[i] == Tag::kBefore) ++i;
      if (i < len && tags[i] == Tag::kBegin) {
        ++i;
        while (i < len && tags[i] == Tag::kInside) ++i;
      }
      while (i < len && tags[i] == Tag::kAfter) ++i;
      const bool expected = i == len;
      EXPECT_EQ(is_valid_tag_sequence(tags), expected);
    }
  }
}

TEST(TagCodec, RoundTripAllSpansSmall) {
  for (std::size_t n = 1; n <= 7; ++n) {
    TokenizedText t = bare_tokens(n);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t e = b + 1; e <= n; ++e) {
        const CharSpan span{t.offsets[b].begin, t.offsets[e - 1].end};
        TagSequence tags = span_to_tags(t, span);
        auto round = tags_to_span(t, tags);
        ASSERT_TRUE(round.has_value());
        EXPECT_EQ(*round, span);
      }
  }
}

TEST(TagCodec, RandomizedRoundTrips) {
  Rng rng(2024);
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 1 + rng.next_below(24);
    TokenizedText t = framed_tokens(n);
    std::optional<CharSpan> span;
    if (rng.next_unit() < 0.9) {
      const std::size_t b = 1 + rng.next_below(n);          // word indices are 1..n
      const std::size_t e = b + 1 + rng.next_below(n + 1 - b);  // (b, n+1]
      span = CharSpan{t.offsets[b].begin, t.offsets[e - 1].end};
    }
    TagSequence tags = span_to_tags(t, span);
    EXPECT_TRUE(is_valid_tag_sequence(tags));
    auto round = tags_to_span(t, tags);
    if (span)
      EXPECT_EQ(*round, *span);
    else
      EXPECT_FALSE(round.has_value());
  }
}
