#include "clozespan/subword.hpp"

#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "clozespan/rng.hpp"

using namespace clozespan;

namespace {

Vocabulary tiny_vocab(const std::vector<std::string>& pieces, int oov_buckets = 10) {
  Vocabulary v;
  v.pieces = pieces;
  std::sort(v.pieces.begin(), v.pieces.end());
  v.num_oov_buckets = oov_buckets;
  v.rebuild_index();
  return v;
}

}  // namespace

TEST(TrainVocab, KeepsAllSeenCharactersAndMerges) {
  Vocabulary vocab = train_vocab({"aaab aaab aaab"}, 300, 10);
  std::set<std::string> pieces(vocab.pieces.begin(), vocab.pieces.end());
  EXPECT_TRUE(pieces.count("a"));
  EXPECT_TRUE(pieces.count("b"));
  EXPECT_TRUE(pieces.count("aa"));  // most frequent adjacent pair merges
}

TEST(TrainVocab, DeterministicRetraining) {
  const std::vector<std::string> corpus = {"the cat sat on the mat",
                                           "the bat and the rat chat"};
  Vocabulary a = train_vocab(corpus, 280, 16);
  Vocabulary b = train_vocab(corpus, 280, 16);
  EXPECT_EQ(a.pieces, b.pieces);
  EXPECT_EQ(a.num_oov_buckets, b.num_oov_buckets);
}

TEST(TrainVocab, Errors) {
  EXPECT_THROW(train_vocab({"text"}, 100, 10), std::invalid_argument);  // size < 256
  EXPECT_THROW(train_vocab({}, 300, 10), std::invalid_argument);
  EXPECT_THROW(train_vocab({"   "}, 300, 10), std::invalid_argument);
}

TEST(TrainVocab, BlankLiteralNeverBecomesAPiece) {
  std::vector<std::string> corpus;
  for (int i = 0; i < 50; ++i) corpus.push_back("fill the BLANK here BLANK now");
  Vocabulary vocab = train_vocab(corpus, 400, 10);
  for (const std::string& piece : vocab.pieces) EXPECT_NE(piece, "BLANK");
}

TEST(Tokenize, SpecialsAndEmptyText) {
  Vocabulary vocab = tiny_vocab({"a", "b"});
  TokenizedText blank = tokenize("BLANK", vocab);
  ASSERT_EQ(blank.ids.size(), 3u);
  EXPECT_EQ(blank.ids[0], Vocabulary::kBos);
  EXPECT_EQ(blank.ids[1], Vocabulary::kBlank);
  EXPECT_EQ(blank.ids[2], Vocabulary::kEos);
  EXPECT_EQ(blank.offsets[1], (CharSpan{0, 5}));

  TokenizedText empty = tokenize("", vocab);
  ASSERT_EQ(empty.ids.size(), 2u);
  EXPECT_EQ(empty.ids[0], Vocabulary::kBos);
  EXPECT_EQ(empty.ids[1], Vocabulary::kEos);
  EXPECT_EQ(empty.offsets[0], (CharSpan{0, 0}));
  EXPECT_EQ(empty.offsets[1], (CharSpan{0, 0}));
}

TEST(Tokenize, GreedyPrefixBeatsShorterSegmentations) {
  // oracle: enumerate all segmentations of "ab" over {"ab","a","b"}; greedy
  // must pick the single-piece one
  Vocabulary vocab = tiny_vocab({"ab", "a", "b"});
  TokenizedText toks = tokenize("ab", vocab);
  ASSERT_EQ(toks.ids.size(), 3u);
  EXPECT_EQ(toks.ids[1], vocab.piece_to_id.at("ab"));

  // mixed: "aba" -> greedy "ab" + "a", never "a" + "b" + "a"
  TokenizedText mixed = tokenize("aba", vocab);
  ASSERT_EQ(mixed.ids.size(), 4u);
  EXPECT_EQ(mixed.ids[1], vocab.piece_to_id.at("ab"));
  EXPECT_EQ(mixed.ids[2], vocab.piece_to_id.at("a"));
}

TEST(Tokenize, OffsetsReconstructNonWhitespaceContent) {
  Vocabulary vocab = train_vocab({"the quick brown fox jumps over the lazy dog",
                                  "pack my box with five dozen jugs"},
                                 300, 25);
  Rng rng(3);
  const std::string chars = "abcdefgox .,!";
  for (int trial = 0; trial < 300; ++trial) {
    std::string text;
    const std::size_t len = rng.next_below(30);
    for (std::size_t i = 0; i < len; ++i) text += chars[rng.next_below(chars.size())];
    TokenizedText toks = tokenize(text, vocab);
    std::string rebuilt;
    for (const CharSpan& span : toks.offsets) rebuilt += text.substr(span.begin, span.size());
    std::string expected;
    for (char c : text)
      if (c != ' ') expected += c;
    EXPECT_EQ(rebuilt, expected) << "text: " << text;
    // offsets ordered and non-overlapping
    for (std::size_t i = 1; i < toks.offsets.size(); ++i)
      EXPECT_LE(toks.offsets[i - 1].end, toks.offsets[i].begin);
  }
}

TEST(Tokenize, TotalOnArbitraryInput) {
  Vocabulary vocab = tiny_vocab({"a"});
  // characters missing from the vocabulary hash into OOV buckets
  TokenizedText toks = tokenize("a\xC3\xA9z!", vocab);
  for (std::size_t i = 1; i + 1 < toks.ids.size(); ++i) {
    EXPECT_GE(toks.ids[i], Vocabulary::kFirstPiece);
    EXPECT_LT(toks.ids[i], vocab.size());
  }
}

TEST(Tokenize, OovHashingIsFnv1aModBuckets) {
  Vocabulary vocab = tiny_vocab({"a"}, 7);
  TokenizedText toks = tokenize("z", vocab);
  ASSERT_EQ(toks.ids.size(), 3u);
  const int expected = vocab.oov_base() + static_cast<int>(fnv1a64("z") % 7);
  EXPECT_EQ(toks.ids[1], expected);
}

TEST(Tokenize, BlankDoesNotPreemptLongerPieces) {
  Vocabulary vocab = tiny_vocab({"BLANKET", "B", "L", "A", "N", "K", "E", "T"});
  TokenizedText toks = tokenize("BLANKET", vocab);
  ASSERT_EQ(toks.ids.size(), 3u);
  EXPECT_EQ(toks.ids[1], vocab.piece_to_id.at("BLANKET"));
  // but a bare BLANK word still maps to the reserved id
  TokenizedText blank = tokenize("BLANK", vocab);
  EXPECT_EQ(blank.ids[1], Vocabulary::kBlank);
}

TEST(VocabularyIo, LoadingReproducesIdenticalIds) {
  Vocabulary vocab = train_vocab({"some training text for pieces",
                                  "more text with repeated pieces of text"},
                                 300, 33);
  std::stringstream buffer;
  write_vocab(buffer, vocab);
  Vocabulary loaded = read_vocab(buffer);
  EXPECT_EQ(loaded.pieces, vocab.pieces);
  EXPECT_EQ(loaded.num_oov_buckets, vocab.num_oov_buckets);
  for (const std::string& piece : vocab.pieces)
    EXPECT_EQ(loaded.piece_to_id.at(piece), vocab.piece_to_id.at(piece));
  // identical tokenizations end to end
  const std::string text = "text with pieces";
  EXPECT_EQ(tokenize(text, loaded).ids, tokenize(text, vocab).ids);
}
