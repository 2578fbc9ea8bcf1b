#include "clozespan/corpus.hpp"

#include <gtest/gtest.h>

#include <sstream>

#include "clozespan/rng.hpp"

using namespace clozespan;

TEST(FilterByLength, BoundsAreInclusive) {
  EXPECT_FALSE(filter_by_length({std::string(8, 'x'), "g"}).has_value());
  EXPECT_TRUE(filter_by_length({std::string(9, 'x'), "g"}).has_value());
  EXPECT_TRUE(filter_by_length({std::string(127, 'x'), "g"}).has_value());
  EXPECT_FALSE(filter_by_length({std::string(128, 'x'), "g"}).has_value());
  EXPECT_FALSE(filter_by_length({"", "g"}).has_value());
}

TEST(FilterByLength, CountsCodePointsNotBytes) {
  // nine two-byte code points: passes the default lower bound
  std::string text;
  for (int i = 0; i < 9; ++i) text += "\xc3\xa9";  // e with acute accent
  EXPECT_EQ(text.size(), 18u);
  EXPECT_TRUE(filter_by_length({text, "g"}).has_value());
}

TEST(FilterByLength, TrimsBeforeMeasuring) {
  auto kept = filter_by_length({"   hello run  ", "g"});
  ASSERT_TRUE(kept.has_value());
  EXPECT_EQ(kept->text, "hello run");
}

TEST(FilterByLength, Idempotent) {
  RawComment c{"  a sentence of reasonable size  ", "g"};
  auto once = filter_by_length(c);
  ASSERT_TRUE(once.has_value());
  auto twice = filter_by_length(*once);
  ASSERT_TRUE(twice.has_value());
  EXPECT_EQ(once->text, twice->text);
}

TEST(FilterByLength, RejectsBadBounds) {
  EXPECT_THROW(filter_by_length({"text", "g"}, 10, 5), std::invalid_argument);
}

TEST(WordTokenize, StatedExamples) {
  auto words = word_tokenize("Book a table!");
  ASSERT_EQ(words.size(), 3u);
  EXPECT_EQ(words[0].text, "book");
  EXPECT_EQ(words[0].begin, 0u);
  EXPECT_EQ(words[0].end, 4u);
  EXPECT_EQ(words[1].text, "a");
  EXPECT_EQ(words[1].begin, 5u);
  EXPECT_EQ(words[1].end, 6u);
  EXPECT_EQ(words[2].text, "table");
  EXPECT_EQ(words[2].begin, 7u);
  EXPECT_EQ(words[2].end, 12u);

  EXPECT_TRUE(word_tokenize("").empty());

  auto collapsed = word_tokenize("7pm  please");
  ASSERT_EQ(collapsed.size(), 2u);
  EXPECT_EQ(collapsed[0].text, "7pm");
  EXPECT_EQ(collapsed[1].text, "please");
}

TEST(WordTokenize, InteriorPunctuationSurvives) {
  auto words = word_tokenize("check /r/all (really)");
  ASSERT_EQ(words.size(), 3u);
  EXPECT_EQ(words[0].text, "check");
  EXPECT_EQ(words[1].text, "r/all");  // leading slash stripped, interior kept
  EXPECT_EQ(words[2].text, "really");
}

TEST(WordTokenize, AllPunctuationTokenDropped) {
  EXPECT_TRUE(word_tokenize("!!! ... --").empty());
}

TEST(CountWords, DirectCounting) {
  std::vector<RawComment> comments = {{"a b", "g"}, {"a c", "g"}};
  WordFrequencyTable table = count_words(comments);
  EXPECT_EQ(table.num_sentences, 2u);
  EXPECT_EQ(table.counts.at("a"), 2u);
  EXPECT_EQ(table.counts.at("b"), 1u);
  EXPECT_EQ(table.counts.at("c"), 1u);
}

TEST(CountWords, EmptyStream) {
  WordFrequencyTable table = count_words(std::vector<RawComment>{});
  EXPECT_EQ(table.num_sentences, 0u);
  EXPECT_TRUE(table.counts.empty());
}

TEST(CountWords, ShardedMergeEqualsSinglePass) {
  Rng rng(42);
  std::vector<std::string> lexicon = {"alpha", "beta", "gamma", "delta", "run", "7pm"};
  std::vector<RawComment> all;
  for (int i = 0; i < 200; ++i) {
    std::string text;
    const std::size_t len = 1 + rng.next_below(6);
    for (std::size_t w = 0; w < len; ++w) {
      if (w) text += ' ';
      text += lexicon[rng.next_below(lexicon.size())];
    }
    all.push_back({text, "g"});
  }
  WordFrequencyTable single = count_words(all);

  for (std::size_t cut1 = 0; cut1 < all.size(); cut1 += 67) {
    for (std::size_t cut2 = cut1; cut2 < all.size(); cut2 += 51) {
      WordFrequencyTable merged = count_words(
          std::vector<RawComment>(all.begin(), all.begin() + cut1));
      WordFrequencyTable shard2 = count_words(
          std::vector<RawComment>(all.begin() + cut1, all.begin() + cut2));
      WordFrequencyTable shard3 =
          count_words(std::vector<RawComment>(all.begin() + cut2, all.end()));
      merged.merge(shard2);
      merged.merge(shard3);
      EXPECT_EQ(merged.num_sentences, single.num_sentences);
      EXPECT_EQ(merged.counts, single.counts);
    }
  }
}

TEST(CountWords, SumOfCountsEqualsTokensEmitted) {
  std::vector<RawComment> comments = {{"one two three!", "g"},
                                      {"two, three four", "g"},
                                      {"three  four five", "g"}};
  WordFrequencyTable table = count_words(comments);
  std::uint64_t total = 0;
  for (const auto& [w, c] : table.counts) total += c;
  std::uint64_t tokens = 0;
  for (const RawComment& c : comments) tokens += word_tokenize(c.text).size();
  EXPECT_EQ(total, tokens);
}

TEST(FrequencyTable, SerializationRoundTrip) {
  WordFrequencyTable table;
  table.add_sentence("the cat sat");
  table.add_sentence("the dog ran");
  std::stringstream buffer;
  write_frequency_table(buffer, table);
  WordFrequencyTable loaded = read_frequency_table(buffer);
  EXPECT_EQ(loaded.num_sentences, table.num_sentences);
  EXPECT_EQ(loaded.counts.at("the"), 2u);
  using OrderedCounts = std::map<std::string, std::uint64_t>;
  EXPECT_EQ(OrderedCounts(loaded.counts.begin(), loaded.counts.end()),
            OrderedCounts(table.counts.begin(), table.counts.end()));
}

TEST(FrequencyTable, UnseenWordsCountAsOne) {
  WordFrequencyTable table;
  table.add_sentence("known words here");
  EXPECT_EQ(table.count_or_one("mystery"), 1u);
  EXPECT_EQ(table.count_or_one("known"), 1u);
}

TEST(ReadCorpus, GroupParsing) {
  std::stringstream input("sports\tgreat game yesterday\n"
                          "no group on this line\n"
                          "   \n"
                          "movies\tloved the ending\n");
  auto comments = read_corpus_lines(input);
  ASSERT_EQ(comments.size(), 3u);
  EXPECT_EQ(comments[0].group_key, "sports");
  EXPECT_EQ(comments[0].text, "great game yesterday");
  EXPECT_EQ(comments[1].group_key, "default");
  EXPECT_EQ(comments[2].group_key, "movies");
}
