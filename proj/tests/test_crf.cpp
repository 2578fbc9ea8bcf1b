#include "clozespan/crf.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "clozespan/rng.hpp"
#include "support/crf_oracle.hpp"
#include "support/gradcheck.hpp"

using namespace clozespan;
using clozespan::testing::all_tag_sequences;
using clozespan::testing::oracle_log_partition;
using clozespan::testing::oracle_top_k;
using clozespan::testing::random_potentials;

namespace {

Tensor<double> potentials_tensor(const CrfPotentials& pot, bool requires_grad = false) {
  const std::size_t t_len = pot.length();
  std::vector<double> values(t_len * kPotentialsPerStep, 0.0);
  for (std::size_t t = 0; t < t_len; ++t) {
    if (t + 1 < t_len)
      for (int k = 0; k < 16; ++k)
        values[t * kPotentialsPerStep + static_cast<std::size_t>(k)] =
            pot.transitions[t][static_cast<std::size_t>(k)];
    for (int k = 0; k < 4; ++k)
      values[t * kPotentialsPerStep + 16 + static_cast<std::size_t>(k)] =
          pot.unaries[t][static_cast<std::size_t>(k)];
  }
  return Tensor<double>::from({t_len, kPotentialsPerStep}, std::move(values),
                              requires_grad);
}

}  // namespace

TEST(CrfLikelihood, SingleStepIsUnarySoftmax) {
  Rng rng(1);
  CrfPotentials pot = random_potentials(1, rng);
  for (int tag = 0; tag < 4; ++tag) {
    const TagSequence seq = {static_cast<Tag>(tag)};
    double lse = 0;
    {
      double m = pot.unaries[0][0];
      for (double v : pot.unaries[0]) m = std::max(m, v);
      double s = 0;
      for (double v : pot.unaries[0]) s += std::exp(v - m);
      lse = m + std::log(s);
    }
    EXPECT_NEAR(log_likelihood(pot, seq),
                pot.unaries[0][static_cast<std::size_t>(tag)] - lse, 1e-12);
  }
}

TEST(CrfLikelihood, AllZeroPotentialsAreUniform) {
  for (std::size_t t_len : {1u, 2u, 5u, 8u}) {
    CrfPotentials pot;
    pot.unaries.assign(t_len, {0, 0, 0, 0});
    pot.transitions.assign(t_len - 1, {});
    for (auto& w : pot.transitions) w.fill(0.0);
    const TagSequence seq(t_len, Tag::kBefore);
    EXPECT_NEAR(log_likelihood(pot, seq), -static_cast<double>(t_len) * std::log(4.0),
                1e-12);
  }
}

TEST(CrfLikelihood, MatchesEnumerationOracle) {
  Rng rng(7);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t t_len = 1 + rng.next_below(6);
    CrfPotentials pot = random_potentials(t_len, rng);
    EXPECT_NEAR(log_partition(pot), oracle_log_partition(pot), 1e-9);
    // exp(log p) sums to one over all sequences
    double total = 0;
    for (const TagSequence& seq : all_tag_sequences(t_len))
      total += std::exp(log_likelihood(pot, seq));
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(CrfLikelihood, UnaryShiftInvariance) {
  Rng rng(8);
  CrfPotentials pot = random_potentials(5, rng);
  CrfPotentials shifted = pot;
  for (std::size_t t = 0; t < 5; ++t)
    for (double& v : shifted.unaries[t]) v += 3.7 * static_cast<double>(t + 1);
  for (const TagSequence& seq : all_tag_sequences(5))
    EXPECT_NEAR(log_likelihood(pot, seq), log_likelihood(shifted, seq), 1e-9);
}

TEST(CrfLikelihood, LengthMismatchError) {
  Rng rng(9);
  CrfPotentials pot = random_potentials(3, rng);
  EXPECT_THROW(log_likelihood(pot, TagSequence(2, Tag::kBefore)), std::invalid_argument);
}

TEST(CrfViterbi, PeakedUnariesFollowArgmax) {
  CrfPotentials pot;
  const std::vector<int> path = {0, 1, 2, 3, 3};
  pot.unaries.assign(5, {0, 0, 0, 0});
  pot.transitions.assign(4, {});
  for (auto& w : pot.transitions) w.fill(0.0);
  for (std::size_t t = 0; t < 5; ++t)
    pot.unaries[t][static_cast<std::size_t>(path[t])] = 50.0;
  const auto best = viterbi(pot, 1);
  ASSERT_EQ(best.size(), 1u);
  for (std::size_t t = 0; t < 5; ++t)
    EXPECT_EQ(static_cast<int>(best[0].tags[t]), path[t]);
}

TEST(CrfViterbi, TopKMatchesEnumeration) {
  Rng rng(10);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t t_len = 1 + rng.next_below(6);
    CrfPotentials pot = random_potentials(t_len, rng);
    for (std::size_t k : {1u, 3u, 5u}) {
      const auto mine = viterbi(pot, k);
      const auto oracle = oracle_top_k(pot, k);
      ASSERT_EQ(mine.size(), oracle.size());
      for (std::size_t i = 0; i < mine.size(); ++i) {
        EXPECT_EQ(mine[i].tags, oracle[i].tags) << "trial " << trial << " k " << k;
        EXPECT_NEAR(mine[i].log_prob, oracle[i].log_prob, 1e-9);
      }
    }
  }
}

TEST(CrfViterbi, TiesBreakLexicographically) {
  // all-zero potentials: every sequence scores equally, so top-k must be the
  // lexicographically smallest sequences
  CrfPotentials pot;
  pot.unaries.assign(3, {0, 0, 0, 0});
  pot.transitions.assign(2, {});
  for (auto& w : pot.transitions) w.fill(0.0);
  const auto top = viterbi(pot, 5);
  const auto oracle = oracle_top_k(pot, 5);
  ASSERT_EQ(top.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(top[i].tags, oracle[i].tags);
  // first sequence is all-BEFORE
  EXPECT_EQ(top[0].tags, TagSequence(3, Tag::kBefore));
}

TEST(CrfPosteriors, UniformPotentialsGiveEqualLengthEqualProb) {
  CrfPotentials pot;
  pot.unaries.assign(4, {0, 0, 0, 0});
  pot.transitions.assign(3, {});
  for (auto& w : pot.transitions) w.fill(0.0);
  const auto post = span_posteriors(pot, {{0, 2}, {1, 3}, {2, 4}});
  EXPECT_NEAR(post.spans[0].second, post.spans[1].second, 1e-12);
  EXPECT_NEAR(post.spans[1].second, post.spans[2].second, 1e-12);
  EXPECT_NEAR(post.no_span, std::pow(0.25, 4.0), 1e-12);
}

TEST(CrfPosteriors, SingleTokenMatchesUnarySoftmax) {
  Rng rng(11);
  CrfPotentials pot = random_potentials(1, rng);
  const auto post = span_posteriors(pot, {{0, 1}});
  double denom = 0;
  for (double v : pot.unaries[0]) denom += std::exp(v);
  EXPECT_NEAR(post.spans[0].second,
              std::exp(pot.unaries[0][static_cast<std::size_t>(Tag::kBegin)]) / denom,
              1e-9);
  EXPECT_NEAR(post.no_span,
              std::exp(pot.unaries[0][static_cast<std::size_t>(Tag::kBefore)]) / denom,
              1e-9);
}

TEST(CrfPosteriors, ProbabilitiesPlusNoSpanAtMostOne) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t t_len = 2 + rng.next_below(5);
    CrfPotentials pot = random_potentials(t_len, rng);
    std::vector<std::pair<std::size_t, std::size_t>> candidates;
    for (std::size_t b = 0; b < t_len; ++b)
      for (std::size_t e = b + 1; e <= t_len; ++e) candidates.push_back({b, e});
    const auto post = span_posteriors(pot, candidates);
    double total = post.no_span;
    for (const auto& [range, p] : post.spans) total += p;
    EXPECT_LE(total, 1.0 + 1e-9);
    EXPECT_GT(total, 0.0);
  }
}

TEST(CrfGraph, AgreesWithRawImplementation) {
  Rng rng(13);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t t_len = 1 + rng.next_below(7);
    CrfPotentials pot = random_potentials(t_len, rng);
    Tensor<double> scores = potentials_tensor(pot);
    for (const TagSequence& seq : all_tag_sequences(std::min<std::size_t>(t_len, 4))) {
      if (seq.size() != t_len) break;
      EXPECT_NEAR(crf_nll(scores, seq).item(), -log_likelihood(pot, seq), 1e-9);
    }
    // spot-check one sequence for longer lengths
    const TagSequence all_before(t_len, Tag::kBefore);
    EXPECT_NEAR(crf_nll(scores, all_before).item(), -log_likelihood(pot, all_before),
                1e-9);
  }
}

TEST(CrfGraph, GradientMatchesFiniteDifferencesAndExpectedCounts) {
  Rng rng(14);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t t_len = 2 + rng.next_below(4);
    CrfPotentials pot = random_potentials(t_len, rng, 1.0);
    Tensor<double> scores = potentials_tensor(pot, /*requires_grad=*/true);
    TagSequence gold(t_len, Tag::kBefore);
    gold[0] = Tag::kBegin;
    for (std::size_t i = 1; i < t_len; ++i) gold[i] = Tag::kAfter;

    // composite loss: finite differences carry more round-off than a single
    // primitive, so the bound is looser; the expected-counts check below pins
    // the gradient exactly
    EXPECT_LT(clozespan::testing::max_rel_grad_error(
                  {&scores}, [&] { return crf_nll(scores, gold); }),
              1e-5);

    // NLL gradient = expected feature counts - gold feature counts
    scores.zero_grad();
    backward(crf_nll(scores, gold));
    std::vector<double> expected(t_len * kPotentialsPerStep, 0.0);
    for (const TagSequence& seq : all_tag_sequences(t_len)) {
      const double p = std::exp(log_likelihood(pot, seq));
      for (std::size_t t = 0; t < t_len; ++t) {
        expected[t * kPotentialsPerStep + 16 + static_cast<std::size_t>(seq[t])] += p;
        if (t + 1 < t_len)
          expected[t * kPotentialsPerStep + static_cast<std::size_t>(seq[t + 1]) * 4 +
                   static_cast<std::size_t>(seq[t])] += p;
      }
    }
    for (std::size_t t = 0; t < t_len; ++t) {
      expected[t * kPotentialsPerStep + 16 + static_cast<std::size_t>(gold[t])] -= 1.0;
      if (t + 1 < t_len)
        expected[t * kPotentialsPerStep + static_cast<std::size_t>(gold[t + 1]) * 4 +
                 static_cast<std::size_t>(gold[t])] -= 1.0;
    }
    for (std::size_t i = 0; i < expected.size(); ++i)
      EXPECT_NEAR(scores.grad()[i], expected[i], 1e-8);
  }
}

TEST(CrfPotentialsFrom, LayoutAndErrors) {
  Rng rng(15);
  CrfPotentials pot = random_potentials(3, rng);
  Tensor<double> scores = potentials_tensor(pot);
  CrfPotentials back = crf_potentials_from(scores);
  ASSERT_EQ(back.length(), 3u);
  for (std::size_t t = 0; t < 3; ++t)
    for (int k = 0; k < 4; ++k)
      EXPECT_DOUBLE_EQ(back.unaries[t][static_cast<std::size_t>(k)],
                       pot.unaries[t][static_cast<std::size_t>(k)]);
  for (std::size_t t = 0; t < 2; ++t)
    for (int k = 0; k < 16; ++k)
      EXPECT_DOUBLE_EQ(back.transitions[t][static_cast<std::size_t>(k)],
                       pot.transitions[t][static_cast<std::size_t>(k)]);
  EXPECT_THROW(crf_potentials_from(Tensor<double>::zeros({3, 7})),
               std::invalid_argument);
}
