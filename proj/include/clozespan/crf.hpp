#pragma once

// Linear-chain CRF with per-step transition matrices.
//
// The network emits, for each input position t, a 4x4 transition matrix W_t
// (W_t[next][prev] scores the move y_t -> y_{t+1}; the last position's matrix
// is unused) and a 4-vector of unary potentials u_t, packed as one row of 20
// values [W row-major | u].
//
//   log p(y) = sum_{t<T-1} W_t[y_{t+1}, y_t] + sum_t u_t[y_t] - log Z
//
// Training uses the differentiable graph path (crf_nll); decoding and
// posteriors run on plain doubles. Pad positions never enter the potentials:
// sequences are processed at their true length.

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "clozespan/tags.hpp"
#include "clozespan/tensor.hpp"

namespace clozespan {

inline constexpr std::size_t kPotentialsPerStep = 20;  // 16 transitions + 4 unaries

struct CrfPotentials {
  // transitions[t][next*4+prev] scores y_t -> y_{t+1}; size T-1
  std::vector<std::array<double, 16>> transitions;
  std::vector<std::array<double, 4>> unaries;  // size T

  std::size_t length() const { return unaries.size(); }
};

// Extracts raw potentials from a (T, 20) score tensor.
template <typename Real>
CrfPotentials crf_potentials_from(const Tensor<Real>& scores) {
  if (scores.shape().size() != 2 || scores.shape()[1] != kPotentialsPerStep)
    throw std::invalid_argument("crf_potentials_from: expected (T,20), got " +
                                shape_str(scores.shape()));
  const std::size_t t_len = scores.shape()[0];
  CrfPotentials pot;
  pot.unaries.resize(t_len);
  pot.transitions.resize(t_len > 0 ? t_len - 1 : 0);
  for (std::size_t t = 0; t < t_len; ++t) {
    const Real* row = scores.value().data() + t * kPotentialsPerStep;
    for (int k = 0; k < 4; ++k) pot.unaries[t][static_cast<std::size_t>(k)] =
        static_cast<double>(row[16 + k]);
    if (t + 1 < t_len)
      for (int k = 0; k < 16; ++k)
        pot.transitions[t][static_cast<std::size_t>(k)] = static_cast<double>(row[k]);
  }
  return pot;
}

namespace detail {
inline double logsumexp4(const double* x, std::size_t n) {
  double m = x[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i] - m);
  return m + std::log(s);
}
}  // namespace detail

// Forward algorithm in log space.
inline double log_partition(const CrfPotentials& pot) {
  const std::size_t t_len = pot.length();
  if (t_len == 0) throw std::invalid_argument("log_partition: empty sequence");
  std::array<double, 4> alpha = pot.unaries[0];
  std::array<double, 4> next;
  for (std::size_t t = 0; t + 1 < t_len; ++t) {
    for (std::size_t j = 0; j < 4; ++j) {
      double terms[4];
      for (std::size_t i = 0; i < 4; ++i) terms[i] = alpha[i] + pot.transitions[t][j * 4 + i];
      next[j] = detail::logsumexp4(terms, 4) + pot.unaries[t + 1][j];
    }
    alpha = next;
  }
  return detail::logsumexp4(alpha.data(), 4);
}

inline double sequence_score(const CrfPotentials& pot, const TagSequence& tags) {
  if (tags.size() != pot.length())
    throw std::invalid_argument("sequence_score: tag length " +
                                std::to_string(tags.size()) + " != sequence length " +
                                std::to_string(pot.length()));
  double score = 0;
  for (std::size_t t = 0; t < tags.size(); ++t) {
    score += pot.unaries[t][static_cast<std::size_t>(tags[t])];
    if (t + 1 < tags.size())
      score += pot.transitions[t][static_cast<std::size_t>(tags[t + 1]) * 4 +
                                  static_cast<std::size_t>(tags[t])];
  }
  return score;
}

inline double log_likelihood(const CrfPotentials& pot, const TagSequence& tags) {
  return sequence_score(pot, tags) - log_partition(pot);
}

struct ScoredSequence {
  TagSequence tags;
  double log_prob = 0;
};

// Exact k-best decoding. Candidates carry their tag prefix so that equal
// scores break ties toward the lexicographically smaller sequence.
inline std::vector<ScoredSequence> viterbi(const CrfPotentials& pot, std::size_t k = 1) {
  if (k < 1) throw std::invalid_argument("viterbi: k must be >= 1");
  const std::size_t t_len = pot.length();
  if (t_len == 0) throw std::invalid_argument("viterbi: empty sequence");

  struct Cand {
    double score;
    TagSequence prefix;
  };
  auto better = [](const Cand& a, const Cand& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.prefix < b.prefix;
  };

  std::array<std::vector<Cand>, 4> beams;
  for (std::size_t s = 0; s < 4; ++s)
    beams[s].push_back(Cand{pot.unaries[0][s], TagSequence{static_cast<Tag>(s)}});

  for (std::size_t t = 0; t + 1 < t_len; ++t) {
    std::array<std::vector<Cand>, 4> next;
    for (std::size_t j = 0; j < 4; ++j) {
      std::vector<Cand>& bucket = next[j];
      for (std::size_t i = 0; i < 4; ++i) {
        const double step = pot.transitions[t][j * 4 + i] + pot.unaries[t + 1][j];
        for (const Cand& c : beams[i]) {
          Cand extended{c.score + step, c.prefix};
          extended.prefix.push_back(static_cast<Tag>(j));
          bucket.push_back(std::move(extended));
        }
      }
      std::sort(bucket.begin(), bucket.end(), better);
      if (bucket.size() > k) bucket.resize(k);
    }
    beams = std::move(next);
  }

  std::vector<Cand> final;
  for (std::size_t s = 0; s < 4; ++s)
    final.insert(final.end(), beams[s].begin(), beams[s].end());
  std::sort(final.begin(), final.end(), better);
  if (final.size() > k) final.resize(k);

  const double log_z = log_partition(pot);
  std::vector<ScoredSequence> out;
  out.reserve(final.size());
  for (Cand& c : final)
    out.push_back(ScoredSequence{std::move(c.prefix), c.score - log_z});
  return out;
}

struct SpanPosteriors {
  double no_span = 0;  // probability of the all-BEFORE sequence
  std::vector<std::pair<std::pair<std::size_t, std::size_t>, double>> spans;
};

// Exact sequence probability of each candidate token range plus the no-span
// sequence.
inline SpanPosteriors span_posteriors(
    const CrfPotentials& pot,
    const std::vector<std::pair<std::size_t, std::size_t>>& candidates) {
  const double log_z = log_partition(pot);
  SpanPosteriors out;
  out.no_span =
      std::exp(sequence_score(pot, tags_from_token_range(pot.length(), std::nullopt)) -
               log_z);
  out.spans.reserve(candidates.size());
  for (const auto& range : candidates) {
    const TagSequence tags = tags_from_token_range(pot.length(), range);
    out.spans.emplace_back(range, std::exp(sequence_score(pot, tags) - log_z));
  }
  return out;
}

// Differentiable negative log-likelihood over a (T, 20) potentials tensor.
template <typename Real>
Tensor<Real> crf_nll(const Tensor<Real>& scores, const TagSequence& gold) {
  if (scores.shape().size() != 2 || scores.shape()[1] != kPotentialsPerStep)
    throw std::invalid_argument("crf_nll: expected (T,20), got " +
                                shape_str(scores.shape()));
  const std::size_t t_len = scores.shape()[0];
  if (gold.size() != t_len)
    throw std::invalid_argument("crf_nll: gold length " + std::to_string(gold.size()) +
                                " != sequence length " + std::to_string(t_len));
  if (t_len == 0) throw std::invalid_argument("crf_nll: empty sequence");

  std::vector<Real> mask(t_len * kPotentialsPerStep, Real(0));
  for (std::size_t t = 0; t < t_len; ++t) {
    mask[t * kPotentialsPerStep + 16 + static_cast<std::size_t>(gold[t])] = Real(1);
    if (t + 1 < t_len)
      mask[t * kPotentialsPerStep + static_cast<std::size_t>(gold[t + 1]) * 4 +
           static_cast<std::size_t>(gold[t])] = Real(1);
  }
  Tensor<Real> gold_score = sum_masked(scores, std::move(mask));

  auto unary_at = [&](std::size_t t) {
    return reshape(slice_cols(slice_rows(scores, t, t + 1), 16, 20), Shape{4});
  };
  Tensor<Real> alpha = unary_at(0);
  for (std::size_t t = 0; t + 1 < t_len; ++t) {
    Tensor<Real> w =
        reshape(slice_cols(slice_rows(scores, t, t + 1), 0, 16), Shape{4, 4});
    // broadcast over the previous-tag axis (last dim)
    alpha = add(logsumexp(add(w, alpha)), unary_at(t + 1));
  }
  Tensor<Real> log_z = logsumexp(alpha);
  return sub(log_z, gold_score);
}

}  // namespace clozespan
