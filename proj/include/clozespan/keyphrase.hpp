#pragma once

// Keyphrase scoring and per-sentence candidate selection.
//
// score(kp) = (1/n^alpha) * sum_i log(|D| / count(w_i))
//
// with |D| the number of sentences behind the frequency table and n the
// phrase length in words. Higher alpha favors shorter phrases.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "clozespan/corpus.hpp"

namespace clozespan {

struct KeyphraseCandidate {
  std::vector<std::string> words;
  std::size_t begin = 0;  // byte span in the source sentence
  std::size_t end = 0;
  double score = 0.0;

  std::size_t n() const { return words.size(); }
  std::string joined() const {
    std::string s;
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i) s += ' ';
      s += words[i];
    }
    return s;
  }
};

struct KeyphraseConfig {
  double alpha = 0.8;
  double threshold = 0.0;
  std::size_t max_per_sentence = 2;
  double max_span_fraction = 0.5;
  std::size_t max_ngram = 3;
};

inline double score_keyphrase(std::span<const std::string> words,
                              const WordFrequencyTable& freq, double alpha) {
  if (words.empty()) throw std::invalid_argument("score_keyphrase: empty phrase");
  if (freq.num_sentences == 0)
    throw std::invalid_argument("score_keyphrase: frequency table has no sentences");
  const double d = static_cast<double>(freq.num_sentences);
  double sum = 0.0;
  for (const std::string& w : words)
    sum += std::log(d / static_cast<double>(freq.count_or_one(w)));
  return sum / std::pow(static_cast<double>(words.size()), alpha);
}

// All contiguous 1..max_ngram-grams whose score strictly exceeds the
// threshold, minus phrases spanning more than max_span_fraction of the
// sentence and phrases whose word sequence occurs more than once. At most
// max_per_sentence survivors are kept: highest score first, overlapping
// candidates discarded, ties broken by earlier start then shorter span.
// Returned candidates are ordered by start offset.
inline std::vector<KeyphraseCandidate> extract_keyphrases(
    std::string_view sentence, const std::vector<Word>& words,
    const WordFrequencyTable& freq, const KeyphraseConfig& config) {
  std::vector<KeyphraseCandidate> candidates;
  const double max_span_chars = config.max_span_fraction * static_cast<double>(sentence.size());

  auto occurrences = [&](std::size_t i, std::size_t n) {
    std::size_t hits = 0;
    for (std::size_t j = 0; j + n <= words.size(); ++j) {
      bool match = true;
      for (std::size_t k = 0; k < n; ++k)
        if (words[j + k].text != words[i + k].text) {
          match = false;
          break;
        }
      if (match) ++hits;
    }
    return hits;
  };

  for (std::size_t i = 0; i < words.size(); ++i) {
    for (std::size_t n = 1; n <= config.max_ngram && i + n <= words.size(); ++n) {
      KeyphraseCandidate cand;
      cand.begin = words[i].begin;
      cand.end = words[i + n - 1].end;
      if (static_cast<double>(cand.end - cand.begin) > max_span_chars) continue;
      cand.words.reserve(n);
      for (std::size_t k = 0; k < n; ++k) cand.words.push_back(words[i + k].text);
      cand.score = score_keyphrase(cand.words, freq, config.alpha);
      if (!(cand.score > config.threshold)) continue;
      if (occurrences(i, n) > 1) continue;
      candidates.push_back(std::move(cand));
    }
  }

  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const KeyphraseCandidate& a, const KeyphraseCandidate& b) {
                     if (a.score != b.score) return a.score > b.score;
                     if (a.begin != b.begin) return a.begin < b.begin;
                     return (a.end - a.begin) < (b.end - b.begin);
                   });

  std::vector<KeyphraseCandidate> selected;
  for (const KeyphraseCandidate& cand : candidates) {
    if (selected.size() >= config.max_per_sentence) break;
    bool overlaps = false;
    for (const KeyphraseCandidate& s : selected)
      if (cand.begin < s.end && s.begin < cand.end) {
        overlaps = true;
        break;
      }
    if (!overlaps) selected.push_back(cand);
  }

  std::sort(selected.begin(), selected.end(),
            [](const KeyphraseCandidate& a, const KeyphraseCandidate& b) {
              return a.begin < b.begin;
            });
  return selected;
}

// Picks the threshold whose mean keyphrases-per-sentence comes closest to the
// target density. Deterministic: searches over the observed candidate scores.
inline double calibrate_threshold(const std::vector<RawComment>& sentences,
                                  const WordFrequencyTable& freq,
                                  KeyphraseConfig config,
                                  double target_per_sentence = 1.65) {
  if (sentences.empty())
    throw std::invalid_argument("calibrate_threshold: no sentences");

  struct Tokenized {
    std::string_view text;
    std::vector<Word> words;
  };
  std::vector<Tokenized> tokenized;
  tokenized.reserve(sentences.size());
  std::vector<double> scores;
  config.threshold = -1e300;
  for (const RawComment& c : sentences) {
    tokenized.push_back({c.text, word_tokenize(c.text)});
    for (const KeyphraseCandidate& cand :
         extract_keyphrases(c.text, tokenized.back().words, freq, config))
      scores.push_back(cand.score);
  }
  if (scores.empty()) return 0.0;
  std::sort(scores.begin(), scores.end());
  scores.erase(std::unique(scores.begin(), scores.end()), scores.end());

  auto density = [&](double threshold) {
    config.threshold = threshold;
    std::size_t total = 0;
    for (const Tokenized& t : tokenized)
      total += extract_keyphrases(t.text, t.words, freq, config).size();
    return static_cast<double>(total) / static_cast<double>(sentences.size());
  };

  // Thresholds just below each distinct score; density is nonincreasing.
  double best_threshold = scores.back();
  double best_gap = std::abs(density(best_threshold) - target_per_sentence);
  std::size_t lo = 0, hi = scores.size();
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    const double th = std::nextafter(scores[mid], -1e300);
    const double d = density(th);
    const double gap = std::abs(d - target_per_sentence);
    if (gap < best_gap) {
      best_gap = gap;
      best_threshold = th;
    }
    if (d > target_per_sentence)
      lo = mid + 1;
    else
      hi = mid;
  }
  return best_threshold;
}

}  // namespace clozespan
