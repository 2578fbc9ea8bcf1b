#pragma once

// Subword vocabulary training and greedy left-to-right tokenization.
//
// Token id layout: PAD=0, BOS=1, EOS=2, BLANK=3, trained pieces from 4, then
// num_oov_buckets hash buckets. Unknown units hash with FNV-1a 64
// (offset basis 14695981039346656037, prime 1099511628211) over their UTF-8
// bytes, modulo the bucket count.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "clozespan/corpus.hpp"
#include "clozespan/rng.hpp"

namespace clozespan {

struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kBlank = 3;
  static constexpr int kFirstPiece = 4;

  std::vector<std::string> pieces;  // id = kFirstPiece + index
  int num_oov_buckets = 100;

  std::unordered_map<std::string, int> piece_to_id;
  std::size_t max_piece_len = 0;

  void rebuild_index() {
    piece_to_id.clear();
    max_piece_len = 0;
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      piece_to_id.emplace(pieces[i], kFirstPiece + static_cast<int>(i));
      max_piece_len = std::max(max_piece_len, pieces[i].size());
    }
    max_piece_len = std::max(max_piece_len, kBlankToken.size());
  }

  int oov_base() const { return kFirstPiece + static_cast<int>(pieces.size()); }
  int size() const { return oov_base() + num_oov_buckets; }

  int oov_id(std::string_view unit) const {
    return oov_base() +
           static_cast<int>(fnv1a64(unit) % static_cast<std::uint64_t>(num_oov_buckets));
  }
};

struct TokenizedText {
  std::vector<int> ids;
  std::vector<CharSpan> offsets;  // BOS/EOS carry empty ranges at the boundaries
  std::string text;

  std::size_t size() const { return ids.size(); }
};

// Frequency-based pair-merge inventory over whitespace-split words. All seen
// single characters are kept; merges stop at target_size or when no adjacent
// pair repeats. Pieces colliding with the special token literals are skipped.
inline Vocabulary train_vocab(const std::vector<std::string>& corpus,
                              std::size_t target_size, int num_oov_buckets = 100) {
  if (target_size < 256)
    throw std::invalid_argument("train_vocab: target_size must be >= 256");

  std::map<std::string, std::uint64_t> word_counts;
  for (const std::string& text : corpus) {
    std::size_t pos = 0;
    while (pos < text.size()) {
      auto [cp, len] = utf8::decode(text, pos);
      if (utf8::is_space(cp)) {
        pos += len;
        continue;
      }
      std::size_t end = pos;
      while (end < text.size()) {
        auto [c, l] = utf8::decode(text, end);
        if (utf8::is_space(c)) break;
        end += l;
      }
      ++word_counts[text.substr(pos, end - pos)];
      pos = end;
    }
  }
  if (word_counts.empty()) throw std::invalid_argument("train_vocab: empty corpus");

  // words as sequences of symbols, initially code points
  struct Seq {
    std::vector<std::string> symbols;
    std::uint64_t count;
  };
  std::vector<Seq> seqs;
  std::map<std::string, std::uint64_t> symbol_seen;
  for (const auto& [word, count] : word_counts) {
    Seq seq;
    seq.count = count;
    std::size_t pos = 0;
    while (pos < word.size()) {
      const std::size_t len = utf8::decode(word, pos).second;
      seq.symbols.push_back(word.substr(pos, len));
      symbol_seen[seq.symbols.back()] += count;
      pos += len;
    }
    seqs.push_back(std::move(seq));
  }

  Vocabulary vocab;
  vocab.num_oov_buckets = num_oov_buckets;
  auto reserved = [](const std::string& piece) {
    return piece == kBlankToken || piece == "PAD" || piece == "BOS" || piece == "EOS";
  };
  for (const auto& [sym, n] : symbol_seen) {
    (void)n;
    if (!reserved(sym)) vocab.pieces.push_back(sym);
  }

  const std::size_t budget =
      target_size > static_cast<std::size_t>(Vocabulary::kFirstPiece)
          ? target_size - Vocabulary::kFirstPiece
          : 0;
  std::unordered_set<std::string> have(vocab.pieces.begin(), vocab.pieces.end());

  while (vocab.pieces.size() < budget) {
    std::map<std::pair<std::string, std::string>, std::uint64_t> pair_counts;
    for (const Seq& seq : seqs)
      for (std::size_t i = 0; i + 1 < seq.symbols.size(); ++i)
        pair_counts[{seq.symbols[i], seq.symbols[i + 1]}] += seq.count;

    std::pair<std::string, std::string> best;
    std::uint64_t best_count = 0;
    for (const auto& [pair, count] : pair_counts) {
      const std::string merged = pair.first + pair.second;
      if (have.count(merged) || reserved(merged)) continue;
      if (count > best_count) {
        best_count = count;
        best = pair;
      }
    }
    if (best_count < 2) break;

    const std::string merged = best.first + best.second;
    vocab.pieces.push_back(merged);
    have.insert(merged);
    for (Seq& seq : seqs) {
      std::vector<std::string>& s = seq.symbols;
      for (std::size_t i = 0; i + 1 < s.size();) {
        if (s[i] == best.first && s[i + 1] == best.second) {
          s[i] = merged;
          s.erase(s.begin() + static_cast<std::ptrdiff_t>(i) + 1);
        } else {
          ++i;
        }
      }
    }
  }

  std::sort(vocab.pieces.begin(), vocab.pieces.end());
  vocab.rebuild_index();
  return vocab;
}

// Greedy longest-prefix tokenization. Whitespace delimits words and carries
// no token. BLANK matches as a whole piece unless a longer trained piece
// wins the greedy comparison. Characters outside the vocabulary consume one
// code point and hash into an OOV bucket, so tokenization is total.
inline TokenizedText tokenize(std::string_view text, const Vocabulary& vocab) {
  TokenizedText out;
  out.text = std::string(text);
  out.ids.push_back(Vocabulary::kBos);
  out.offsets.push_back(CharSpan{0, 0});

  std::size_t pos = 0;
  while (pos < text.size()) {
    auto [cp, cplen] = utf8::decode(text, pos);
    if (utf8::is_space(cp)) {
      pos += cplen;
      continue;
    }
    std::size_t word_end = pos;
    while (word_end < text.size()) {
      auto [c, l] = utf8::decode(text, word_end);
      if (utf8::is_space(c)) break;
      word_end += l;
    }
    while (pos < word_end) {
      const std::size_t remaining = word_end - pos;
      std::size_t best_len = 0;
      int best_id = -1;
      const std::size_t cap = std::min(vocab.max_piece_len, remaining);
      for (std::size_t len = cap; len >= 1; --len) {
        const std::string_view prefix = text.substr(pos, len);
        if (prefix == kBlankToken) {
          best_len = len;
          best_id = Vocabulary::kBlank;
          break;
        }
        auto it = vocab.piece_to_id.find(std::string(prefix));
        if (it != vocab.piece_to_id.end()) {
          best_len = len;
          best_id = it->second;
          break;
        }
      }
      if (best_id < 0) {
        const std::size_t len = utf8::decode(text, pos).second;
        best_len = std::min(len, remaining);
        best_id = vocab.oov_id(text.substr(pos, best_len));
      }
      out.ids.push_back(best_id);
      out.offsets.push_back(CharSpan{pos, pos + best_len});
      pos += best_len;
    }
    pos = word_end;
  }

  out.ids.push_back(Vocabulary::kEos);
  out.offsets.push_back(CharSpan{text.size(), text.size()});
  return out;
}

inline void write_vocab(std::ostream& out, const Vocabulary& vocab) {
  out << "clozespan-vocab-v1\n";
  out << "oov_buckets\t" << vocab.num_oov_buckets << "\n";
  out << "specials\tPAD=0,BOS=1,EOS=2,BLANK=3\n";
  for (const std::string& piece : vocab.pieces) out << piece << "\n";
}

inline Vocabulary read_vocab(std::istream& in) {
  Vocabulary vocab;
  std::string line;
  if (!std::getline(in, line) || line != "clozespan-vocab-v1")
    throw std::runtime_error("vocabulary: bad magic line");
  if (!std::getline(in, line) || line.rfind("oov_buckets\t", 0) != 0)
    throw std::runtime_error("vocabulary: missing oov_buckets");
  vocab.num_oov_buckets = std::stoi(line.substr(line.find('\t') + 1));
  if (!std::getline(in, line) || line.rfind("specials\t", 0) != 0)
    throw std::runtime_error("vocabulary: missing specials");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    vocab.pieces.push_back(line);
  }
  vocab.rebuild_index();
  return vocab;
}

inline void save_vocab(const std::string& path, const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary: " + path);
  write_vocab(out, vocab);
}

inline Vocabulary load_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open vocabulary: " + path);
  return read_vocab(in);
}

}  // namespace clozespan
