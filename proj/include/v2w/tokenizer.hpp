#pragma once

// Subword vocabulary and fixed-length sequence encoding. The vocabulary is
// built by greedy frequency merging: start from the single characters of the
// corpus (spaces included, so detokenization is plain concatenation) and
// repeatedly add the most frequent adjacent token pair until the target size
// is reached. Encoding lowercases, collapses whitespace and segments by
// greedy longest match; unseen characters fall back to [UNK].

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "v2w/common.hpp"
#include "v2w/csv.hpp"

namespace v2w {

struct TokenSequence {
  std::vector<int> ids;             // length exactly T
  std::vector<int> attention_mask;  // 1 on non-pad positions
};

struct MaskedSequence {
  TokenSequence corrupted;
  std::map<int, int> targets;  // position -> original token id
};

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kNumSpecials = 5;

  static const std::vector<std::string>& special_tokens() {
    static const std::vector<std::string> s = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
    return s;
  }

  Vocabulary() = default;

  static Vocabulary build(const std::vector<std::string>& texts, int target_size);

  static Vocabulary from_tokens(std::vector<std::string> tokens) {
    Vocabulary v;
    if (tokens.size() < kNumSpecials) throw Error("vocab: fewer tokens than specials");
    for (int i = 0; i < kNumSpecials; ++i)
      if (tokens[static_cast<std::size_t>(i)] != special_tokens()[static_cast<std::size_t>(i)])
        throw Error("vocab: token " + std::to_string(i) + " must be " +
                    special_tokens()[static_cast<std::size_t>(i)]);
    v.tokens_ = std::move(tokens);
    for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
      if (!v.index_.emplace(v.tokens_[i], static_cast<int>(i)).second)
        throw Error("vocab: duplicate token " + v.tokens_[i]);
      v.max_token_len_ = std::max(v.max_token_len_, v.tokens_[i].size());
    }
    return v;
  }

  // One token per line, line number = id, specials first in fixed order.
  void save(const std::string& path) const {
    std::string out;
    for (const auto& t : tokens_) out += t + "\n";
    csv::write_file(path, out);
  }

  static Vocabulary load(const std::string& path) {
    std::string text = csv::read_file(path);
    std::vector<std::string> tokens;
    std::string line;
    for (char c : text) {
      if (c == '\n') {
        tokens.push_back(line);
        line.clear();
      } else if (c != '\r') {
        line.push_back(c);
      }
    }
    if (!line.empty()) tokens.push_back(line);
    return from_tokens(std::move(tokens));
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  bool has(const std::string& t) const { return index_.count(t) != 0; }
  int id_of(const std::string& t) const {
    auto it = index_.find(t);
    return it == index_.end() ? kUnk : it->second;
  }

  // [CLS] content [SEP] [PAD]...; content truncated to T-2 from the front.
  TokenSequence encode(const std::string& text, int T) const {
    if (T < 3) throw Error("encode: sequence length must be at least 3");
    std::string cleaned = collapse_whitespace(to_lower(text));
    std::vector<int> content;
    std::size_t pos = 0;
    while (pos < cleaned.size() && static_cast<int>(content.size()) < T - 2) {
      std::size_t best = 0;
      std::size_t try_len = std::min(max_token_len_, cleaned.size() - pos);
      for (std::size_t len = try_len; len >= 1; --len) {
        if (index_.count(cleaned.substr(pos, len))) {
          best = len;
          break;
        }
      }
      if (best == 0) {
        content.push_back(kUnk);
        pos += 1;  // unseen character
      } else {
        content.push_back(index_.at(cleaned.substr(pos, best)));
        pos += best;
      }
    }
    TokenSequence seq;
    seq.ids.assign(static_cast<std::size_t>(T), kPad);
    seq.attention_mask.assign(static_cast<std::size_t>(T), 0);
    seq.ids[0] = kCls;
    for (std::size_t i = 0; i < content.size(); ++i) seq.ids[i + 1] = content[i];
    seq.ids[content.size() + 1] = kSep;
    for (std::size_t i = 0; i <= content.size() + 1; ++i) seq.attention_mask[i] = 1;
    return seq;
  }

  std::string detokenize(const TokenSequence& seq) const {
    std::string out;
    for (std::size_t i = 1; i < seq.ids.size(); ++i) {
      int id = seq.ids[i];
      if (id == kSep || id == kPad) break;
      out += token(id);
    }
    return out;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::size_t max_token_len_ = 1;
};

inline Vocabulary Vocabulary::build(const std::vector<std::string>& texts, int target_size) {
  if (texts.empty()) throw Error("vocab: empty corpus");

  // Working form: each text as a sequence of token strings (initially single
  // characters of the cleaned text).
  std::vector<std::vector<std::string>> seqs;
  std::map<std::string, bool> chars;  // ordered for a deterministic base set
  for (const auto& t : texts) {
    std::string cleaned = collapse_whitespace(to_lower(t));
    if (cleaned.empty()) continue;
    std::vector<std::string> seq;
    seq.reserve(cleaned.size());
    for (char c : cleaned) {
      seq.emplace_back(1, c);
      chars[std::string(1, c)] = true;
    }
    seqs.push_back(std::move(seq));
  }
  if (seqs.empty()) throw Error("vocab: corpus has no usable text");

  int base = kNumSpecials + static_cast<int>(chars.size());
  if (target_size < base)
    throw Error("vocab: target size " + std::to_string(target_size) +
                " below minimum " + std::to_string(base));

  std::vector<std::string> tokens = special_tokens();
  for (const auto& [c, _] : chars) tokens.push_back(c);

  std::unordered_set<std::string> present(tokens.begin(), tokens.end());
  while (static_cast<int>(tokens.size()) < target_size) {
    // Count adjacent pairs; ties go to the pair seen first in scan order.
    std::unordered_map<std::string, std::size_t> pair_count;
    std::vector<std::string> pair_order;
    std::unordered_map<std::string, std::pair<std::string, std::string>> pair_parts;
    for (const auto& seq : seqs) {
      for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
        std::string key = seq[i] + "\x01" + seq[i + 1];
        auto it = pair_count.find(key);
        if (it == pair_count.end()) {
          pair_count.emplace(key, 1);
          pair_order.push_back(key);
          pair_parts.emplace(key, std::make_pair(seq[i], seq[i + 1]));
        } else {
          ++it->second;
        }
      }
    }
    std::string best_key;
    std::size_t best_count = 0;
    for (const auto& key : pair_order) {
      std::size_t n = pair_count[key];
      const std::string merged = pair_parts[key].first + pair_parts[key].second;
      if (present.count(merged)) continue;  // can happen via different splits
      if (n > best_count) {
        best_count = n;
        best_key = key;
      }
    }
    if (best_count == 0) break;  // nothing left to merge

    const auto& [left, right] = pair_parts[best_key];
    std::string merged = left + right;
    tokens.push_back(merged);
    present.insert(merged);

    for (auto& seq : seqs) {
      std::vector<std::string> next;
      next.reserve(seq.size());
      std::size_t i = 0;
      while (i < seq.size()) {
        if (i + 1 < seq.size() && seq[i] == left && seq[i + 1] == right) {
          next.push_back(merged);
          i += 2;
        } else {
          next.push_back(seq[i]);
          ++i;
        }
      }
      seq = std::move(next);
    }
  }
  return from_tokens(std::move(tokens));
}

// Masked-LM corruption: each content position (never [CLS]/[SEP]/pad) is
// selected independently with probability 0.15; a selected position is
// replaced by [MASK] with probability 0.8, by a random non-special token with
// probability 0.1 and kept unchanged otherwise. If nothing got selected one
// position is forced so every sequence trains.
inline MaskedSequence mask_sequence(const TokenSequence& seq, const Vocabulary& vocab,
                                    std::mt19937_64& rng) {
  std::vector<int> content_positions;
  for (std::size_t i = 1; i < seq.ids.size(); ++i) {
    if (seq.ids[i] == Vocabulary::kSep || seq.ids[i] == Vocabulary::kPad) break;
    content_positions.push_back(static_cast<int>(i));
  }
  if (content_positions.empty()) throw Error("mask: sequence has no content tokens");

  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<int> selected;
  for (int pos : content_positions)
    if (uniform(rng) < 0.15) selected.push_back(pos);
  if (selected.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, content_positions.size() - 1);
    selected.push_back(content_positions[pick(rng)]);
  }

  MaskedSequence out;
  out.corrupted = seq;
  if (vocab.size() <= Vocabulary::kNumSpecials)
    throw Error("mask: vocabulary has no content tokens");
  std::uniform_int_distribution<int> random_token(Vocabulary::kNumSpecials, vocab.size() - 1);
  for (int pos : selected) {
    out.targets[pos] = seq.ids[static_cast<std::size_t>(pos)];
    double action = uniform(rng);
    if (action < 0.8)
      out.corrupted.ids[static_cast<std::size_t>(pos)] = Vocabulary::kMask;
    else if (action < 0.9)
      out.corrupted.ids[static_cast<std::size_t>(pos)] = random_token(rng);
    // else: keep the original token, still a prediction target
  }
  return out;
}

}  // namespace v2w
