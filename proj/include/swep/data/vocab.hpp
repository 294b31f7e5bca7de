#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "swep/common.hpp"

namespace swep::data {

// Lowercased whitespace token with its character range in the source string.
struct TokenSpan {
  std::string text;
  std::size_t char_start = 0;
  std::size_t char_end = 0;  // one past the last character
};

inline std::string lowercase_ascii(std::string s) {
  for (char& c : s)
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// Whitespace tokenization with original character offsets. Lowercasing is
// ASCII-only, so offsets into the source string are preserved.
inline std::vector<TokenSpan> tokenize_with_offsets(const std::string& text) {
  std::vector<TokenSpan> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() &&
           std::isspace(static_cast<unsigned char>(text[i])))
      ++i;
    if (i >= text.size()) break;
    std::size_t j = i;
    while (j < text.size() &&
           !std::isspace(static_cast<unsigned char>(text[j])))
      ++j;
    out.push_back({lowercase_ascii(text.substr(i, j - i)), i, j});
    i = j;
  }
  return out;
}

inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  for (auto& t : tokenize_with_offsets(text)) out.push_back(t.text);
  return out;
}

// Token/id bijection with reserved symbols and train-split frequencies.
// Ids are assigned deterministically: reserved first, then tokens sorted by
// (frequency desc, token asc).
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kStart = 1;
  static constexpr int kSep = 2;
  static constexpr int kEnd = 3;
  static constexpr int kUnk = 4;
  static constexpr int kNumReserved = 5;

  Vocabulary() {
    static const char* kReservedNames[] = {"<pad>", "<s>", "<sep>", "</s>",
                                           "<unk>"};
    for (const char* n : kReservedNames) {
      token_to_id_.emplace(n, static_cast<int>(id_to_token_.size()));
      id_to_token_.emplace_back(n);
      frequency_.push_back(0);
    }
  }

  // Builds from token streams (one per training document/example).
  static Vocabulary build(const std::vector<std::vector<std::string>>& docs) {
    std::unordered_map<std::string, long long> counts;
    for (const auto& doc : docs)
      for (const auto& tok : doc) ++counts[tok];
    Vocabulary v;
    std::vector<std::pair<std::string, long long>> sorted;
    sorted.reserve(counts.size());
    for (auto& kv : counts) {
      if (v.token_to_id_.count(kv.first)) continue;  // reserved surface form
      sorted.emplace_back(kv.first, kv.second);
    }
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    for (auto& [tok, cnt] : sorted) v.add_token(tok, cnt);
    return v;
  }

  int add_token(const std::string& tok, long long freq = 0) {
    auto it = token_to_id_.find(tok);
    if (it != token_to_id_.end()) return it->second;
    const int id = static_cast<int>(id_to_token_.size());
    token_to_id_.emplace(tok, id);
    id_to_token_.push_back(tok);
    frequency_.push_back(freq);
    return id;
  }

  int size() const { return static_cast<int>(id_to_token_.size()); }

  // Unknown tokens map to <unk>.
  int lookup(const std::string& tok) const {
    auto it = token_to_id_.find(tok);
    return it == token_to_id_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& tok) const {
    return token_to_id_.count(tok) != 0;
  }

  const std::string& token(int id) const {
    if (id < 0 || id >= size())
      throw DataError("vocabulary: id " + std::to_string(id) + " out of range");
    return id_to_token_[id];
  }

  long long frequency(int id) const {
    if (id < 0 || id >= size())
      throw DataError("vocabulary: id " + std::to_string(id) + " out of range");
    return frequency_[id];
  }

  // Non-reserved ids ordered by frequency rank (rank 1 = most frequent).
  // Ties are broken by token string for determinism.
  std::vector<int> ids_by_frequency_rank() const {
    std::vector<int> ids;
    for (int id = kNumReserved; id < size(); ++id) ids.push_back(id);
    std::sort(ids.begin(), ids.end(), [this](int a, int b) {
      if (frequency_[a] != frequency_[b]) return frequency_[a] > frequency_[b];
      return id_to_token_[a] < id_to_token_[b];
    });
    return ids;
  }

  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (int id = 0; id < size(); ++id) {
      h = fnv1a64(id_to_token_[id].data(), id_to_token_[id].size(), h);
      const long long f = frequency_[id];
      h = fnv1a64(&f, sizeof(f), h);
    }
    return h;
  }

  std::vector<std::string> tokens_in_id_order() const { return id_to_token_; }
  std::vector<long long> frequencies_in_id_order() const { return frequency_; }

  // Rebuilds a vocabulary from (token, frequency) pairs in id order; the
  // first kNumReserved entries must be the reserved symbols.
  static Vocabulary from_id_order(const std::vector<std::string>& tokens,
                                  const std::vector<long long>& freqs) {
    if (tokens.size() != freqs.size() || tokens.size() < kNumReserved)
      throw ParseError("vocabulary: malformed token/frequency lists");
    Vocabulary v;
    for (int id = 0; id < kNumReserved; ++id)
      if (tokens[id] != v.id_to_token_[id])
        throw ParseError("vocabulary: reserved symbol mismatch at id " +
                         std::to_string(id));
    for (std::size_t id = kNumReserved; id < tokens.size(); ++id)
      v.add_token(tokens[id], freqs[id]);
    return v;
  }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<long long> frequency_;
};

inline std::string detokenize(const std::vector<int>& ids,
                              const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += vocab.token(ids[i]);
  }
  return out;
}

}  // namespace swep::data
