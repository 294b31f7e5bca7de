#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "swep/common.hpp"
#include "swep/data/vocab.hpp"

namespace swep::data {

// One (question, context, answer) triple as found in the source data.
struct RawExample {
  std::string id;
  std::string question;
  std::string context;
  std::string answer_text;
  std::size_t answer_char_start = 0;
};

// The concatenated sequence [START, question..., SEP, context..., END] with
// the gold answer span in token coordinates. T = L + M + 3 always holds.
struct TokenizedExample {
  std::string id;
  std::vector<int> token_ids;  // length T
  int question_len = 0;        // M
  int context_len = 0;         // L
  int span_start = 0;          // token index, within the context region
  int span_end = 0;
  std::vector<std::string> answer_texts;  // gold strings for EM/F1

  int length() const { return static_cast<int>(token_ids.size()); }

  void check_invariants() const {
    const int T = length();
    if (T != question_len + context_len + 3)
      throw DataError("example " + id + ": T != L + M + 3");
    if (token_ids[0] != Vocabulary::kStart ||
        token_ids[question_len + 1] != Vocabulary::kSep ||
        token_ids[T - 1] != Vocabulary::kEnd)
      throw DataError("example " + id + ": special symbols misplaced");
    if (span_start < question_len + 2 || span_end < span_start ||
        span_end > T - 2)
      throw DataError("example " + id + ": span outside the context region");
  }
};

// A padded batch. Row b of `token_ids` is example b padded with PAD to the
// widest sequence in the batch; `padding_mask` is true exactly on real tokens.
struct Batch {
  std::vector<std::vector<int>> token_ids;
  std::vector<std::vector<std::uint8_t>> padding_mask;
  std::vector<std::pair<int, int>> spans;
  std::vector<int> question_lens;
  std::vector<int> lengths;  // unpadded T per example
  std::vector<std::string> ids;
  std::vector<std::vector<std::string>> answer_texts;

  int size() const { return static_cast<int>(token_ids.size()); }
  int width() const {
    return token_ids.empty() ? 0 : static_cast<int>(token_ids[0].size());
  }
};

inline std::vector<Batch> batchify(const std::vector<TokenizedExample>& examples,
                                   int batch_size) {
  if (batch_size < 1) throw ConfigError("batchify: batch_size must be >= 1");
  if (examples.empty()) throw DataError("batchify: empty example list");
  std::vector<Batch> batches;
  for (std::size_t base = 0; base < examples.size();
       base += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(examples.size(), base + static_cast<std::size_t>(batch_size));
    int width = 0;
    for (std::size_t i = base; i < end; ++i)
      width = std::max(width, examples[i].length());
    Batch b;
    for (std::size_t i = base; i < end; ++i) {
      const auto& ex = examples[i];
      std::vector<int> row(static_cast<std::size_t>(width), Vocabulary::kPad);
      std::vector<std::uint8_t> mask(static_cast<std::size_t>(width), 0);
      for (int t = 0; t < ex.length(); ++t) {
        row[t] = ex.token_ids[t];
        mask[t] = 1;
      }
      b.token_ids.push_back(std::move(row));
      b.padding_mask.push_back(std::move(mask));
      b.spans.emplace_back(ex.span_start, ex.span_end);
      b.question_lens.push_back(ex.question_len);
      b.lengths.push_back(ex.length());
      b.ids.push_back(ex.id);
      b.answer_texts.push_back(ex.answer_texts);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

// Inverse of batchify; strips padding.
inline std::vector<TokenizedExample> unbatchify(const std::vector<Batch>& batches) {
  std::vector<TokenizedExample> out;
  for (const auto& b : batches) {
    for (int i = 0; i < b.size(); ++i) {
      TokenizedExample ex;
      ex.id = b.ids[i];
      ex.token_ids.assign(b.token_ids[i].begin(),
                          b.token_ids[i].begin() + b.lengths[i]);
      ex.question_len = b.question_lens[i];
      ex.context_len = b.lengths[i] - b.question_lens[i] - 3;
      ex.span_start = b.spans[i].first;
      ex.span_end = b.spans[i].second;
      ex.answer_texts = b.answer_texts[i];
      out.push_back(std::move(ex));
    }
  }
  return out;
}

// ---- JSONL dataset cache ----------------------------------------------------
// One record per line: {"id": ..., "token_ids": [...], "M": m, "L": l,
// "span": [s, e]}. Bit-stable for a fixed dataset.

inline std::string to_jsonl_record(const TokenizedExample& ex) {
  nlohmann::ordered_json j;
  j["id"] = ex.id;
  j["token_ids"] = ex.token_ids;
  j["M"] = ex.question_len;
  j["L"] = ex.context_len;
  j["span"] = {ex.span_start, ex.span_end};
  return j.dump();
}

inline void save_jsonl(const std::vector<TokenizedExample>& examples,
                       const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open for writing: " + path);
  for (const auto& ex : examples) out << to_jsonl_record(ex) << "\n";
}

// Loads a JSONL cache. Gold answer strings are reconstructed by detokenizing
// the gold span, which is identity up to tokenizer normalization.
inline std::vector<TokenizedExample> load_jsonl(const std::string& path,
                                                const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open dataset: " + path);
  std::vector<TokenizedExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    TokenizedExample ex;
    try {
      ex.id = j.at("id").get<std::string>();
      ex.token_ids = j.at("token_ids").get<std::vector<int>>();
      ex.question_len = j.at("M").get<int>();
      ex.context_len = j.at("L").get<int>();
      ex.span_start = j.at("span").at(0).get<int>();
      ex.span_end = j.at("span").at(1).get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    ex.check_invariants();
    std::vector<int> span_ids(ex.token_ids.begin() + ex.span_start,
                              ex.token_ids.begin() + ex.span_end + 1);
    ex.answer_texts = {detokenize(span_ids, vocab)};
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace swep::data
