#pragma once

#include <string>
#include <vector>

#include "swep/common.hpp"
#include "swep/data/example.hpp"
#include "swep/data/vocab.hpp"

namespace swep::data {

// Answer span cannot be aligned to whitespace token boundaries.
class AlignmentError : public DataError {
 public:
  explicit AlignmentError(const std::string& msg) : DataError(msg) {}
};

inline Vocabulary build_vocabulary(const std::vector<RawExample>& train) {
  std::vector<std::vector<std::string>> docs;
  docs.reserve(train.size() * 2);
  for (const auto& ex : train) {
    docs.push_back(tokenize(ex.question));
    docs.push_back(tokenize(ex.context));
  }
  return Vocabulary::build(docs);
}

namespace detail {

// Maps the answer's character range onto context token indices. The range
// must start at a token start and end at a token end; otherwise the answer
// straddles a token boundary.
inline bool align_char_range(const std::vector<TokenSpan>& ctx_tokens,
                             std::size_t char_start, std::size_t char_end,
                             int* tok_start, int* tok_end) {
  int ts = -1, te = -1;
  for (std::size_t i = 0; i < ctx_tokens.size(); ++i) {
    if (ctx_tokens[i].char_start == char_start) ts = static_cast<int>(i);
    if (ctx_tokens[i].char_end == char_end) te = static_cast<int>(i);
  }
  if (ts < 0 || te < 0 || te < ts) return false;
  *tok_start = ts;
  *tok_end = te;
  return true;
}

// Leftmost contiguous occurrence of `needle` in `haystack`, or -1.
inline int find_subsequence(const std::vector<TokenSpan>& haystack,
                            const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return -1;
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
    bool ok = true;
    for (std::size_t k = 0; k < needle.size(); ++k)
      if (haystack[i + k].text != needle[k]) {
        ok = false;
        break;
      }
    if (ok) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace detail

// Builds the concatenated sequence [START, q_1..q_M, SEP, c_1..c_L, END] and
// maps the answer's character offsets to a token span. The occurrence at the
// given offset wins; if it does not align, the leftmost token-level match of
// the answer text is used as a fallback.
inline TokenizedExample tokenize_and_align(const RawExample& ex,
                                           const Vocabulary& vocab) {
  if (ex.question.empty() || tokenize(ex.question).empty())
    throw DataError("example " + ex.id + ": empty question");
  if (ex.context.empty())
    throw DataError("example " + ex.id + ": empty context");

  const std::vector<TokenSpan> q_tokens = tokenize_with_offsets(ex.question);
  const std::vector<TokenSpan> c_tokens = tokenize_with_offsets(ex.context);
  if (c_tokens.empty()) throw DataError("example " + ex.id + ": empty context");

  const std::size_t char_start = ex.answer_char_start;
  const std::size_t char_end = char_start + ex.answer_text.size();
  if (char_end > ex.context.size())
    throw DataError("example " + ex.id + ": answer range exceeds context");
  if (lowercase_ascii(ex.context.substr(char_start, ex.answer_text.size())) !=
      lowercase_ascii(ex.answer_text))
    throw DataError("example " + ex.id +
                    ": answer text not found at its char offset");

  int tok_start = -1, tok_end = -1;
  if (!detail::align_char_range(c_tokens, char_start, char_end, &tok_start,
                                &tok_end)) {
    const std::vector<std::string> ans_tokens = tokenize(ex.answer_text);
    const int pos = detail::find_subsequence(c_tokens, ans_tokens);
    if (pos < 0)
      throw AlignmentError("example " + ex.id +
                           ": answer straddles token boundaries");
    tok_start = pos;
    tok_end = pos + static_cast<int>(ans_tokens.size()) - 1;
  }

  TokenizedExample out;
  out.id = ex.id;
  const int M = static_cast<int>(q_tokens.size());
  const int L = static_cast<int>(c_tokens.size());
  out.question_len = M;
  out.context_len = L;
  out.token_ids.reserve(static_cast<std::size_t>(L + M + 3));
  out.token_ids.push_back(Vocabulary::kStart);
  for (const auto& t : q_tokens) out.token_ids.push_back(vocab.lookup(t.text));
  out.token_ids.push_back(Vocabulary::kSep);
  for (const auto& t : c_tokens) out.token_ids.push_back(vocab.lookup(t.text));
  out.token_ids.push_back(Vocabulary::kEnd);
  out.span_start = M + 2 + tok_start;
  out.span_end = M + 2 + tok_end;
  out.answer_texts = {ex.answer_text};
  out.check_invariants();
  return out;
}

}  // namespace swep::data
