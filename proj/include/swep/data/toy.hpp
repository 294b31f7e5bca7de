#pragma once

#include <string>
#include <vector>

#include "swep/common.hpp"
#include "swep/core/rng.hpp"
#include "swep/data/example.hpp"
#include "swep/data/tokenizer.hpp"
#include "swep/data/vocab.hpp"

namespace swep::data {

// Generator settings for the synthetic QA corpus. Each example asks
// "which token follows <w> ?" over a random token sequence in which <w>
// occurs exactly once, so the gold span (the following token) is unique.
struct ToySpec {
  int n_examples = 200;
  int vocab_size = 64;  // non-reserved tokens, template words included
  int context_len_min = 8;
  int context_len_max = 12;
  std::uint64_t seed = 7;
};

namespace detail {

inline std::string content_word(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "w%03d", index);
  return buf;
}

}  // namespace detail

// Deterministic under the spec seed: the same spec always yields the same
// bytes. Content words are drawn with Zipf weights (w ~ 1/rank) so the
// frequency-bucket analysis has a meaningful profile.
inline std::pair<std::vector<RawExample>, Vocabulary> synthesize_toy_dataset(
    const ToySpec& spec) {
  if (spec.vocab_size < 10)
    throw ConfigError("toy dataset: vocab_size must be >= 10");
  if (spec.n_examples < 1)
    throw ConfigError("toy dataset: n_examples must be >= 1");
  if (spec.context_len_min < 2 || spec.context_len_max < spec.context_len_min)
    throw ConfigError(
        "toy dataset: context_len_range infeasible for the template "
        "(need min >= 2 and max >= min)");

  // 4 template words + content words make up the vocab_size budget.
  const int n_content = spec.vocab_size - 4;
  std::vector<double> cumulative(n_content);
  double acc = 0.0;
  for (int r = 0; r < n_content; ++r) {
    acc += 1.0 / static_cast<double>(r + 1);
    cumulative[r] = acc;
  }

  Rng rng(spec.seed);
  auto draw_content = [&]() {
    const double u = rng.uniform() * acc;
    int lo = 0, hi = n_content - 1;
    while (lo < hi) {
      const int mid = (lo + hi) / 2;
      if (cumulative[mid] < u)
        lo = mid + 1;
      else
        hi = mid;
    }
    return lo;
  };

  std::vector<RawExample> examples;
  examples.reserve(spec.n_examples);
  for (int i = 0; i < spec.n_examples; ++i) {
    const int L = static_cast<int>(
        rng.uniform_int(spec.context_len_min, spec.context_len_max));
    const int pivot_pos = static_cast<int>(rng.uniform_int(0, L - 2));
    std::vector<int> ctx(L);
    for (int k = 0; k < L; ++k) ctx[k] = draw_content();
    const int pivot = ctx[pivot_pos];
    for (int k = 0; k < L; ++k) {
      if (k == pivot_pos) continue;
      while (ctx[k] == pivot) ctx[k] = draw_content();
    }

    std::string context;
    std::size_t answer_start = 0;
    for (int k = 0; k < L; ++k) {
      if (k) context += ' ';
      if (k == pivot_pos + 1) answer_start = context.size();
      context += detail::content_word(ctx[k]);
    }
    RawExample ex;
    char idbuf[24];
    std::snprintf(idbuf, sizeof(idbuf), "toy-%06d", i);
    ex.id = idbuf;
    ex.question = "which token follows " + detail::content_word(pivot) + " ?";
    ex.context = context;
    ex.answer_text = detail::content_word(ctx[pivot_pos + 1]);
    ex.answer_char_start = answer_start;
    examples.push_back(std::move(ex));
  }

  Vocabulary vocab = build_vocabulary(examples);
  // Frequencies come from the generated split; tokens the Zipf draw never
  // produced still belong to the vocabulary, with zero counts.
  for (const std::string& w : {"which", "token", "follows", "?"})
    vocab.add_token(w, 0);
  for (int c = 0; c < n_content; ++c) vocab.add_token(detail::content_word(c), 0);
  return {std::move(examples), std::move(vocab)};
}

}  // namespace swep::data
