#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "swep/common.hpp"
#include "swep/data/example.hpp"
#include "swep/data/vocab.hpp"
#include "swep/model/qa_model.hpp"

namespace swep::train {

// SQuAD answer normalization: lowercase, strip punctuation, drop articles,
// collapse whitespace.
inline std::string normalize_answer(const std::string& s) {
  std::string lowered;
  lowered.reserve(s.size());
  for (char c : s) {
    const auto u = static_cast<unsigned char>(c);
    if (std::ispunct(u)) continue;
    lowered += static_cast<char>(std::tolower(u));
  }
  std::istringstream in(lowered);
  std::string tok, out;
  while (in >> tok) {
    if (tok == "a" || tok == "an" || tok == "the") continue;
    if (!out.empty()) out += ' ';
    out += tok;
  }
  return out;
}

// Both scores are percentages. EM is normalized string equality; F1 is the
// token-multiset overlap harmonic mean, 0 when exactly one side is empty.
inline double exact_match(const std::string& prediction,
                          const std::string& gold) {
  return normalize_answer(prediction) == normalize_answer(gold) ? 100.0 : 0.0;
}

inline double f1_score(const std::string& prediction, const std::string& gold) {
  std::istringstream ip(normalize_answer(prediction)), ig(normalize_answer(gold));
  std::vector<std::string> pred_toks, gold_toks;
  std::string tok;
  while (ip >> tok) pred_toks.push_back(tok);
  while (ig >> tok) gold_toks.push_back(tok);
  if (pred_toks.empty() && gold_toks.empty()) return 100.0;
  if (pred_toks.empty() || gold_toks.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : gold_toks) ++counts[t];
  int overlap = 0;
  for (const auto& t : pred_toks) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      ++overlap;
      --it->second;
    }
  }
  if (overlap == 0) return 0.0;
  const double precision = overlap / static_cast<double>(pred_toks.size());
  const double recall = overlap / static_cast<double>(gold_toks.size());
  return 200.0 * precision * recall / (precision + recall);
}

template <class Metric>
double max_over_golds(const Metric& metric, const std::string& prediction,
                      const std::vector<std::string>& golds) {
  double best = 0.0;
  for (const auto& g : golds) best = std::max(best, metric(prediction, g));
  return best;
}

struct EvalResult {
  double em = 0.0;
  double f1 = 0.0;
  int n_examples = 0;
};

// Clean-forward evaluation of a frozen model: predict a span per example,
// detokenize it, and score against the gold answer strings (max over golds,
// macro-averaged).
template <class Real>
EvalResult evaluate_em_f1(model::QaModel<Real>& model,
                          const std::vector<data::TokenizedExample>& examples,
                          const data::Vocabulary& vocab, int max_answer_len) {
  EvalResult result;
  result.n_examples = static_cast<int>(examples.size());
  if (examples.empty()) return result;
  for (const auto& ex : examples) {
    ad::Tape<Real> tape;
    model::LeafCache<Real> leaf(tape);
    std::vector<std::uint8_t> mask(ex.token_ids.size(), 1);
    auto e = model.embed(leaf, ex.token_ids);
    auto enc = model.encode(leaf, e, mask);
    auto [start, end] = model.span_logits(leaf, enc.hidden);
    auto span = model::QaModel<Real>::predict_span(
        start.value(), end.value(), ex.question_len, ex.length(),
        max_answer_len);
    std::vector<int> span_ids(ex.token_ids.begin() + span.first,
                              ex.token_ids.begin() + span.second + 1);
    const std::string prediction = data::detokenize(span_ids, vocab);
    const auto& golds =
        ex.answer_texts.empty()
            ? std::vector<std::string>{""}
            : ex.answer_texts;
    result.em += max_over_golds(exact_match, prediction, golds);
    result.f1 += max_over_golds(f1_score, prediction, golds);
  }
  result.em /= result.n_examples;
  result.f1 /= result.n_examples;
  return result;
}

}  // namespace swep::train
