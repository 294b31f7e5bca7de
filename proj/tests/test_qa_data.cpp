#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <map>

#include "swep/data/example.hpp"
#include "swep/data/squad.hpp"
#include "swep/data/tokenizer.hpp"
#include "swep/data/toy.hpp"
#include "swep/data/vocab.hpp"

using namespace swep::data;

namespace {

std::string fixture(const std::string& name) {
  return std::string(SWEP_TEST_FIXTURE_DIR) + "/" + name;
}

Vocabulary tiny_vocab(const std::vector<std::string>& words) {
  Vocabulary v;
  for (const auto& w : words) v.add_token(w, 1);
  return v;
}

TEST(SquadLoader, FixtureRoundTrip) {
  auto result = load_squad_json(fixture("squad_small.json"));
  ASSERT_EQ(result.examples.size(), 5u);
  EXPECT_EQ(result.skipped_no_answer, 0);
  EXPECT_TRUE(result.validation_errors.empty());
  EXPECT_EQ(result.examples[0].id, "fx-001");
  EXPECT_EQ(result.examples[4].id, "fx-005");
  EXPECT_EQ(result.examples[0].answer_text, "ten");
  // first answer wins
  EXPECT_EQ(result.examples[1].answer_text, "the Black Sea");
}

TEST(SquadLoader, BadOffsetIsCollectedNotFatal) {
  auto result = load_squad_json(fixture("squad_bad_offset.json"));
  EXPECT_EQ(result.examples.size(), 4u);
  ASSERT_EQ(result.validation_errors.size(), 1u);
  EXPECT_EQ(result.validation_errors[0].first, "bx-002");
}

TEST(SquadLoader, MalformedJsonNamesPath) {
  const std::string path = "/tmp/swep_malformed.json";
  {
    std::ofstream out(path);
    out << "{\"data\": [";
  }
  try {
    load_squad_json(path);
    FAIL() << "expected ParseError";
  } catch (const swep::ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(path), std::string::npos);
  }
  std::remove(path.c_str());
}

TEST(Tokenizer, HandCountedPositions) {
  // question "who ?" (M=2), context "a b c" (L=3), answer "b" at char 2
  // -> [START who ? SEP a b c END], T=8, span=(5,5)
  auto vocab = tiny_vocab({"who", "?", "a", "b", "c"});
  RawExample ex{"t1", "who ?", "a b c", "b", 2};
  auto tok = tokenize_and_align(ex, vocab);
  EXPECT_EQ(tok.length(), 8);
  EXPECT_EQ(tok.question_len, 2);
  EXPECT_EQ(tok.context_len, 3);
  EXPECT_EQ(tok.span_start, 5);
  EXPECT_EQ(tok.span_end, 5);
  EXPECT_EQ(tok.token_ids[0], Vocabulary::kStart);
  EXPECT_EQ(tok.token_ids[3], Vocabulary::kSep);
  EXPECT_EQ(tok.token_ids[7], Vocabulary::kEnd);
}

TEST(Tokenizer, AnswerEqualToFullContext) {
  auto vocab = tiny_vocab({"who", "?", "a", "b", "c"});
  RawExample ex{"t2", "who ?", "a b c", "a b c", 0};
  auto tok = tokenize_and_align(ex, vocab);
  // span = (M+2, T-2)
  EXPECT_EQ(tok.span_start, tok.question_len + 2);
  EXPECT_EQ(tok.span_end, tok.length() - 2);
}

TEST(Tokenizer, OutOfVocabularyMapsToUnk) {
  auto vocab = tiny_vocab({"who", "?", "a", "c"});  // "b" missing
  RawExample ex{"t3", "who ?", "a b c", "c", 4};
  auto tok = tokenize_and_align(ex, vocab);
  EXPECT_EQ(tok.token_ids[5], Vocabulary::kUnk);
  EXPECT_EQ(tok.span_start, 6);
  EXPECT_EQ(tok.span_end, 6);
}

TEST(Tokenizer, StraddlingAnswerIsAlignmentError) {
  auto vocab = tiny_vocab({"q", "?", "abc", "def"});
  // answer "ab" is a prefix of the token "abc"
  RawExample ex{"t4", "q ?", "abc def", "ab", 0};
  EXPECT_THROW(tokenize_and_align(ex, vocab), AlignmentError);
}

TEST(Tokenizer, EmptyQuestionOrContextRejected) {
  auto vocab = tiny_vocab({"a"});
  EXPECT_THROW(tokenize_and_align({"t5", "", "a", "a", 0}, vocab),
               swep::DataError);
  EXPECT_THROW(tokenize_and_align({"t6", "a", "", "", 0}, vocab),
               swep::DataError);
}

TEST(Tokenizer, DetokenizeOfSpanMatchesAnswerUpToNormalization) {
  auto result = load_squad_json(fixture("squad_small.json"));
  auto vocab = build_vocabulary(result.examples);
  for (const auto& raw : result.examples) {
    auto tok = tokenize_and_align(raw, vocab);
    std::vector<int> span_ids(tok.token_ids.begin() + tok.span_start,
                              tok.token_ids.begin() + tok.span_end + 1);
    EXPECT_EQ(detokenize(span_ids, vocab), lowercase_ascii(raw.answer_text))
        << raw.id;
  }
}

TEST(Tokenizer, RoundTripIdentityOnInVocabSequences) {
  auto [examples, vocab] = synthesize_toy_dataset({50, 32, 4, 8, 3});
  for (const auto& raw : examples) {
    auto toks = tokenize(raw.context);
    std::vector<int> ids;
    for (auto& t : toks) ids.push_back(vocab.lookup(t));
    EXPECT_EQ(tokenize(detokenize(ids, vocab)), toks);
  }
}

TEST(ToyData, DeterministicUnderSeed) {
  ToySpec spec{200, 64, 8, 12, 7};
  auto [ex1, v1] = synthesize_toy_dataset(spec);
  auto [ex2, v2] = synthesize_toy_dataset(spec);
  ASSERT_EQ(ex1.size(), ex2.size());
  std::string bytes1, bytes2;
  for (std::size_t i = 0; i < ex1.size(); ++i) {
    bytes1 += ex1[i].id + "\x1f" + ex1[i].question + "\x1f" + ex1[i].context +
              "\x1f" + ex1[i].answer_text + "\x1f" +
              std::to_string(ex1[i].answer_char_start) + "\n";
    bytes2 += ex2[i].id + "\x1f" + ex2[i].question + "\x1f" + ex2[i].context +
              "\x1f" + ex2[i].answer_text + "\x1f" +
              std::to_string(ex2[i].answer_char_start) + "\n";
  }
  EXPECT_EQ(bytes1, bytes2);
  EXPECT_EQ(v1.hash(), v2.hash());

  auto [ex3, v3] = synthesize_toy_dataset({200, 64, 8, 12, 8});
  EXPECT_NE(v1.hash() == v3.hash() &&
                ex1[0].context == ex3[0].context &&
                ex1[1].context == ex3[1].context,
            true);
}

TEST(ToyData, EveryExampleTokenizesCleanly) {
  auto [examples, vocab] = synthesize_toy_dataset({200, 64, 8, 12, 7});
  ASSERT_EQ(examples.size(), 200u);
  for (const auto& raw : examples) {
    auto tok = tokenize_and_align(raw, vocab);  // throws on misalignment
    EXPECT_EQ(tok.length(), tok.question_len + tok.context_len + 3);
    EXPECT_EQ(tok.span_start, tok.span_end);  // single-token answers
  }
}

TEST(ToyData, ZipfProfile) {
  auto [examples, vocab] = synthesize_toy_dataset({200, 64, 8, 12, 7});
  auto ranked = vocab.ids_by_frequency_rank();
  ASSERT_GE(ranked.size(), 10u);
  EXPECT_GT(vocab.frequency(ranked[0]), vocab.frequency(ranked[9]));
}

TEST(ToyData, InfeasibleConfigRejected) {
  EXPECT_THROW(synthesize_toy_dataset({10, 5, 8, 12, 1}), swep::ConfigError);
  EXPECT_THROW(synthesize_toy_dataset({10, 64, 1, 1, 1}), swep::ConfigError);
  EXPECT_THROW(synthesize_toy_dataset({0, 64, 8, 12, 1}), swep::ConfigError);
  EXPECT_THROW(synthesize_toy_dataset({10, 64, 8, 4, 1}), swep::ConfigError);
}

TEST(Batchify, PaddingArithmetic) {
  auto vocab = tiny_vocab({"who", "?", "a", "b", "c", "d", "e"});
  RawExample r1{"b1", "who ?", "a b c", "b", 2};           // T = 8
  RawExample r2{"b2", "who ?", "a b c d e", "d", 6};       // T = 10
  std::vector<TokenizedExample> exs = {tokenize_and_align(r1, vocab),
                                       tokenize_and_align(r2, vocab)};
  auto batches = batchify(exs, 2);
  ASSERT_EQ(batches.size(), 1u);
  const auto& b = batches[0];
  EXPECT_EQ(b.width(), 10);
  int padded = 0;
  for (auto m : b.padding_mask[0]) padded += (m == 0);
  EXPECT_EQ(padded, 2);
  for (int t = 8; t < 10; ++t)
    EXPECT_EQ(b.token_ids[0][t], Vocabulary::kPad);

  // batch_size 1 -> all-true masks
  auto singles = batchify(exs, 1);
  ASSERT_EQ(singles.size(), 2u);
  for (const auto& sb : singles)
    for (auto m : sb.padding_mask[0]) EXPECT_EQ(m, 1);

  // conservation of real tokens
  int mask_sum = 0, t_sum = 0;
  for (const auto& row : b.padding_mask)
    for (auto m : row) mask_sum += m;
  for (const auto& ex : exs) t_sum += ex.length();
  EXPECT_EQ(mask_sum, t_sum);
}

TEST(Batchify, UnbatchifyRecoversInputs) {
  auto [raw, vocab] = synthesize_toy_dataset({37, 32, 4, 9, 11});
  std::vector<TokenizedExample> exs;
  for (const auto& r : raw) exs.push_back(tokenize_and_align(r, vocab));
  auto batches = batchify(exs, 5);
  auto back = unbatchify(batches);
  ASSERT_EQ(back.size(), exs.size());
  for (std::size_t i = 0; i < exs.size(); ++i) {
    EXPECT_EQ(back[i].token_ids, exs[i].token_ids);
    EXPECT_EQ(back[i].span_start, exs[i].span_start);
    EXPECT_EQ(back[i].span_end, exs[i].span_end);
    EXPECT_EQ(back[i].question_len, exs[i].question_len);
  }
}

TEST(Batchify, Errors) {
  EXPECT_THROW(batchify({}, 2), swep::DataError);
  auto vocab = tiny_vocab({"who", "?", "a"});
  std::vector<TokenizedExample> exs = {
      tokenize_and_align({"e", "who ?", "a a a", "a", 0}, vocab)};
  EXPECT_THROW(batchify(exs, 0), swep::ConfigError);
}

TEST(JsonlCache, RoundTripIsBitStable) {
  auto [raw, vocab] = synthesize_toy_dataset({25, 32, 4, 9, 5});
  std::vector<TokenizedExample> exs;
  for (const auto& r : raw) exs.push_back(tokenize_and_align(r, vocab));
  const std::string p1 = "/tmp/swep_cache1.jsonl";
  const std::string p2 = "/tmp/swep_cache2.jsonl";
  save_jsonl(exs, p1);
  auto loaded = load_jsonl(p1, vocab);
  save_jsonl(loaded, p2);
  std::ifstream f1(p1), f2(p2);
  std::stringstream s1, s2;
  s1 << f1.rdbuf();
  s2 << f2.rdbuf();
  EXPECT_EQ(s1.str(), s2.str());
  ASSERT_EQ(loaded.size(), exs.size());
  EXPECT_EQ(loaded[3].token_ids, exs[3].token_ids);
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST(Vocabulary, ReservedIdsNeverReassigned) {
  auto [raw, vocab] = synthesize_toy_dataset({10, 16, 4, 6, 2});
  EXPECT_EQ(vocab.token(Vocabulary::kPad), "<pad>");
  EXPECT_EQ(vocab.token(Vocabulary::kStart), "<s>");
  EXPECT_EQ(vocab.token(Vocabulary::kSep), "<sep>");
  EXPECT_EQ(vocab.token(Vocabulary::kEnd), "</s>");
  EXPECT_EQ(vocab.token(Vocabulary::kUnk), "<unk>");
  // bijection
  for (int id = 0; id < vocab.size(); ++id)
    EXPECT_EQ(vocab.lookup(vocab.token(id)), id);
}

}  // namespace
