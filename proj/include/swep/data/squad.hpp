#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "swep/common.hpp"
#include "swep/data/example.hpp"

namespace swep::data {

struct SquadLoadResult {
  std::vector<RawExample> examples;
  // Questions without any answer (SQuAD v1.1 has none, but be tolerant).
  int skipped_no_answer = 0;
  // Per-example validation failures: answer text not found at its offset.
  std::vector<std::pair<std::string, std::string>> validation_errors;
};

// Reads SQuAD v1.1 JSON (data -> paragraphs -> {context, qas -> {id,
// question, answers -> {text, answer_start}}}). The first answer of each
// question wins. Validation failures are collected, not fatal.
inline SquadLoadResult load_squad_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open SQuAD file: " + path);
  nlohmann::json root;
  try {
    in >> root;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }

  SquadLoadResult result;
  try {
    const auto& data = root.at("data");
    for (const auto& article : data) {
      for (const auto& para : article.at("paragraphs")) {
        const std::string context = para.at("context").get<std::string>();
        for (const auto& qa : para.at("qas")) {
          const std::string id = qa.at("id").get<std::string>();
          const std::string question = qa.at("question").get<std::string>();
          const auto& answers = qa.at("answers");
          if (answers.empty()) {
            ++result.skipped_no_answer;
            continue;
          }
          const auto& first = answers.at(0);
          RawExample ex;
          ex.id = id;
          ex.question = question;
          ex.context = context;
          ex.answer_text = first.at("text").get<std::string>();
          ex.answer_char_start = first.at("answer_start").get<std::size_t>();
          if (ex.answer_char_start + ex.answer_text.size() > context.size() ||
              context.substr(ex.answer_char_start, ex.answer_text.size()) !=
                  ex.answer_text) {
            result.validation_errors.emplace_back(
                id, "answer text not found at char offset " +
                        std::to_string(ex.answer_char_start));
            continue;
          }
          result.examples.push_back(std::move(ex));
        }
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": unexpected structure: " + e.what());
  }
  return result;
}

}  // namespace swep::data
