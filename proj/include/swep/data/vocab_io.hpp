#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "swep/common.hpp"
#include "swep/data/vocab.hpp"

namespace swep::data {

inline void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
  nlohmann::ordered_json j;
  j["kind"] = "swep-vocabulary";
  j["tokens"] = vocab.tokens_in_id_order();
  j["frequencies"] = vocab.frequencies_in_id_order();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write vocabulary: " + path);
  out << j.dump();
}

inline Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open vocabulary: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  if (j.value("kind", "") != "swep-vocabulary")
    throw ParseError(path + ": not a vocabulary file");
  return Vocabulary::from_id_order(
      j.at("tokens").get<std::vector<std::string>>(),
      j.at("frequencies").get<std::vector<long long>>());
}

}  // namespace swep::data
