#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "swep/common.hpp"
#include "swep/core/tape.hpp"
#include "swep/model/config.hpp"

namespace swep::model {

// Checkpoint container: a versioned JSON document holding the encoder
// configuration, the vocabulary hash, and every named parameter tensor in
// full double precision (doubles round-trip exactly through the JSON dump).
inline constexpr int kCheckpointSchemaVersion = 1;

inline nlohmann::ordered_json encoder_config_to_json(const EncoderConfig& c) {
  nlohmann::ordered_json j;
  j["d"] = c.d;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["ffn_width"] = c.ffn_width;
  j["internal_dropout_p"] = c.internal_dropout_p;
  j["max_len"] = c.max_len;
  j["positional"] = to_string(c.positional);
  return j;
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.d = j.at("d").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.ffn_width = j.at("ffn_width").get<int>();
  c.internal_dropout_p = j.at("internal_dropout_p").get<double>();
  c.max_len = j.at("max_len").get<int>();
  c.positional = positional_kind_from_string(j.at("positional").get<std::string>());
  c.validate();
  return c;
}

template <class Real>
void save_checkpoint(const std::string& path, const EncoderConfig& cfg,
                     int vocab_size, std::uint64_t vocab_hash,
                     const std::vector<ad::Parameter<Real>*>& params) {
  nlohmann::ordered_json j;
  j["schema_version"] = kCheckpointSchemaVersion;
  j["kind"] = "swep-checkpoint";
  j["encoder_config"] = encoder_config_to_json(cfg);
  j["vocab_size"] = vocab_size;
  j["vocab_hash"] = vocab_hash;
  nlohmann::ordered_json tensors;
  for (const auto* p : params) {
    nlohmann::ordered_json t;
    t["rows"] = p->value.rows();
    t["cols"] = p->value.cols();
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(p->value.size()));
    for (Eigen::Index i = 0; i < p->value.rows(); ++i)
      for (Eigen::Index k = 0; k < p->value.cols(); ++k)
        flat.push_back(static_cast<double>(p->value(i, k)));
    t["data"] = std::move(flat);
    tensors[p->name] = std::move(t);
  }
  j["params"] = std::move(tensors);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write checkpoint: " + path);
  out << j.dump();
}

struct CheckpointHeader {
  EncoderConfig encoder_config;
  int vocab_size = 0;
  std::uint64_t vocab_hash = 0;
};

inline nlohmann::json read_checkpoint_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  if (j.value("kind", "") != "swep-checkpoint")
    throw ParseError(path + ": not a checkpoint file");
  if (j.value("schema_version", -1) != kCheckpointSchemaVersion)
    throw ParseError(path + ": unsupported checkpoint schema version");
  return j;
}

inline CheckpointHeader read_checkpoint_header(const nlohmann::json& j,
                                               const std::string& path) {
  CheckpointHeader h;
  h.encoder_config = encoder_config_from_json(j.at("encoder_config"));
  h.vocab_size = j.at("vocab_size").get<int>();
  h.vocab_hash = j.at("vocab_hash").get<std::uint64_t>();
  (void)path;
  return h;
}

// Fills the given parameters from a checkpoint document. Every parameter
// must be present with a matching shape.
template <class Real>
void load_checkpoint_params(const nlohmann::json& j, const std::string& path,
                            const std::vector<ad::Parameter<Real>*>& params) {
  const auto& tensors = j.at("params");
  for (auto* p : params) {
    auto it = tensors.find(p->name);
    if (it == tensors.end())
      throw ParseError(path + ": missing tensor " + p->name);
    const auto rows = (*it).at("rows").template get<Eigen::Index>();
    const auto cols = (*it).at("cols").template get<Eigen::Index>();
    if (rows != p->value.rows() || cols != p->value.cols())
      throw ParseError(path + ": shape mismatch for tensor " + p->name);
    const auto flat = (*it).at("data").template get<std::vector<double>>();
    if (static_cast<Eigen::Index>(flat.size()) != rows * cols)
      throw ParseError(path + ": bad tensor payload for " + p->name);
    std::size_t n = 0;
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index k = 0; k < cols; ++k)
        p->value(i, k) = static_cast<Real>(flat[n++]);
    p->zero_grad();
  }
}

}  // namespace swep::model
