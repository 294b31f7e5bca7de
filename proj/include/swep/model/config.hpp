#pragma once

#include <string>

#include "swep/common.hpp"

namespace swep::model {

enum class PositionalKind { kLearned, kSinusoidal };

inline PositionalKind positional_kind_from_string(const std::string& s) {
  if (s == "learned") return PositionalKind::kLearned;
  if (s == "sinusoidal") return PositionalKind::kSinusoidal;
  throw ConfigError("unknown positional encoding kind: " + s);
}

inline std::string to_string(PositionalKind k) {
  return k == PositionalKind::kLearned ? "learned" : "sinusoidal";
}

struct EncoderConfig {
  int d = 32;
  int n_layers = 2;
  int n_heads = 2;
  int ffn_width = 64;
  double internal_dropout_p = 0.0;
  int max_len = 128;
  PositionalKind positional = PositionalKind::kLearned;

  void validate() const {
    if (d < 1 || n_layers < 1 || n_heads < 1 || ffn_width < 1 || max_len < 1)
      throw ConfigError("encoder config: all counts must be >= 1");
    if (d % n_heads != 0)
      throw ConfigError("encoder config: d must be divisible by n_heads");
    if (internal_dropout_p < 0.0 || internal_dropout_p >= 1.0)
      throw ConfigError("encoder config: internal_dropout_p must be in [0, 1)");
  }
};

}  // namespace swep::model
