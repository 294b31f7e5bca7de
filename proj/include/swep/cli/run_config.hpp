#pragma once

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "swep/common.hpp"
#include "swep/data/toy.hpp"
#include "swep/model/config.hpp"
#include "swep/noise/baselines.hpp"
#include "swep/noise/objectives.hpp"
#include "swep/train/trainer.hpp"

namespace swep::cli {

// The declarative run configuration: one JSON document with nested sections.
// Unknown keys are rejected; flags override file values which override
// defaults. The resolved document is echoed to <run_dir>/config.json.
struct RunConfig {
  std::uint64_t seed = 7;
  std::string precision = "float32";  // or "float64"

  // data
  std::string data_source = "toy";  // toy | jsonl | squad
  data::ToySpec toy;
  bool toy_seed_given = false;
  int toy_n_dev = 50;
  std::string path_train, path_dev, path_vocab;

  model::EncoderConfig encoder;
  train::TrainConfig train;

  // analysis
  int analysis_sample_size = 100;
  int analysis_knn_k = 5;
  int analysis_max_intensity_examples = 8;
  bool analysis_track_word_change = false;
  bool analysis_plots = false;

  void validate() const {
    if (precision != "float32" && precision != "float64")
      throw ConfigError("config: precision must be float32 or float64");
    if (data_source != "toy" && data_source != "jsonl" &&
        data_source != "squad")
      throw ConfigError("config: data.source must be toy, jsonl, or squad");
    if (data_source != "toy" && (path_train.empty() || path_dev.empty()))
      throw ConfigError("config: data.paths.train and data.paths.dev are "
                        "required for source " + data_source);
    if (data_source == "jsonl" && path_vocab.empty())
      throw ConfigError("config: data.paths.vocab is required for jsonl data");
    if (analysis_sample_size < 1 || analysis_knn_k < 1 ||
        analysis_max_intensity_examples < 0)
      throw ConfigError("config: invalid analysis settings");
    encoder.validate();
    train.validate();
  }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j,
                                const std::set<std::string>& known,
                                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("config: unknown key \"" + it.key() + "\" in " + where);
}

template <class T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  using detail::maybe;
  using detail::reject_unknown_keys;
  RunConfig cfg;
  reject_unknown_keys(
      j, {"seed", "precision", "data", "model", "swep", "augmenter", "train",
          "analysis"},
      "the top level");
  maybe(j, "seed", cfg.seed);
  maybe(j, "precision", cfg.precision);

  if (j.contains("data")) {
    const auto& d = j.at("data");
    reject_unknown_keys(d, {"source", "toy", "paths"}, "data");
    maybe(d, "source", cfg.data_source);
    if (d.contains("toy")) {
      const auto& t = d.at("toy");
      reject_unknown_keys(
          t, {"n_examples", "vocab_size", "context_len", "seed", "n_dev"},
          "data.toy");
      maybe(t, "n_examples", cfg.toy.n_examples);
      maybe(t, "vocab_size", cfg.toy.vocab_size);
      if (t.contains("context_len")) {
        auto range = t.at("context_len").get<std::vector<int>>();
        if (range.size() != 2)
          throw ConfigError("config: data.toy.context_len must be [min, max]");
        cfg.toy.context_len_min = range[0];
        cfg.toy.context_len_max = range[1];
      }
      if (t.contains("seed")) {
        cfg.toy.seed = t.at("seed").get<std::uint64_t>();
        cfg.toy_seed_given = true;
      }
      maybe(t, "n_dev", cfg.toy_n_dev);
    }
    if (d.contains("paths")) {
      const auto& p = d.at("paths");
      reject_unknown_keys(p, {"train", "dev", "vocab"}, "data.paths");
      maybe(p, "train", cfg.path_train);
      maybe(p, "dev", cfg.path_dev);
      maybe(p, "vocab", cfg.path_vocab);
    }
  }

  if (j.contains("model")) {
    const auto& m = j.at("model");
    reject_unknown_keys(m,
                        {"d", "n_layers", "n_heads", "ffn_width",
                         "internal_dropout_p", "max_len", "positional"},
                        "model");
    maybe(m, "d", cfg.encoder.d);
    maybe(m, "n_layers", cfg.encoder.n_layers);
    maybe(m, "n_heads", cfg.encoder.n_heads);
    maybe(m, "ffn_width", cfg.encoder.ffn_width);
    maybe(m, "internal_dropout_p", cfg.encoder.internal_dropout_p);
    maybe(m, "max_len", cfg.encoder.max_len);
    if (m.contains("positional"))
      cfg.encoder.positional = model::positional_kind_from_string(
          m.at("positional").get<std::string>());
  }

  if (j.contains("swep")) {
    const auto& s = j.at("swep");
    reject_unknown_keys(
        s, {"alpha", "lambda", "beta", "stop_gradient", "noise_input_layer"},
        "swep");
    maybe(s, "alpha", cfg.train.alpha);
    maybe(s, "lambda", cfg.train.lambda);
    if (s.contains("beta")) {
      const auto& b = s.at("beta");
      reject_unknown_keys(b, {"kind", "beta0", "zero_epoch"}, "swep.beta");
      if (b.contains("kind"))
        cfg.train.beta.kind =
            objectives::beta_kind_from_string(b.at("kind").get<std::string>());
      maybe(b, "beta0", cfg.train.beta.beta0);
      maybe(b, "zero_epoch", cfg.train.beta.zero_epoch);
    }
    maybe(s, "stop_gradient", cfg.train.stop_gradient);
    maybe(s, "noise_input_layer", cfg.train.noise_input_layer);
  }

  if (j.contains("augmenter")) {
    const auto& a = j.at("augmenter");
    reject_unknown_keys(
        a, {"kind", "p", "adv_steps", "adv_step_size", "adv_radius"},
        "augmenter");
    if (a.contains("kind"))
      cfg.train.augmenter.kind =
          baselines::augmenter_kind_from_string(a.at("kind").get<std::string>());
    maybe(a, "p", cfg.train.augmenter.p);
    maybe(a, "adv_steps", cfg.train.augmenter.adv_steps);
    maybe(a, "adv_step_size", cfg.train.augmenter.adv_step_size);
    maybe(a, "adv_radius", cfg.train.augmenter.adv_radius);
  }

  if (j.contains("train")) {
    const auto& t = j.at("train");
    reject_unknown_keys(t,
                        {"epochs", "batch_size", "learning_rate",
                         "weight_decay", "clip_norm", "optimizer", "ablation",
                         "eval_every", "subsample_fraction", "max_answer_len",
                         "kl_token_mean"},
                        "train");
    maybe(t, "epochs", cfg.train.epochs);
    maybe(t, "batch_size", cfg.train.batch_size);
    maybe(t, "learning_rate", cfg.train.learning_rate);
    maybe(t, "weight_decay", cfg.train.weight_decay);
    maybe(t, "clip_norm", cfg.train.clip_norm);
    if (t.contains("optimizer") &&
        t.at("optimizer").get<std::string>() != "adamw")
      throw ConfigError("config: only the adamw optimizer is supported");
    if (t.contains("ablation"))
      cfg.train.ablation =
          train::ablation_from_string(t.at("ablation").get<std::string>());
    maybe(t, "eval_every", cfg.train.eval_every);
    maybe(t, "subsample_fraction", cfg.train.subsample_fraction);
    maybe(t, "max_answer_len", cfg.train.max_answer_len);
    maybe(t, "kl_token_mean", cfg.train.kl_token_mean);
  }

  if (j.contains("analysis")) {
    const auto& a = j.at("analysis");
    reject_unknown_keys(a,
                        {"sample_size", "knn_k", "max_intensity_examples",
                         "track_word_change", "plots"},
                        "analysis");
    maybe(a, "sample_size", cfg.analysis_sample_size);
    maybe(a, "knn_k", cfg.analysis_knn_k);
    maybe(a, "max_intensity_examples", cfg.analysis_max_intensity_examples);
    maybe(a, "track_word_change", cfg.analysis_track_word_change);
    maybe(a, "plots", cfg.analysis_plots);
  }

  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return run_config_from_json(j);
}

inline nlohmann::ordered_json run_config_to_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  j["seed"] = cfg.seed;
  j["precision"] = cfg.precision;
  j["data"]["source"] = cfg.data_source;
  j["data"]["toy"] = {{"n_examples", cfg.toy.n_examples},
                      {"vocab_size", cfg.toy.vocab_size},
                      {"context_len", {cfg.toy.context_len_min,
                                       cfg.toy.context_len_max}},
                      {"seed", cfg.toy.seed},
                      {"n_dev", cfg.toy_n_dev}};
  j["data"]["paths"] = {{"train", cfg.path_train},
                        {"dev", cfg.path_dev},
                        {"vocab", cfg.path_vocab}};
  j["model"] = model::encoder_config_to_json(cfg.encoder);
  j["swep"] = {{"alpha", cfg.train.alpha},
               {"lambda", cfg.train.lambda},
               {"beta",
                {{"kind", objectives::to_string(cfg.train.beta.kind)},
                 {"beta0", cfg.train.beta.beta0},
                 {"zero_epoch", cfg.train.beta.zero_epoch}}},
               {"stop_gradient", cfg.train.stop_gradient},
               {"noise_input_layer", cfg.train.noise_input_layer}};
  j["augmenter"] = {{"kind", baselines::to_string(cfg.train.augmenter.kind)},
                    {"p", cfg.train.augmenter.p},
                    {"adv_steps", cfg.train.augmenter.adv_steps},
                    {"adv_step_size", cfg.train.augmenter.adv_step_size},
                    {"adv_radius", cfg.train.augmenter.adv_radius}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"learning_rate", cfg.train.learning_rate},
                {"weight_decay", cfg.train.weight_decay},
                {"clip_norm", cfg.train.clip_norm},
                {"optimizer", "adamw"},
                {"ablation", train::to_string(cfg.train.ablation)},
                {"eval_every", cfg.train.eval_every},
                {"subsample_fraction", cfg.train.subsample_fraction},
                {"max_answer_len", cfg.train.max_answer_len},
                {"kl_token_mean", cfg.train.kl_token_mean}};
  j["analysis"] = {
      {"sample_size", cfg.analysis_sample_size},
      {"knn_k", cfg.analysis_knn_k},
      {"max_intensity_examples", cfg.analysis_max_intensity_examples},
      {"track_word_change", cfg.analysis_track_word_change},
      {"plots", cfg.analysis_plots}};
  return j;
}

}  // namespace swep::cli
