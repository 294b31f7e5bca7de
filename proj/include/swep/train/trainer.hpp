#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "swep/common.hpp"
#include "swep/core/rng.hpp"
#include "swep/core/tape.hpp"
#include "swep/data/example.hpp"
#include "swep/model/checkpoint.hpp"
#include "swep/model/qa_model.hpp"
#include "swep/noise/baselines.hpp"
#include "swep/noise/generator.hpp"
#include "swep/noise/objectives.hpp"
#include "swep/train/metrics.hpp"
#include "swep/train/optimizer.hpp"

namespace swep::train {

using ad::Matrix;
using ad::Tape;
using ad::Var;

enum class Ablation {
  kFull,
  kAdditiveNoise,
  kFixedMu,
  kFixedSigma,
  kDeterministicNoise,
  kNoKl,
  kNoMle,
  kBaseline,
};

struct AblationMode {
  Ablation kind = Ablation::kFull;
  // Which augmenter replaces the SWEP path when kind == kBaseline.
  baselines::AugmenterKind baseline = baselines::AugmenterKind::kNone;
};

inline AblationMode ablation_from_string(const std::string& s) {
  if (s == "full") return {Ablation::kFull, {}};
  if (s == "additive_noise") return {Ablation::kAdditiveNoise, {}};
  if (s == "fixed_mu") return {Ablation::kFixedMu, {}};
  if (s == "fixed_sigma") return {Ablation::kFixedSigma, {}};
  if (s == "deterministic_noise") return {Ablation::kDeterministicNoise, {}};
  if (s == "no_kl") return {Ablation::kNoKl, {}};
  if (s == "no_mle") return {Ablation::kNoMle, {}};
  const std::string prefix = "baseline:";
  if (s.rfind(prefix, 0) == 0) {
    auto kind = baselines::augmenter_kind_from_string(s.substr(prefix.size()));
    if (kind == baselines::AugmenterKind::kSwep) return {Ablation::kFull, {}};
    return {Ablation::kBaseline, kind};
  }
  throw ConfigError("unknown ablation mode: " + s);
}

inline std::string to_string(const AblationMode& m) {
  switch (m.kind) {
    case Ablation::kFull: return "full";
    case Ablation::kAdditiveNoise: return "additive_noise";
    case Ablation::kFixedMu: return "fixed_mu";
    case Ablation::kFixedSigma: return "fixed_sigma";
    case Ablation::kDeterministicNoise: return "deterministic_noise";
    case Ablation::kNoKl: return "no_kl";
    case Ablation::kNoMle: return "no_mle";
    case Ablation::kBaseline:
      return "baseline:" + baselines::to_string(m.baseline);
  }
  return "full";
}

struct TrainConfig {
  int epochs = 50;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double clip_norm = 1.0;
  std::uint64_t seed = 7;
  AblationMode ablation;
  baselines::AugmenterConfig augmenter;
  double lambda = 0.5;
  objectives::BetaSchedule beta;
  double alpha = 0.1;
  bool stop_gradient = true;
  // Which encoder layer feeds the noise generator; -1 means the final
  // layernorm output.
  int noise_input_layer = -1;
  int eval_every = 0;  // extra evals every N steps; epoch ends always eval
  double subsample_fraction = 1.0;
  int max_answer_len = 30;
  // Normalize the KL by the number of unpadded tokens instead of summing.
  bool kl_token_mean = false;

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (learning_rate <= 0.0)
      throw ConfigError("train: learning_rate must be positive");
    if (ablation.kind != Ablation::kNoMle &&
        !(lambda > 0.0 && lambda < 1.0))
      throw ConfigError("train: lambda must be in (0, 1)");
    if (alpha <= 0.0) throw ConfigError("train: alpha must be positive");
    if (subsample_fraction <= 0.0 || subsample_fraction > 1.0)
      throw ConfigError("train: subsample_fraction must be in (0, 1]");
    if (max_answer_len < 0)
      throw ConfigError("train: max_answer_len must be >= 0");
    beta.validate();
    augmenter.validate();
  }
};

// Per-example snapshot of the perturbation, for word-change tracking.
template <class Real>
struct PerturbedExample {
  const std::vector<int>* token_ids = nullptr;
  const std::vector<std::uint8_t>* padding_mask = nullptr;
  Matrix<Real> original;
  Matrix<Real> perturbed;
};

template <class Real>
struct TrainHooks {
  // Called once per step with the perturbed embeddings of the batch, when
  // the step has a perturbed path.
  std::function<void(long long step,
                     const std::vector<PerturbedExample<Real>>&)>
      on_perturbed;
};

template <class Real>
struct TrainerState {
  model::QaModel<Real>* model = nullptr;
  noise::NoiseGenerator<Real>* generator = nullptr;
  AdamW<Real>* optimizer = nullptr;
  Rng noise_rng{0};
  Rng dropout_rng{0};
  long long step = 0;
};

namespace detail {

template <class Real>
Var<Real> average(Tape<Real>& tape, const std::vector<Var<Real>>& terms) {
  Var<Real> acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
  return ad::scale(acc, Real(1) / static_cast<Real>(terms.size()));
}

template <class Real>
int count_unpadded(const std::vector<std::uint8_t>& mask) {
  int n = 0;
  for (auto m : mask) n += (m != 0);
  return n;
}

}  // namespace detail

// One optimization step over a batch, per the training procedure: clean
// forward for L_MLE, a noise sample from q(z|x), a perturbed forward for
// L_noise, then a single update of encoder, head, and generator parameters
// on the negated combined objective. Ablations rewire exactly one aspect.
template <class Real>
objectives::LossBreakdown train_step(TrainerState<Real>& state,
                                     const data::Batch& batch,
                                     const TrainConfig& cfg, double beta_now,
                                     const TrainHooks<Real>& hooks = {}) {
  auto& model = *state.model;
  auto& gen = *state.generator;
  const int B = batch.size();
  const int d = model.config().d;
  const bool swep_family = cfg.ablation.kind != Ablation::kBaseline;
  const bool additive = cfg.ablation.kind == Ablation::kAdditiveNoise;
  if (cfg.ablation.kind == Ablation::kNoKl) beta_now = 0.0;
  const noise::PriorConfig prior{cfg.alpha, additive ? 0.0 : 1.0};

  // Adversarial probes run first: they use throwaway tapes whose backward
  // passes touch parameter grads, which are zeroed below.
  std::vector<Matrix<Real>> adv_offsets;
  if (cfg.ablation.kind == Ablation::kBaseline &&
      cfg.ablation.baseline == baselines::AugmenterKind::kAdversarial) {
    for (int i = 0; i < B; ++i) {
      const auto& mask = batch.padding_mask[i];
      Matrix<Real> e0;
      {
        Tape<Real> probe;
        model::LeafCache<Real> leaf(probe);
        e0 = model.embed(leaf, batch.token_ids[i]).value();
      }
      auto grad_fn = [&](const Matrix<Real>& cand) {
        Tape<Real> probe;
        model::LeafCache<Real> leaf(probe);
        auto ev = ad::constant(probe, cand);
        auto enc = model.encode(leaf, ev, mask);
        auto ll =
            model.span_log_likelihood(leaf, enc.hidden, batch.spans[i], mask);
        probe.backward(ll.id);
        return Matrix<Real>(-ev.grad());  // d(NLL)/d(e)
      };
      auto perturbed = baselines::adversarial_perturb<Real>(
          e0, grad_fn, cfg.augmenter.adv_steps, cfg.augmenter.adv_step_size,
          cfg.augmenter.adv_radius, mask);
      adv_offsets.push_back(perturbed - e0);
    }
  }

  model.zero_grad();
  gen.zero_grad();

  Tape<Real> tape;
  model::LeafCache<Real> leaf(tape);
  model::ForwardMode mode{true, &state.dropout_rng};

  std::vector<Var<Real>> clean_lls, noise_objectives, pert_lls, kls;
  std::vector<PerturbedExample<Real>> perturb_log;
  const bool want_pert_log = static_cast<bool>(hooks.on_perturbed);

  for (int i = 0; i < B; ++i) {
    const auto& ids = batch.token_ids[i];
    const auto& mask = batch.padding_mask[i];
    const auto span = batch.spans[i];
    const int T = static_cast<int>(ids.size());

    auto e = model.embed(leaf, ids);
    auto enc = model.encode(leaf, e, mask, mode);
    clean_lls.push_back(
        model.span_log_likelihood(leaf, enc.hidden, span, mask));

    Var<Real> e_tilde;
    bool has_pert = true;
    Var<Real> kl_i;
    bool has_kl = false;

    if (swep_family) {
      int layer = cfg.noise_input_layer;
      const int n_outputs = static_cast<int>(enc.layer_outputs.size());
      if (layer < 0) layer = n_outputs - 1;
      if (layer >= n_outputs)
        throw ConfigError("train: noise_input_layer out of range");
      auto np = gen.infer(leaf, enc.layer_outputs[layer], cfg.stop_gradient);

      Var<Real> mu_eff = np.mu;
      Var<Real> s2_eff = np.sigma2;
      if (cfg.ablation.kind == Ablation::kFixedMu)
        mu_eff = ad::constant(tape, Matrix<Real>::Ones(T, d));
      if (cfg.ablation.kind == Ablation::kFixedSigma)
        s2_eff = ad::constant(tape, Matrix<Real>::Ones(T, d));

      Var<Real> z;
      if (cfg.ablation.kind == Ablation::kDeterministicNoise) {
        z = mu_eff;  // no sampling
      } else {
        auto eps = noise::standard_normal<Real>(T, d, state.noise_rng);
        z = noise::sample_noise(noise::NoiseParams<Real>{mu_eff, s2_eff}, eps);
      }
      e_tilde = additive ? noise::apply_noise_additive(e, z, mask)
                         : noise::apply_noise(e, z, mask);

      kl_i = objectives::kl_to_prior(noise::NoiseParams<Real>{mu_eff, s2_eff},
                                     prior, mask);
      if (cfg.kl_token_mean)
        kl_i = ad::scale(kl_i, Real(1) / static_cast<Real>(
                                             detail::count_unpadded<Real>(mask)));
      has_kl = true;
    } else {
      switch (cfg.ablation.baseline) {
        case baselines::AugmenterKind::kNone:
          has_pert = false;
          break;
        case baselines::AugmenterKind::kGaussianDropout: {
          auto m = baselines::dropout_mask<Real>(
              baselines::DropoutMaskKind::kGaussian, cfg.augmenter.p, T, d,
              state.noise_rng);
          e_tilde = noise::apply_noise(e, ad::constant(tape, m), mask);
          break;
        }
        case baselines::AugmenterKind::kBernoulliDropout: {
          auto m = baselines::dropout_mask<Real>(
              baselines::DropoutMaskKind::kBernoulli, cfg.augmenter.p, T, d,
              state.noise_rng);
          e_tilde = noise::apply_noise(e, ad::constant(tape, m), mask);
          break;
        }
        case baselines::AugmenterKind::kWordDropout:
          e_tilde = baselines::word_dropout(e, cfg.augmenter.p, mask,
                                            state.noise_rng);
          break;
        case baselines::AugmenterKind::kPriorAug: {
          auto eps = noise::standard_normal<Real>(T, d, state.noise_rng);
          auto z = noise::sample_prior_noise<Real>(noise::PriorConfig{cfg.alpha, 1.0},
                                                   T, d, eps);
          e_tilde = noise::apply_noise(e, ad::constant(tape, z), mask);
          break;
        }
        case baselines::AugmenterKind::kAdversarial:
          e_tilde = ad::add(e, ad::constant(tape, adv_offsets[i]));
          break;
        case baselines::AugmenterKind::kSwep:
          throw ConfigError("train: baseline:swep resolves to the full model");
      }
    }

    if (has_pert) {
      auto enc2 = model.encode(leaf, e_tilde, mask, mode);
      auto ll2 = model.span_log_likelihood(leaf, enc2.hidden, span, mask);
      pert_lls.push_back(ll2);
      if (has_kl) {
        kls.push_back(kl_i);
        noise_objectives.push_back(objectives::noise_objective(
            ll2, kl_i, static_cast<Real>(beta_now)));
      } else {
        noise_objectives.push_back(ll2);
      }
      if (want_pert_log) {
        PerturbedExample<Real> rec;
        rec.token_ids = &batch.token_ids[i];
        rec.padding_mask = &batch.padding_mask[i];
        rec.original = e.value();
        rec.perturbed = e_tilde.value();
        perturb_log.push_back(std::move(rec));
      }
    }
  }

  auto l_mle = detail::average(tape, clean_lls);
  Var<Real> total;
  if (cfg.ablation.kind == Ablation::kNoMle) {
    total = detail::average(tape, noise_objectives);
  } else if (noise_objectives.empty()) {
    total = l_mle;  // pure MLE baseline
  } else {
    auto l_noise = detail::average(tape, noise_objectives);
    total = objectives::combined_objective(l_mle, l_noise,
                                           static_cast<Real>(cfg.lambda));
  }
  auto loss = ad::neg(total);

  objectives::LossBreakdown out;
  out.step = state.step + 1;
  out.l_mle = static_cast<double>(l_mle.value()(0, 0));
  out.loglik_perturbed = 0.0;
  if (!pert_lls.empty()) {
    double s = 0.0;
    for (auto& v : pert_lls) s += static_cast<double>(v.value()(0, 0));
    out.loglik_perturbed = s / static_cast<double>(pert_lls.size());
  }
  out.kl_total = 0.0;
  if (!kls.empty()) {
    double s = 0.0;
    for (auto& v : kls) s += static_cast<double>(v.value()(0, 0));
    out.kl_total = s / static_cast<double>(kls.size());
  }
  out.beta = beta_now;
  out.lambda = cfg.lambda;
  out.combined = static_cast<double>(loss.value()(0, 0));
  if (!std::isfinite(out.combined))
    throw Error("train: non-finite loss at step " + std::to_string(out.step) +
                " (batch starting with example " + batch.ids.front() + ")");

  tape.backward(loss.id);
  model.zero_pad_grad();

  std::vector<ad::Parameter<Real>*> params = model.params();
  for (auto* p : gen.params()) params.push_back(p);
  clip_global_norm<Real>(params, cfg.clip_norm);
  state.optimizer->step(params);
  ++state.step;

  if (want_pert_log && !perturb_log.empty())
    hooks.on_perturbed(out.step, perturb_log);
  return out;
}

// ---- full training loop -----------------------------------------------------

struct EvalRecord {
  long long step = 0;
  int epoch = 0;  // 1-based epoch the evaluation closed
  std::string split;
  EvalResult result;
};

struct TrainPaths {
  std::string run_dir;
  std::string metrics_path;
  std::string best_ckpt_path;
  std::string last_ckpt_path;
};

template <class Real>
struct TrainResult {
  std::vector<objectives::LossBreakdown> steps;
  std::vector<EvalRecord> evals;
  double best_dev_f1 = -1.0;
  long long total_steps = 0;
  TrainPaths paths;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string step_record_json(const objectives::LossBreakdown& b) {
  std::string s = "{\"step\":" + std::to_string(b.step);
  s += ",\"l_mle\":" + format_double(b.l_mle);
  s += ",\"loglik_perturbed\":" + format_double(b.loglik_perturbed);
  s += ",\"kl_total\":" + format_double(b.kl_total);
  s += ",\"beta\":" + format_double(b.beta);
  s += ",\"lambda\":" + format_double(b.lambda);
  s += ",\"combined\":" + format_double(b.combined);
  s += "}";
  return s;
}

inline std::string eval_record_json(const EvalRecord& r) {
  std::string s = "{\"step\":" + std::to_string(r.step);
  s += ",\"epoch\":" + std::to_string(r.epoch);
  s += ",\"split\":\"" + r.split + "\"";
  s += ",\"em\":" + format_double(r.result.em);
  s += ",\"f1\":" + format_double(r.result.f1);
  s += ",\"n_examples\":" + std::to_string(r.result.n_examples);
  s += "}";
  return s;
}

}  // namespace detail

// Deterministic subsample: shuffle indices with the derived stream, take the
// first ceil(N * fraction), restore original order.
inline std::vector<std::size_t> subsample_indices(std::size_t n,
                                                  double fraction, Rng rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (fraction >= 1.0) return idx;
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<long long>(i) - 1));
    std::swap(idx[i - 1], idx[j]);
  }
  const auto keep = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(n)));
  idx.resize(std::max<std::size_t>(1, keep));
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Runs epochs x batches of train_step over a shuffled training set, logging
// one JSON line per step and per evaluation, and checkpointing the best
// dev-F1 model plus the final model.
template <class Real>
TrainResult<Real> run_training(
    model::QaModel<Real>& model, noise::NoiseGenerator<Real>& gen,
    const std::vector<data::TokenizedExample>& train_set,
    const std::vector<data::TokenizedExample>& dev_set,
    const data::Vocabulary& vocab, const TrainConfig& cfg,
    const std::string& run_dir, const TrainHooks<Real>& hooks = {}) {
  cfg.validate();
  if (train_set.empty() || dev_set.empty())
    throw DataError("run_training: datasets must be non-empty");

  TrainResult<Real> result;
  result.paths.run_dir = run_dir;
  std::ofstream metrics;
  const bool persist = !run_dir.empty();
  if (persist) {
    std::filesystem::create_directories(run_dir);
    result.paths.metrics_path = run_dir + "/metrics.jsonl";
    result.paths.best_ckpt_path = run_dir + "/best.ckpt";
    result.paths.last_ckpt_path = run_dir + "/last.ckpt";
    metrics.open(result.paths.metrics_path, std::ios::binary);
    if (!metrics)
      throw ParseError("cannot open metrics log: " + result.paths.metrics_path);
  }

  Rng master(cfg.seed);
  TrainerState<Real> state;
  state.model = &model;
  state.generator = &gen;
  AdamW<Real> optimizer(cfg.learning_rate, cfg.weight_decay);
  state.optimizer = &optimizer;
  state.noise_rng = master.derive("noise");
  state.dropout_rng = master.derive("dropout");
  Rng shuffle_rng = master.derive("shuffle");

  const auto keep =
      subsample_indices(train_set.size(), cfg.subsample_fraction,
                        master.derive("subsample"));
  std::vector<data::TokenizedExample> train;
  train.reserve(keep.size());
  for (auto i : keep) train.push_back(train_set[i]);

  auto do_eval = [&](int epoch) {
    for (const auto* split : {"train", "dev"}) {
      EvalRecord rec;
      rec.step = state.step;
      rec.epoch = epoch;
      rec.split = split;
      try {
        const auto& examples =
            std::string(split) == "train" ? train : dev_set;
        rec.result =
            evaluate_em_f1(model, examples, vocab, cfg.max_answer_len);
      } catch (const Error& e) {
        // evaluation failure is logged, training continues
        if (persist) metrics << "{\"step\":" << state.step
                             << ",\"eval_error\":\"" << e.what() << "\"}\n";
        continue;
      }
      result.evals.push_back(rec);
      if (persist) {
        metrics << detail::eval_record_json(rec) << "\n";
        metrics.flush();
      }
      if (rec.split == "dev" && rec.result.f1 > result.best_dev_f1) {
        result.best_dev_f1 = rec.result.f1;
        if (persist) {
          std::vector<ad::Parameter<Real>*> params = model.params();
          for (auto* p : gen.params()) params.push_back(p);
          model::save_checkpoint<Real>(result.paths.best_ckpt_path,
                                       model.config(), model.vocab_size(),
                                       vocab.hash(), params);
        }
      }
    }
  };

  const auto steps_per_epoch =
      static_cast<long long>((train.size() + cfg.batch_size - 1) /
                             cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // deterministic per-epoch shuffle
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(
          shuffle_rng.uniform_int(0, static_cast<long long>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    std::vector<data::TokenizedExample> shuffled;
    shuffled.reserve(train.size());
    for (auto i : order) shuffled.push_back(train[i]);
    auto batches = data::batchify(shuffled, cfg.batch_size);

    for (const auto& batch : batches) {
      const double epoch_progress =
          static_cast<double>(state.step) / static_cast<double>(steps_per_epoch);
      const double beta_now = objectives::beta_at(cfg.beta, epoch_progress);
      auto breakdown = train_step(state, batch, cfg, beta_now, hooks);
      result.steps.push_back(breakdown);
      if (persist) metrics << detail::step_record_json(breakdown) << "\n";
      if (cfg.eval_every > 0 && state.step % cfg.eval_every == 0)
        do_eval(epoch + 1);
    }
    do_eval(epoch + 1);
  }

  result.total_steps = state.step;
  if (persist) {
    std::vector<ad::Parameter<Real>*> params = model.params();
    for (auto* p : gen.params()) params.push_back(p);
    model::save_checkpoint<Real>(result.paths.last_ckpt_path, model.config(),
                                 model.vocab_size(), vocab.hash(), params);
    metrics.flush();
  }
  return result;
}

}  // namespace swep::train
