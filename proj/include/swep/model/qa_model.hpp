#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "swep/common.hpp"
#include "swep/core/rng.hpp"
#include "swep/core/tape.hpp"
#include "swep/data/vocab.hpp"
#include "swep/model/config.hpp"

namespace swep::model {

using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Var;

// Caches one leaf node per parameter per tape, so a batch of forwards
// accumulates gradients through a single leaf each.
template <class Real>
class LeafCache {
 public:
  explicit LeafCache(Tape<Real>& tape) : tape_(&tape) {}

  Var<Real> operator()(Parameter<Real>& p) {
    auto it = cache_.find(&p);
    if (it != cache_.end()) return it->second;
    Var<Real> v = ad::leaf(*tape_, p);
    cache_.emplace(&p, v);
    return v;
  }

  Tape<Real>& tape() { return *tape_; }

 private:
  Tape<Real>* tape_;
  std::unordered_map<Parameter<Real>*, Var<Real>> cache_;
};

// Per-forward settings. `rng` drives internal dropout and is only touched in
// training mode with a nonzero dropout rate.
struct ForwardMode {
  bool training = false;
  Rng* rng = nullptr;
};

template <class Real>
struct EncodeResult {
  // Output of each transformer block, followed by the final layernorm output.
  std::vector<Var<Real>> layer_outputs;
  Var<Real> hidden;  // == layer_outputs.back()
};

// Tiny pre-norm transformer encoder with an embedding table and an affine
// span-classification head. Stands in for the large pretrained backbones.
template <class Real>
class QaModel {
 public:
  using Mat = Matrix<Real>;

  QaModel(EncoderConfig cfg, int vocab_size) : cfg_(cfg), vocab_size_(vocab_size) {
    cfg_.validate();
    if (vocab_size < data::Vocabulary::kNumReserved)
      throw ConfigError("qa model: vocabulary too small");
    tok_emb_ = Parameter<Real>("embedding.token", Mat::Zero(vocab_size, cfg_.d));
    if (cfg_.positional == PositionalKind::kLearned)
      pos_emb_ = Parameter<Real>("embedding.position",
                                 Mat::Zero(cfg_.max_len, cfg_.d));
    else
      sin_pos_ = sinusoidal_table(cfg_.max_len, cfg_.d);
    layers_.resize(cfg_.n_layers);
    for (int l = 0; l < cfg_.n_layers; ++l) {
      auto& L = layers_[l];
      const std::string p = "encoder.layer" + std::to_string(l) + ".";
      L.ln1_g = Parameter<Real>(p + "ln1.gamma", Mat::Ones(1, cfg_.d));
      L.ln1_b = Parameter<Real>(p + "ln1.beta", Mat::Zero(1, cfg_.d));
      L.wq = Parameter<Real>(p + "attn.wq", Mat::Zero(cfg_.d, cfg_.d));
      L.bq = Parameter<Real>(p + "attn.bq", Mat::Zero(1, cfg_.d));
      L.wk = Parameter<Real>(p + "attn.wk", Mat::Zero(cfg_.d, cfg_.d));
      L.bk = Parameter<Real>(p + "attn.bk", Mat::Zero(1, cfg_.d));
      L.wv = Parameter<Real>(p + "attn.wv", Mat::Zero(cfg_.d, cfg_.d));
      L.bv = Parameter<Real>(p + "attn.bv", Mat::Zero(1, cfg_.d));
      L.wo = Parameter<Real>(p + "attn.wo", Mat::Zero(cfg_.d, cfg_.d));
      L.bo = Parameter<Real>(p + "attn.bo", Mat::Zero(1, cfg_.d));
      L.ln2_g = Parameter<Real>(p + "ln2.gamma", Mat::Ones(1, cfg_.d));
      L.ln2_b = Parameter<Real>(p + "ln2.beta", Mat::Zero(1, cfg_.d));
      L.w_ff1 = Parameter<Real>(p + "ffn.w1", Mat::Zero(cfg_.d, cfg_.ffn_width));
      L.b_ff1 = Parameter<Real>(p + "ffn.b1", Mat::Zero(1, cfg_.ffn_width));
      L.w_ff2 = Parameter<Real>(p + "ffn.w2", Mat::Zero(cfg_.ffn_width, cfg_.d));
      L.b_ff2 = Parameter<Real>(p + "ffn.b2", Mat::Zero(1, cfg_.d));
    }
    lnf_g_ = Parameter<Real>("encoder.final_ln.gamma", Mat::Ones(1, cfg_.d));
    lnf_b_ = Parameter<Real>("encoder.final_ln.beta", Mat::Zero(1, cfg_.d));
    w_span_ = Parameter<Real>("head.span.w", Mat::Zero(cfg_.d, 2));
    b_span_ = Parameter<Real>("head.span.b", Mat::Zero(1, 2));
  }

  void init_weights(Rng& rng, Real std_dev = Real(0.02)) {
    for (Parameter<Real>* p : params()) {
      if (p->name.find("gamma") != std::string::npos) {
        p->value.setOnes();
      } else if (p->value.rows() == 1) {
        p->value.setZero();  // biases and layernorm betas
      } else {
        for (Eigen::Index i = 0; i < p->value.rows(); ++i)
          for (Eigen::Index j = 0; j < p->value.cols(); ++j)
            p->value(i, j) = std_dev * static_cast<Real>(rng.normal());
      }
    }
    // PAD embedding is the zero vector and stays frozen.
    tok_emb_.value.row(data::Vocabulary::kPad).setZero();
  }

  const EncoderConfig& config() const { return cfg_; }
  int vocab_size() const { return vocab_size_; }

  Parameter<Real>& token_embedding() { return tok_emb_; }
  const Parameter<Real>& token_embedding() const { return tok_emb_; }

  // Word embeddings for a token sequence: row t of the result is the
  // embedding of token_ids[t]. Differentiable w.r.t. the table.
  Var<Real> embed(LeafCache<Real>& leaf, const std::vector<int>& token_ids) {
    for (int id : token_ids)
      if (id < 0 || id >= vocab_size_)
        throw ShapeError("embed: token id " + std::to_string(id) +
                         " out of range");
    return ad::gather_rows(leaf(tok_emb_), token_ids);
  }

  // Positional embeddings are added here, after any word-embedding
  // perturbation has been applied upstream.
  EncodeResult<Real> encode(LeafCache<Real>& leaf, Var<Real> embeddings,
                            const std::vector<std::uint8_t>& padding_mask,
                            const ForwardMode& mode = {}) {
    const int T = static_cast<int>(embeddings.rows());
    if (embeddings.cols() != cfg_.d)
      throw ShapeError("encode: embedding width != d");
    if (static_cast<int>(padding_mask.size()) != T)
      throw ShapeError("encode: padding mask length mismatch");
    if (T > cfg_.max_len)
      throw ShapeError("encode: sequence length " + std::to_string(T) +
                       " exceeds max_len " + std::to_string(cfg_.max_len));
    if (!embeddings.value().allFinite())
      throw ShapeError("encode: non-finite embeddings");

    Tape<Real>& t = leaf.tape();
    Var<Real> x = embeddings;
    if (cfg_.positional == PositionalKind::kLearned) {
      x = ad::add(x, ad::slice_rows(leaf(pos_emb_), 0, T));
    } else {
      x = ad::add(x, ad::constant(t, Mat(sin_pos_.topRows(T))));
    }

    EncodeResult<Real> result;
    const int dk = cfg_.d / cfg_.n_heads;
    const Real inv_sqrt_dk = Real(1) / std::sqrt(static_cast<Real>(dk));
    for (auto& L : layers_) {
      auto a = ad::layernorm(x, leaf(L.ln1_g), leaf(L.ln1_b));
      auto q = ad::add_rowvec(ad::matmul(a, leaf(L.wq)), leaf(L.bq));
      auto k = ad::add_rowvec(ad::matmul(a, leaf(L.wk)), leaf(L.bk));
      auto v = ad::add_rowvec(ad::matmul(a, leaf(L.wv)), leaf(L.bv));
      std::vector<Var<Real>> heads;
      heads.reserve(cfg_.n_heads);
      for (int h = 0; h < cfg_.n_heads; ++h) {
        auto qh = ad::slice_cols(q, h * dk, dk);
        auto kh = ad::slice_cols(k, h * dk, dk);
        auto vh = ad::slice_cols(v, h * dk, dk);
        auto scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt_dk);
        auto probs = ad::row_softmax_masked(scores, padding_mask);
        heads.push_back(ad::matmul(probs, vh));
      }
      auto attn = ad::add_rowvec(
          ad::matmul(ad::concat_cols(heads), leaf(L.wo)), leaf(L.bo));
      attn = maybe_dropout(t, attn, mode);
      x = ad::add(x, attn);
      auto b = ad::layernorm(x, leaf(L.ln2_g), leaf(L.ln2_b));
      auto f1 = ad::relu(ad::add_rowvec(ad::matmul(b, leaf(L.w_ff1)),
                                        leaf(L.b_ff1)));
      auto f2 = ad::add_rowvec(ad::matmul(f1, leaf(L.w_ff2)), leaf(L.b_ff2));
      f2 = maybe_dropout(t, f2, mode);
      x = ad::add(x, f2);
      result.layer_outputs.push_back(x);
    }
    auto h = ad::layernorm(x, leaf(lnf_g_), leaf(lnf_b_));
    result.layer_outputs.push_back(h);
    result.hidden = h;
    return result;
  }

  // Start and end logits as 1 x T rows (unmasked; consumers apply masks).
  std::pair<Var<Real>, Var<Real>> span_logits(LeafCache<Real>& leaf,
                                              Var<Real> hidden) {
    auto logits =
        ad::add_rowvec(ad::matmul(hidden, leaf(w_span_)), leaf(b_span_));
    auto start = ad::transpose(ad::slice_cols(logits, 0, 1));
    auto end = ad::transpose(ad::slice_cols(logits, 1, 1));
    return {start, end};
  }

  // log p(y_start) + log p(y_end) with softmaxes over unpadded positions.
  Var<Real> span_log_likelihood(LeafCache<Real>& leaf, Var<Real> hidden,
                                std::pair<int, int> span,
                                const std::vector<std::uint8_t>& padding_mask) {
    if (span.first < 0 || span.second >= static_cast<int>(padding_mask.size()) ||
        !padding_mask[span.first] || !padding_mask[span.second])
      throw ShapeError("span_log_likelihood: span on a padded position");
    auto [start, end] = span_logits(leaf, hidden);
    auto ls = ad::log_softmax_pick(start, padding_mask, span.first);
    auto le = ad::log_softmax_pick(end, padding_mask, span.second);
    return ad::add(ls, le);
  }

  // Argmax over (s, e) with s <= e <= s + max_answer_len, restricted to the
  // context region [M+2, T-2]; ties by smallest s, then smallest e.
  static std::pair<int, int> predict_span(const Matrix<Real>& start_logits,
                                          const Matrix<Real>& end_logits,
                                          int question_len, int seq_len,
                                          int max_answer_len) {
    const int lo = question_len + 2;
    const int hi = seq_len - 2;
    if (lo > hi) throw ShapeError("predict_span: empty context region");
    double best = -std::numeric_limits<double>::infinity();
    std::pair<int, int> arg{lo, lo};
    for (int s = lo; s <= hi; ++s) {
      for (int e = s; e <= hi && e - s <= max_answer_len; ++e) {
        const double v = static_cast<double>(start_logits(0, s)) +
                         static_cast<double>(end_logits(0, e));
        if (v > best) {
          best = v;
          arg = {s, e};
        }
      }
    }
    return arg;
  }

  // All trainable tensors: encoder (theta_f) then head (theta_g).
  std::vector<Parameter<Real>*> params() {
    std::vector<Parameter<Real>*> out = encoder_params();
    out.push_back(&w_span_);
    out.push_back(&b_span_);
    return out;
  }

  std::vector<Parameter<Real>*> encoder_params() {
    std::vector<Parameter<Real>*> out;
    out.push_back(&tok_emb_);
    if (cfg_.positional == PositionalKind::kLearned) out.push_back(&pos_emb_);
    for (auto& L : layers_) {
      for (Parameter<Real>* p :
           {&L.ln1_g, &L.ln1_b, &L.wq, &L.bq, &L.wk, &L.bk, &L.wv, &L.bv,
            &L.wo, &L.bo, &L.ln2_g, &L.ln2_b, &L.w_ff1, &L.b_ff1, &L.w_ff2,
            &L.b_ff2})
        out.push_back(p);
    }
    out.push_back(&lnf_g_);
    out.push_back(&lnf_b_);
    return out;
  }

  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }

  // The PAD embedding row is frozen: clear whatever the backward pass put
  // there before the optimizer step.
  void zero_pad_grad() { tok_emb_.grad.row(data::Vocabulary::kPad).setZero(); }

 private:
  struct Layer {
    Parameter<Real> ln1_g, ln1_b;
    Parameter<Real> wq, bq, wk, bk, wv, bv, wo, bo;
    Parameter<Real> ln2_g, ln2_b;
    Parameter<Real> w_ff1, b_ff1, w_ff2, b_ff2;
  };

  Var<Real> maybe_dropout(Tape<Real>& t, Var<Real> x, const ForwardMode& mode) {
    if (!mode.training || cfg_.internal_dropout_p <= 0.0) return x;
    if (!mode.rng)
      throw ConfigError("encode: training-mode dropout needs an rng");
    const Real keep = Real(1) - static_cast<Real>(cfg_.internal_dropout_p);
    Mat mask(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < mask.rows(); ++i)
      for (Eigen::Index j = 0; j < mask.cols(); ++j)
        mask(i, j) =
            mode.rng->bernoulli(cfg_.internal_dropout_p) ? Real(0) : Real(1) / keep;
    return ad::cmul(x, mask);
  }

  static Mat sinusoidal_table(int max_len, int d) {
    Mat table(max_len, d);
    for (int pos = 0; pos < max_len; ++pos) {
      for (int i = 0; i < d; ++i) {
        const double angle =
            pos / std::pow(10000.0, 2.0 * (i / 2) / static_cast<double>(d));
        table(pos, i) =
            static_cast<Real>((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
      }
    }
    return table;
  }

  EncoderConfig cfg_;
  int vocab_size_;
  Parameter<Real> tok_emb_;
  Parameter<Real> pos_emb_;
  Mat sin_pos_;
  std::vector<Layer> layers_;
  Parameter<Real> lnf_g_, lnf_b_;
  Parameter<Real> w_span_, b_span_;
};

}  // namespace swep::model
