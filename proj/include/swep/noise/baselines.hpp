#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "swep/common.hpp"
#include "swep/core/rng.hpp"
#include "swep/core/tape.hpp"

namespace swep::baselines {

using ad::Matrix;
using ad::Var;

enum class AugmenterKind {
  kNone,
  kGaussianDropout,
  kBernoulliDropout,
  kWordDropout,
  kPriorAug,
  kAdversarial,
  kSwep,
};

inline AugmenterKind augmenter_kind_from_string(const std::string& s) {
  if (s == "none") return AugmenterKind::kNone;
  if (s == "gaussian_dropout") return AugmenterKind::kGaussianDropout;
  if (s == "bernoulli_dropout") return AugmenterKind::kBernoulliDropout;
  if (s == "word_dropout") return AugmenterKind::kWordDropout;
  if (s == "prior_aug") return AugmenterKind::kPriorAug;
  if (s == "adversarial") return AugmenterKind::kAdversarial;
  if (s == "swep") return AugmenterKind::kSwep;
  throw ConfigError("unknown augmenter kind: " + s);
}

inline std::string to_string(AugmenterKind k) {
  switch (k) {
    case AugmenterKind::kNone: return "none";
    case AugmenterKind::kGaussianDropout: return "gaussian_dropout";
    case AugmenterKind::kBernoulliDropout: return "bernoulli_dropout";
    case AugmenterKind::kWordDropout: return "word_dropout";
    case AugmenterKind::kPriorAug: return "prior_aug";
    case AugmenterKind::kAdversarial: return "adversarial";
    case AugmenterKind::kSwep: return "swep";
  }
  return "none";
}

struct AugmenterConfig {
  AugmenterKind kind = AugmenterKind::kNone;
  double p = 0.1;            // dropout probability
  int adv_steps = 5;
  double adv_step_size = 0.1;
  double adv_radius = 0.5;

  void validate() const {
    if (p < 0.0 || p >= 1.0)
      throw ConfigError("augmenter: p must be in [0, 1)");
    if (adv_steps < 1) throw ConfigError("augmenter: adv_steps must be >= 1");
    if (adv_radius <= 0.0)
      throw ConfigError("augmenter: adv_radius must be positive");
    if (adv_step_size <= 0.0)
      throw ConfigError("augmenter: adv_step_size must be positive");
  }
};

enum class DropoutMaskKind { kGaussian, kBernoulli };

// Gaussian: mask = 1 + sqrt((1-p)/p) * eps, matching a N(1, (1-p)/p) draw.
// Bernoulli: mask in {0, 1/(1-p)} with P(zero) = p (inverted scaling, so the
// mask has unit mean and needs no eval-time rescale).
template <class Real>
Matrix<Real> dropout_mask(DropoutMaskKind kind, double p, Eigen::Index rows,
                          Eigen::Index cols, Rng& rng) {
  Matrix<Real> mask(rows, cols);
  if (kind == DropoutMaskKind::kGaussian) {
    if (p <= 0.0 || p >= 1.0)
      throw ConfigError("gaussian dropout: p must be in (0, 1)");
    const Real s = static_cast<Real>(std::sqrt((1.0 - p) / p));
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j)
        mask(i, j) = Real(1) + s * static_cast<Real>(rng.normal());
  } else {
    if (p < 0.0 || p >= 1.0)
      throw ConfigError("bernoulli dropout: p must be in [0, 1)");
    const Real keep = static_cast<Real>(1.0 / (1.0 - p));
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j)
        mask(i, j) = rng.uniform() < p ? Real(0) : keep;
  }
  return mask;
}

// Whole-token zeroing: each unpadded token is zeroed with probability p,
// survivors are left unscaled. Returns the row mask actually applied.
template <class Real>
Matrix<Real> word_dropout_mask(double p, Eigen::Index rows, Eigen::Index cols,
                               const std::vector<std::uint8_t>& padding_mask,
                               Rng& rng) {
  if (p < 0.0 || p >= 1.0)
    throw ConfigError("word dropout: p must be in [0, 1)");
  if (static_cast<Eigen::Index>(padding_mask.size()) != rows)
    throw ShapeError("word dropout: padding mask length mismatch");
  Matrix<Real> mask = Matrix<Real>::Ones(rows, cols);
  for (Eigen::Index t = 0; t < rows; ++t) {
    if (!padding_mask[t]) continue;  // padded rows untouched
    if (rng.uniform() < p) mask.row(t).setZero();
  }
  return mask;
}

template <class Real>
Var<Real> word_dropout(Var<Real> embeddings, double p,
                       const std::vector<std::uint8_t>& padding_mask,
                       Rng& rng) {
  auto mask = word_dropout_mask<Real>(p, embeddings.rows(), embeddings.cols(),
                                      padding_mask, rng);
  return ad::cmul(embeddings, mask);
}

// Iterative normalized-gradient ascent on the loss within an L2 ball:
//   delta <- Proj_radius(delta + step * g / ||g||), starting from delta = 0.
// `loss_gradient_fn` returns d(negative log-likelihood)/d(embeddings) at a
// candidate point; padded rows never move. Returns e + delta.
template <class Real>
Matrix<Real> adversarial_perturb(
    const Matrix<Real>& embeddings,
    const std::function<Matrix<Real>(const Matrix<Real>&)>& loss_gradient_fn,
    int steps, double step_size, double radius,
    const std::vector<std::uint8_t>& padding_mask) {
  if (steps < 1) throw ConfigError("adversarial_perturb: steps must be >= 1");
  if (radius <= 0.0)
    throw ConfigError("adversarial_perturb: radius must be positive");
  if (static_cast<Eigen::Index>(padding_mask.size()) != embeddings.rows())
    throw ShapeError("adversarial_perturb: padding mask length mismatch");

  Matrix<Real> delta = Matrix<Real>::Zero(embeddings.rows(), embeddings.cols());
  for (int it = 0; it < steps; ++it) {
    Matrix<Real> g = loss_gradient_fn(embeddings + delta);
    if (!g.allFinite())
      throw ShapeError("adversarial_perturb: non-finite gradient at step " +
                       std::to_string(it));
    for (Eigen::Index t = 0; t < g.rows(); ++t)
      if (!padding_mask[t]) g.row(t).setZero();
    const double norm = static_cast<double>(g.norm());
    if (norm < 1e-12) continue;  // no ascent direction
    delta += (static_cast<Real>(step_size / norm) * g.array()).matrix();
    const double dnorm = static_cast<double>(delta.norm());
    if (dnorm > radius)
      delta *= static_cast<Real>(radius / dnorm);
  }
  return embeddings + delta;
}

}  // namespace swep::baselines
