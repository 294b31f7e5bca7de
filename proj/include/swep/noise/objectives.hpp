#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "swep/common.hpp"
#include "swep/core/tape.hpp"
#include "swep/noise/generator.hpp"

namespace swep::objectives {

using ad::Matrix;
using ad::Tape;
using ad::Var;

// Weight schedule for the KL term. `linear_anneal` decays to zero at
// `zero_epoch` and stays there.
struct BetaSchedule {
  enum class Kind { kConstant, kLinearAnneal };
  Kind kind = Kind::kConstant;
  double beta0 = 1.0;
  double zero_epoch = 1.0;

  void validate() const {
    if (beta0 < 0.0) throw ConfigError("beta schedule: beta0 must be >= 0");
    if (kind == Kind::kLinearAnneal && zero_epoch <= 0.0)
      throw ConfigError("beta schedule: zero_epoch must be positive");
  }
};

inline BetaSchedule::Kind beta_kind_from_string(const std::string& s) {
  if (s == "constant") return BetaSchedule::Kind::kConstant;
  if (s == "linear_anneal") return BetaSchedule::Kind::kLinearAnneal;
  throw ConfigError("unknown beta schedule kind: " + s);
}

inline std::string to_string(BetaSchedule::Kind k) {
  return k == BetaSchedule::Kind::kConstant ? "constant" : "linear_anneal";
}

inline double beta_at(const BetaSchedule& schedule, double epoch) {
  schedule.validate();
  if (epoch < 0.0) throw ConfigError("beta_at: epoch must be >= 0");
  if (schedule.kind == BetaSchedule::Kind::kConstant) return schedule.beta0;
  return std::max(0.0, schedule.beta0 * (1.0 - epoch / schedule.zero_epoch));
}

// Closed-form KL between the per-token diagonal Gaussians q = N(mu, sigma2)
// and the prior N(prior.mean, alpha I), summed over unpadded tokens and
// dimensions:
//   0.5 * [ (sigma2 + (mu - m)^2) / alpha - 1 - ln(sigma2 / alpha) ].
template <class Real>
Var<Real> kl_to_prior(const noise::NoiseParams<Real>& params,
                      const noise::PriorConfig& prior,
                      const std::vector<std::uint8_t>& padding_mask) {
  prior.validate();
  if ((params.sigma2.value().array() <= Real(0)).any())
    throw ShapeError("kl_to_prior: non-positive variance");
  if (static_cast<Eigen::Index>(padding_mask.size()) != params.mu.rows())
    throw ShapeError("kl_to_prior: padding mask length mismatch");
  const Real inv_alpha = static_cast<Real>(1.0 / prior.alpha);
  const Real log_alpha = static_cast<Real>(std::log(prior.alpha));
  auto centered = ad::add_scalar(params.mu, static_cast<Real>(-prior.mean));
  auto ratio = ad::scale(ad::add(params.sigma2, ad::square(centered)), inv_alpha);
  auto elementwise = ad::add_scalar(ad::sub(ratio, ad::vlog(params.sigma2)),
                                    log_alpha - Real(1));
  Matrix<Real> mask2d =
      Matrix<Real>::Zero(params.mu.rows(), params.mu.cols());
  for (Eigen::Index t = 0; t < params.mu.rows(); ++t)
    if (padding_mask[t]) mask2d.row(t).setOnes();
  return ad::scale(ad::sum(ad::cmul(elementwise, mask2d)), Real(0.5));
}

// Non-graph overload for analysis and tests.
template <class Real>
double kl_to_prior_value(const Matrix<Real>& mu, const Matrix<Real>& sigma2,
                         const noise::PriorConfig& prior,
                         const std::vector<std::uint8_t>& padding_mask) {
  prior.validate();
  if ((sigma2.array() <= Real(0)).any())
    throw ShapeError("kl_to_prior: non-positive variance");
  double total = 0.0;
  for (Eigen::Index t = 0; t < mu.rows(); ++t) {
    if (!padding_mask[t]) continue;
    for (Eigen::Index i = 0; i < mu.cols(); ++i) {
      const double s2 = static_cast<double>(sigma2(t, i));
      const double m = static_cast<double>(mu(t, i)) - prior.mean;
      total += 0.5 * ((s2 + m * m) / prior.alpha - 1.0 -
                      std::log(s2 / prior.alpha));
    }
  }
  return total;
}

// L_noise = E_q[log p(y | x, z)] - beta * KL, with the expectation estimated
// by the single reparameterized sample already inside `loglik_perturbed`.
// beta = 1 recovers the evidence lower bound; beta = 0 disables the KL term.
template <class Real>
Var<Real> noise_objective(Var<Real> loglik_perturbed, Var<Real> kl, Real beta) {
  if (beta < Real(0)) throw ConfigError("noise_objective: beta must be >= 0");
  return ad::sub(loglik_perturbed, ad::scale(kl, beta));
}

// L = lambda * L_MLE + (1 - lambda) * L_noise (maximized; the trainer negates).
template <class Real>
Var<Real> combined_objective(Var<Real> l_mle, Var<Real> l_noise, Real lambda) {
  if (!(lambda > Real(0) && lambda < Real(1)))
    throw ConfigError("combined_objective: lambda must be in (0, 1)");
  return ad::add(ad::scale(l_mle, lambda), ad::scale(l_noise, Real(1) - lambda));
}

// One step's loss summary; `combined` is the minimized objective
// -(lambda * L_MLE + (1 - lambda) * L_noise), or its ablation variant.
struct LossBreakdown {
  long long step = 0;
  double l_mle = 0.0;
  double loglik_perturbed = 0.0;
  double kl_total = 0.0;
  double beta = 0.0;
  double lambda = 0.0;
  double combined = 0.0;
};

}  // namespace swep::objectives
