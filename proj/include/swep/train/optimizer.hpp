#pragma once

#include <cmath>
#include <unordered_map>
#include <vector>

#include "swep/common.hpp"
#include "swep/core/tape.hpp"

namespace swep::train {

using ad::Matrix;
using ad::Parameter;

// Scales all gradients so their global L2 norm is at most `max_norm`.
// Returns the pre-clip norm.
template <class Real>
double clip_global_norm(const std::vector<Parameter<Real>*>& params,
                        double max_norm) {
  double sq = 0.0;
  for (const auto* p : params) sq += static_cast<double>(p->grad.squaredNorm());
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const Real s = static_cast<Real>(max_norm / norm);
    for (auto* p : params) p->grad *= s;
  }
  return norm;
}

// Adam with decoupled weight decay:
//   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta.
template <class Real>
class AdamW {
 public:
  AdamW(double lr, double weight_decay = 0.0, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (lr <= 0.0) throw ConfigError("adamw: learning rate must be positive");
    if (weight_decay < 0.0) throw ConfigError("adamw: weight decay must be >= 0");
  }

  void step(const std::vector<Parameter<Real>*>& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto* p : params) {
      if (!p->trainable) continue;
      State& s = state(p);
      s.m = static_cast<Real>(beta1_) * s.m +
            static_cast<Real>(1.0 - beta1_) * p->grad;
      s.v = (static_cast<Real>(beta2_) * s.v.array() +
             static_cast<Real>(1.0 - beta2_) * p->grad.array().square())
                .matrix();
      const auto m_hat = s.m.array() / static_cast<Real>(bc1);
      const auto v_hat = s.v.array() / static_cast<Real>(bc2);
      p->value.array() -= static_cast<Real>(lr_) * m_hat /
                          (v_hat.sqrt() + static_cast<Real>(eps_));
      if (wd_ > 0.0)
        p->value.array() -= static_cast<Real>(lr_ * wd_) * p->value.array();
    }
  }

  long long step_count() const { return t_; }

 private:
  struct State {
    Matrix<Real> m, v;
  };

  State& state(Parameter<Real>* p) {
    auto it = states_.find(p);
    if (it == states_.end()) {
      State s;
      s.m = Matrix<Real>::Zero(p->value.rows(), p->value.cols());
      s.v = Matrix<Real>::Zero(p->value.rows(), p->value.cols());
      it = states_.emplace(p, std::move(s)).first;
    }
    return it->second;
  }

  double lr_, wd_, beta1_, beta2_, eps_;
  long long t_ = 0;
  std::unordered_map<Parameter<Real>*, State> states_;
};

}  // namespace swep::train
