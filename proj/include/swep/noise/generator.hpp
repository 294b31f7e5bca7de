#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "swep/common.hpp"
#include "swep/core/rng.hpp"
#include "swep/core/tape.hpp"
#include "swep/model/qa_model.hpp"

namespace swep::noise {

using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Var;

// Prior over multiplicative noise: N(mean, alpha * I) per dimension.
// mean is 1 for the multiplicative scheme and 0 for the additive variant.
struct PriorConfig {
  double alpha = 0.1;
  double mean = 1.0;

  void validate() const {
    if (alpha <= 0.0) throw ConfigError("prior: alpha must be positive");
  }
};

template <class Real>
struct NoiseParams {
  Var<Real> mu;      // T x d
  Var<Real> sigma2;  // T x d, strictly positive (softplus + floor)
};

inline constexpr double kVarianceFloor = 1e-6;

// Per-token Gaussian noise parameters from a two-layer MLP over hidden
// states: hidden -> d (ReLU) -> 2d, split into mu and raw variance.
// Parameter count is 3d^2 + 3d.
template <class Real>
class NoiseGenerator {
 public:
  using Mat = Matrix<Real>;

  explicit NoiseGenerator(int d) : d_(d) {
    if (d < 1) throw ConfigError("noise generator: d must be >= 1");
    w1_ = Parameter<Real>("noise_gen.w1", Mat::Zero(d, d));
    b1_ = Parameter<Real>("noise_gen.b1", Mat::Zero(1, d));
    w2_ = Parameter<Real>("noise_gen.w2", Mat::Zero(d, 2 * d));
    b2_ = Parameter<Real>("noise_gen.b2", Mat::Zero(1, 2 * d));
  }

  void init_weights(Rng& rng, Real std_dev = Real(0.02)) {
    for (Parameter<Real>* p : {&w1_, &w2_}) {
      for (Eigen::Index i = 0; i < p->value.rows(); ++i)
        for (Eigen::Index j = 0; j < p->value.cols(); ++j)
          p->value(i, j) = std_dev * static_cast<Real>(rng.normal());
    }
    b1_.value.setZero();
    b2_.value.setZero();
  }

  int width() const { return d_; }

  long long param_count() const {
    long long n = 0;
    for (const Parameter<Real>* p : {&w1_, &b1_, &w2_, &b2_})
      n += static_cast<long long>(p->value.size());
    return n;
  }

  std::vector<Parameter<Real>*> params() {
    return {&w1_, &b1_, &w2_, &b2_};
  }

  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }

  // Zero the gradient of the mu half of the output head; used to assert the
  // fixed-mu ablation leaves that slice untouched.
  Mat mu_head_grad() const {
    Mat g(d_ + 1, d_);
    g.topRows(d_) = w2_.grad.leftCols(d_);
    g.row(d_) = b2_.grad.leftCols(d_);
    return g;
  }

  Mat sigma_head_grad() const {
    Mat g(d_ + 1, d_);
    g.topRows(d_) = w2_.grad.rightCols(d_);
    g.row(d_) = b2_.grad.rightCols(d_);
    return g;
  }

  // mu_t, sigma2_t = MLP(h_t). With `stop_gradient` set (the default), the
  // MLP input is severed from the graph, so nothing flows back into the
  // encoder through this path.
  NoiseParams<Real> infer(model::LeafCache<Real>& leaf, Var<Real> hidden,
                          bool stop_gradient = true) {
    if (hidden.cols() != d_)
      throw ShapeError("noise generator: hidden width != d");
    if (!hidden.value().allFinite())
      throw ShapeError("noise generator: non-finite hidden states");
    Var<Real> in = stop_gradient ? ad::detach(hidden) : hidden;
    auto h1 = ad::relu(ad::add_rowvec(ad::matmul(in, leaf(w1_)), leaf(b1_)));
    auto out = ad::add_rowvec(ad::matmul(h1, leaf(w2_)), leaf(b2_));
    NoiseParams<Real> p;
    p.mu = ad::slice_cols(out, 0, d_);
    p.sigma2 = ad::add_scalar(ad::softplus(ad::slice_cols(out, d_, d_)),
                              static_cast<Real>(kVarianceFloor));
    return p;
  }

 private:
  int d_;
  Parameter<Real> w1_, b1_, w2_, b2_;
};

// z = mu + sqrt(sigma2) .* epsilon (reparameterized; epsilon injected).
template <class Real, class Derived>
Var<Real> sample_noise(const NoiseParams<Real>& params,
                       const Eigen::MatrixBase<Derived>& epsilon_in) {
  Matrix<Real> epsilon(epsilon_in);
  if (epsilon.rows() != params.mu.rows() || epsilon.cols() != params.mu.cols())
    throw ShapeError("sample_noise: epsilon shape mismatch");
  return ad::add(params.mu, ad::cmul(ad::vsqrt(params.sigma2), epsilon));
}

// Perturbed embeddings: e .* z on unpadded positions; padded rows pass
// through unchanged.
template <class Real>
Var<Real> apply_noise(Var<Real> embeddings, Var<Real> z,
                      const std::vector<std::uint8_t>& padding_mask) {
  if (embeddings.rows() != z.rows() || embeddings.cols() != z.cols())
    throw ShapeError("apply_noise: shape mismatch");
  if (static_cast<Eigen::Index>(padding_mask.size()) != embeddings.rows())
    throw ShapeError("apply_noise: padding mask length mismatch");
  Matrix<Real> on = Matrix<Real>::Zero(embeddings.rows(), embeddings.cols());
  Matrix<Real> off = Matrix<Real>::Ones(embeddings.rows(), embeddings.cols());
  for (Eigen::Index t = 0; t < embeddings.rows(); ++t) {
    if (padding_mask[t]) {
      on.row(t).setOnes();
      off.row(t).setZero();
    }
  }
  auto perturbed = ad::cmul(ad::mul(embeddings, z), on);
  auto passthrough = ad::cmul(embeddings, off);
  return ad::add(perturbed, passthrough);
}

// Additive variant used by the ablation: e + z on unpadded positions.
template <class Real>
Var<Real> apply_noise_additive(Var<Real> embeddings, Var<Real> z,
                               const std::vector<std::uint8_t>& padding_mask) {
  if (embeddings.rows() != z.rows() || embeddings.cols() != z.cols())
    throw ShapeError("apply_noise_additive: shape mismatch");
  Matrix<Real> on = Matrix<Real>::Zero(embeddings.rows(), embeddings.cols());
  for (Eigen::Index t = 0; t < embeddings.rows(); ++t)
    if (padding_mask[t]) on.row(t).setOnes();
  return ad::add(embeddings, ad::cmul(z, on));
}

// Draw from the prior N(mean, alpha I): z = mean + sqrt(alpha) * epsilon.
// Plain matrix; prior draws carry no gradient.
template <class Real>
Matrix<Real> sample_prior_noise(const PriorConfig& prior, Eigen::Index rows,
                                Eigen::Index cols, const Matrix<Real>& epsilon) {
  prior.validate();
  if (epsilon.rows() != rows || epsilon.cols() != cols)
    throw ShapeError("sample_prior_noise: epsilon shape mismatch");
  const Real scale = static_cast<Real>(std::sqrt(prior.alpha));
  return (epsilon.array() * scale + static_cast<Real>(prior.mean)).matrix();
}

template <class Real>
Matrix<Real> standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix<Real> m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      m(i, j) = static_cast<Real>(rng.normal());
  return m;
}

// Scale-and-translate of a unit-mean dropout mask drawn from N(1, alpha):
// (sigma / sqrt(alpha)) * mask + (mu - sigma / sqrt(alpha)), which follows
// N(mu, sigma^2). Expresses the learned noise as an input-dependent Gaussian
// dropout.
inline double noise_from_dropout_mask(double mask, double mu, double sigma,
                                      double alpha) {
  const double s = sigma / std::sqrt(alpha);
  return s * mask + (mu - s);
}

template <class Real>
Matrix<Real> noise_from_dropout_mask(const Matrix<Real>& mask,
                                     const Matrix<Real>& mu,
                                     const Matrix<Real>& sigma, Real alpha) {
  if (mask.rows() != mu.rows() || mask.cols() != mu.cols() ||
      sigma.rows() != mu.rows() || sigma.cols() != mu.cols())
    throw ShapeError("noise_from_dropout_mask: shape mismatch");
  const Real inv = Real(1) / static_cast<Real>(std::sqrt(alpha));
  Matrix<Real> s = sigma * inv;
  return (s.array() * mask.array() + (mu.array() - s.array())).matrix();
}

}  // namespace swep::noise
