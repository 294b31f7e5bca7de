#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "swep/common.hpp"

namespace swep::ad {

template <class Real>
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;

// A named dense tensor with its gradient accumulator.
template <class Real>
struct Parameter {
  std::string name;
  Matrix<Real> value;
  Matrix<Real> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Matrix<Real> v)
      : name(std::move(n)),
        value(std::move(v)),
        grad(Matrix<Real>::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(); }
  Eigen::Index size() const { return value.size(); }
};

// Reverse-mode tape over dense matrices. Nodes are appended in forward order,
// so reverse iteration is a valid topological order for backpropagation.
// A tape is single-use: build one forward graph, call backward() once.
template <class Real>
class Tape {
 public:
  using Mat = Matrix<Real>;
  // Backward hook: given (tape, node id), read grad(id) and accumulate into
  // the grads of earlier nodes and/or Parameters.
  using BackFn = std::function<void(Tape&, int)>;

  int push(Mat value, BackFn back = nullptr) {
    nodes_.push_back(Node{std::move(value), Mat(), false, std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Mat& val(int id) const { return nodes_[id].value; }

  bool has_grad(int id) const { return nodes_[id].grad_set; }

  // Gradient of the last backward() loss w.r.t. node `id`; zeros if the node
  // is not an ancestor of the loss.
  Mat grad_of(int id) const {
    if (nodes_[id].grad_set) return nodes_[id].grad;
    return Mat::Zero(nodes_[id].value.rows(), nodes_[id].value.cols());
  }

  // Accumulate `g` into the grad buffer of node `id`.
  template <class Expr>
  void accum(int id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.grad_set) {
      n.grad = Mat::Zero(n.value.rows(), n.value.cols());
      n.grad_set = true;
    }
    n.grad += g;
  }

  void backward(int loss_id) {
    const Node& loss = nodes_[loss_id];
    if (loss.value.rows() != 1 || loss.value.cols() != 1)
      throw ShapeError("backward: loss node must be 1x1");
    accum(loss_id, Mat::Ones(1, 1));
    for (int id = loss_id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.grad_set && n.back) n.back(*this, id);
    }
  }

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool grad_set = false;
    BackFn back;
  };
  std::vector<Node> nodes_;
};

// Lightweight handle to a tape node.
template <class Real>
struct Var {
  Tape<Real>* tape = nullptr;
  int id = -1;

  const Matrix<Real>& value() const { return tape->val(id); }
  Matrix<Real> grad() const { return tape->grad_of(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

namespace detail {

template <class Real>
void check_same_tape(const Var<Real>& a, const Var<Real>& b, const char* op) {
  if (a.tape != b.tape)
    throw ShapeError(std::string(op) + ": operands belong to different tapes");
}

template <class Real>
void check_same_shape(const Var<Real>& a, const Var<Real>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch (" +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
}

}  // namespace detail

// ---- leaves ----------------------------------------------------------------

template <class Real, class Derived>
Var<Real> constant(Tape<Real>& t, const Eigen::MatrixBase<Derived>& v) {
  return {&t, t.push(Matrix<Real>(v))};
}

template <class Real>
Var<Real> leaf(Tape<Real>& t, Parameter<Real>& p) {
  Parameter<Real>* pp = &p;
  int id = t.push(p.value, [pp](Tape<Real>& tt, int self) {
    pp->grad += tt.grad_of(self);
  });
  return {&t, id};
}

// Value pass-through that blocks gradient flow.
template <class Real>
Var<Real> detach(const Var<Real>& a) {
  return constant(*a.tape, a.value());
}

// ---- elementwise -----------------------------------------------------------

template <class Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
  detail::check_same_tape(a, b, "add");
  detail::check_same_shape(a, b, "add");
  Tape<Real>& t = *a.tape;
  int ia = a.id, ib = b.id;
  int id = t.push(a.value() + b.value(), [ia, ib](Tape<Real>& tt, int self) {
    tt.accum(ia, tt.grad_of(self));
    tt.accum(ib, tt.grad_of(self));
  });
  return {&t, id};
}

// Adds a 1 x cols row vector to every row of `a`.
template <class Real>
Var<Real> add_rowvec(const Var<Real>& a, const Var<Real>& b) {
  detail::check_same_tape(a, b, "add_rowvec");
  if (b.rows() != 1 || b.cols() != a.cols())
    throw ShapeError("add_rowvec: bias must be 1 x cols of the input");
  Tape<Real>& t = *a.tape;
  int ia = a.id, ib = b.id;
  Matrix<Real> out = a.value();
  out.rowwise() += b.value().row(0);
  int id = t.push(std::move(out), [ia, ib](Tape<Real>& tt, int self) {
    tt.accum(ia, tt.grad_of(self));
    tt.accum(ib, tt.grad_of(self).colwise().sum());
  });
  return {&t, id};
}

template <class Real>
Var<Real> sub(const Var<Real>& a, const Var<Real>& b) {
  detail::check_same_tape(a, b, "sub");
  detail::check_same_shape(a, b, "sub");
  Tape<Real>& t = *a.tape;
  int ia = a.id, ib = b.id;
  int id = t.push(a.value() - b.value(), [ia, ib](Tape<Real>& tt, int self) {
    tt.accum(ia, tt.grad_of(self));
    tt.accum(ib, -tt.grad_of(self));
  });
  return {&t, id};
}

template <class Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b) {
  detail::check_same_tape(a, b, "mul");
  detail::check_same_shape(a, b, "mul");
  Tape<Real>& t = *a.tape;
  int ia = a.id, ib = b.id;
  int id = t.push(a.value().cwiseProduct(b.value()),
                  [ia, ib](Tape<Real>& tt, int self) {
                    tt.accum(ia, tt.grad_of(self).cwiseProduct(tt.val(ib)));
                    tt.accum(ib, tt.grad_of(self).cwiseProduct(tt.val(ia)));
                  });
  return {&t, id};
}

// Elementwise product with a fixed matrix (masks, injected noise draws).
template <class Real, class Derived>
Var<Real> cmul(const Var<Real>& a, const Eigen::MatrixBase<Derived>& m_in) {
  Matrix<Real> m(m_in);
  if (a.rows() != m.rows() || a.cols() != m.cols())
    throw ShapeError("cmul: shape mismatch");
  Tape<Real>& t = *a.tape;
  int ia = a.id;
  Matrix<Real> out = a.value().cwiseProduct(m);
  int id = t.push(std::move(out), [ia, m](Tape<Real>& tt, int self) {
    tt.accum(ia, tt.grad_of(self).cwiseProduct(m));
  });
  return {&t, id};
}

template <class Real>
Var<Real> scale(const Var<Real>& a, Real s) {
  Tape<Real>& t = *a.tape;
  int ia = a.id;
  int id = t.push(a.value() * s, [ia, s](Tape<Real>& tt, int self) {
    tt.accum(ia, tt.grad_of(self) * s);
  });
  return {&t, id};
}

template <class Real>
Var<Real> add_scalar(const Var<Real>& a, Real s) {
  Tape<Real>& t = *a.tape;
  int ia = a.id;
  int id = t.push((a.value().array() + s).matrix(),
                  [ia](Tape<Real>& tt, int self) {
                    tt.accum(ia, tt.grad_of(self));
                  });
  return {&t, id};
}

template <class Real>
Var<Real> neg(const Var<Real>& a) {
  return scale(a, Real(-1));
}

template <class Real>
Var<Real> relu(const Var<Real>& a) {
  Tape<Real>& t = *a.tape;
  int ia = a.id;
  int id = t.push(a.value().cwiseMax(Real(0)), [ia](Tape<Real>& tt, int self) {
    Matrix<Real> mask =
        (tt.val(ia).array() > Real(0)).template cast<Real>().matrix();
    tt.accum(ia, tt.grad_of(self).cwiseProduct(mask));
  });
  return {&t, id};
}

template <class Real>
Var<Real> softplus(const Var<Real>& a) {
  Tape<Real>& t = *a.tape;
  int ia = a.id;
  Matrix<Real> out = a.value().unaryExpr([](Real x) {
    // log(1 + e^x), stable on both tails
    return x > Real(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  });
  int id = t.push(std::move(out), [ia](Tape<Real>& tt, int self) {
    Matrix<Real> sig = tt.val(ia).unaryExpr([](Real x) {
      return x >= Real(0) ? Real(1) / (Real(1) + std::exp(-x))
                          : std::exp(x) / (Real(1) + std::exp(x));
    });
    tt.accum(ia, tt.grad_of(self).cwiseProduct(sig));
  });
  return {&t, id};
}

template <class Real>
Var<Real> vsqrt(const Var<Real>& a) {
  if ((a.value().array() < Real(0)).any())
    throw ShapeError("vsqrt: negative input");
  Tape<Real>& t = *a.tape;
  int ia = a.id;
  int id = t.push(a.value().cwiseSqrt(), [ia](Tape<Real>& tt, int self) {
    tt.accum(ia, (tt.grad_of(self).array() * Real(0.5) /
                  tt.val(self).array())
                     .matrix());
  });
  return {&t, id};
}

template <class Real>
Var<Real> vlog(const Var<Real>& a) {
  if ((a.value().array() <= Real(0)).any())
    throw ShapeError("vlog: non-positive input");
  Tape<Real>& t = *a.tape;
  int ia = a.id;
  int id = t.push(a.value().array().log().matrix(),
                  [ia](Tape<Real>& tt, int self) {
                    tt.accum(ia, (tt.grad_of(self).array() /
                                  tt.val(ia).array())
                                     .matrix());
                  });
  return {&t, id};
}

template <class Real>
Var<Real> square(const Var<Real>& a) {
  Tape<Real>& t = *a.tape;
  int ia = a.id;
  int id = t.push(a.value().array().square().matrix(),
                  [ia](Tape<Real>& tt, int self) {
                    tt.accum(ia, (tt.grad_of(self).array() * Real(2) *
                                  tt.val(ia).array())
                                     .matrix());
                  });
  return {&t, id};
}

// ---- matrix ops ------------------------------------------------------------

template <class Real>
Var<Real> matmul(const Var<Real>& a, const Var<Real>& b) {
  detail::check_same_tape(a, b, "matmul");
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dim mismatch");
  Tape<Real>& t = *a.tape;
  int ia = a.id, ib = b.id;
  int id = t.push(a.value() * b.value(), [ia, ib](Tape<Real>& tt, int self) {
    tt.accum(ia, tt.grad_of(self) * tt.val(ib).transpose());
    tt.accum(ib, tt.val(ia).transpose() * tt.grad_of(self));
  });
  return {&t, id};
}

template <class Real>
Var<Real> transpose(const Var<Real>& a) {
  Tape<Real>& t = *a.tape;
  int ia = a.id;
  int id = t.push(a.value().transpose(), [ia](Tape<Real>& tt, int self) {
    tt.accum(ia, tt.grad_of(self).transpose());
  });
  return {&t, id};
}

template <class Real>
Var<Real> slice_cols(const Var<Real>& a, Eigen::Index c0, Eigen::Index n) {
  if (c0 < 0 || n < 0 || c0 + n > a.cols())
    throw ShapeError("slice_cols: range out of bounds");
  Tape<Real>& t = *a.tape;
  int ia = a.id;
  Eigen::Index rows = a.rows();
  int id = t.push(a.value().block(0, c0, rows, n),
                  [ia, c0, n, rows](Tape<Real>& tt, int self) {
                    Matrix<Real> g = Matrix<Real>::Zero(rows, tt.val(ia).cols());
                    g.block(0, c0, rows, n) = tt.grad_of(self);
                    tt.accum(ia, g);
                  });
  return {&t, id};
}

template <class Real>
Var<Real> slice_rows(const Var<Real>& a, Eigen::Index r0, Eigen::Index n) {
  if (r0 < 0 || n < 0 || r0 + n > a.rows())
    throw ShapeError("slice_rows: range out of bounds");
  Tape<Real>& t = *a.tape;
  int ia = a.id;
  Eigen::Index cols = a.cols();
  int id = t.push(a.value().block(r0, 0, n, cols),
                  [ia, r0, n, cols](Tape<Real>& tt, int self) {
                    Matrix<Real> g = Matrix<Real>::Zero(tt.val(ia).rows(), cols);
                    g.block(r0, 0, n, cols) = tt.grad_of(self);
                    tt.accum(ia, g);
                  });
  return {&t, id};
}

template <class Real>
Var<Real> concat_cols(const std::vector<Var<Real>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: empty input");
  Tape<Real>& t = *parts[0].tape;
  Eigen::Index rows = parts[0].rows(), cols = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  for (const auto& p : parts) {
    detail::check_same_tape(parts[0], p, "concat_cols");
    if (p.rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    ids.push_back(p.id);
    widths.push_back(p.cols());
    cols += p.cols();
  }
  Matrix<Real> out(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.block(0, c, rows, p.cols()) = p.value();
    c += p.cols();
  }
  int id = t.push(std::move(out),
                  [ids, widths, rows](Tape<Real>& tt, int self) {
                    Eigen::Index c = 0;
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      tt.accum(ids[k],
                               tt.grad_of(self).block(0, c, rows, widths[k]));
                      c += widths[k];
                    }
                  });
  return {&t, id};
}

// Rows of `table` selected by token ids; backward scatter-adds, so repeated
// ids accumulate.
template <class Real>
Var<Real> gather_rows(const Var<Real>& table, std::vector<int> ids) {
  Tape<Real>& t = *table.tape;
  const Eigen::Index n_rows = table.rows();
  for (int i : ids)
    if (i < 0 || i >= n_rows)
      throw ShapeError("gather_rows: id " + std::to_string(i) +
                       " out of range [0, " + std::to_string(n_rows) + ")");
  int it = table.id;
  Matrix<Real> out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  int id = t.push(std::move(out), [it, ids](Tape<Real>& tt, int self) {
    Matrix<Real> g = Matrix<Real>::Zero(tt.val(it).rows(), tt.val(it).cols());
    for (std::size_t i = 0; i < ids.size(); ++i)
      g.row(ids[i]) += tt.grad_of(self).row(static_cast<Eigen::Index>(i));
    tt.accum(it, g);
  });
  return {&t, id};
}

// ---- reductions ------------------------------------------------------------

template <class Real>
Var<Real> sum(const Var<Real>& a) {
  Tape<Real>& t = *a.tape;
  int ia = a.id;
  Matrix<Real> out(1, 1);
  out(0, 0) = a.value().sum();
  int id = t.push(std::move(out), [ia](Tape<Real>& tt, int self) {
    const Real g = tt.grad_of(self)(0, 0);
    tt.accum(ia, Matrix<Real>::Constant(tt.val(ia).rows(), tt.val(ia).cols(), g));
  });
  return {&t, id};
}

template <class Real>
Var<Real> mean(const Var<Real>& a) {
  const Real n = static_cast<Real>(a.value().size());
  return scale(sum(a), Real(1) / n);
}

// ---- softmax family --------------------------------------------------------

// Row-wise softmax over columns where valid[c] != 0; invalid columns get
// probability exactly zero. Used for attention with padded keys masked out.
template <class Real>
Var<Real> row_softmax_masked(const Var<Real>& a,
                             const std::vector<std::uint8_t>& valid) {
  if (static_cast<Eigen::Index>(valid.size()) != a.cols())
    throw ShapeError("row_softmax_masked: mask length != cols");
  bool any_valid = false;
  for (auto v : valid) any_valid |= (v != 0);
  if (!any_valid) throw ShapeError("row_softmax_masked: no valid column");
  Tape<Real>& t = *a.tape;
  int ia = a.id;
  const auto& x = a.value();
  Matrix<Real> y = Matrix<Real>::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    Real m = -std::numeric_limits<Real>::infinity();
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      if (valid[c]) m = std::max(m, x(r, c));
    Real z = 0;
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      if (valid[c]) {
        y(r, c) = std::exp(x(r, c) - m);
        z += y(r, c);
      }
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      if (valid[c]) y(r, c) /= z;
  }
  int id = t.push(std::move(y), [ia](Tape<Real>& tt, int self) {
    const auto& yv = tt.val(self);
    const auto& g = tt.grad_of(self);
    Matrix<Real> gx(yv.rows(), yv.cols());
    for (Eigen::Index r = 0; r < yv.rows(); ++r) {
      const Real dot = g.row(r).cwiseProduct(yv.row(r)).sum();
      gx.row(r) =
          (g.row(r).array() - dot).matrix().cwiseProduct(yv.row(r));
    }
    tt.accum(ia, gx);
  });
  return {&t, id};
}

// log softmax(a)[idx] for a 1 x T row vector, restricted to valid positions.
template <class Real>
Var<Real> log_softmax_pick(const Var<Real>& a,
                           const std::vector<std::uint8_t>& valid, int idx) {
  if (a.rows() != 1) throw ShapeError("log_softmax_pick: expects a row vector");
  if (static_cast<Eigen::Index>(valid.size()) != a.cols())
    throw ShapeError("log_softmax_pick: mask length != cols");
  if (idx < 0 || idx >= a.cols() || !valid[idx])
    throw ShapeError("log_softmax_pick: picked index " + std::to_string(idx) +
                     " is masked or out of range");
  Tape<Real>& t = *a.tape;
  int ia = a.id;
  const auto& x = a.value();
  Real m = -std::numeric_limits<Real>::infinity();
  for (Eigen::Index c = 0; c < x.cols(); ++c)
    if (valid[c]) m = std::max(m, x(0, c));
  Real z = 0;
  for (Eigen::Index c = 0; c < x.cols(); ++c)
    if (valid[c]) z += std::exp(x(0, c) - m);
  const Real lse = m + std::log(z);
  Matrix<Real> out(1, 1);
  out(0, 0) = x(0, idx) - lse;
  int id = t.push(std::move(out), [ia, valid, idx, lse](Tape<Real>& tt, int self) {
    const Real g = tt.grad_of(self)(0, 0);
    const auto& xv = tt.val(ia);
    Matrix<Real> gx = Matrix<Real>::Zero(1, xv.cols());
    for (Eigen::Index c = 0; c < xv.cols(); ++c)
      if (valid[c]) gx(0, c) = -g * std::exp(xv(0, c) - lse);
    gx(0, idx) += g;
    tt.accum(ia, gx);
  });
  return {&t, id};
}

// ---- layer norm ------------------------------------------------------------

// Row-wise layer normalization with affine output: per row r,
// y_r = (x_r - mean) / sqrt(var + eps) * gamma + beta.
template <class Real>
Var<Real> layernorm(const Var<Real>& a, const Var<Real>& gamma,
                    const Var<Real>& beta, Real eps = Real(1e-5)) {
  detail::check_same_tape(a, gamma, "layernorm");
  detail::check_same_tape(a, beta, "layernorm");
  if (gamma.rows() != 1 || gamma.cols() != a.cols() || beta.rows() != 1 ||
      beta.cols() != a.cols())
    throw ShapeError("layernorm: gamma/beta must be 1 x cols");
  Tape<Real>& t = *a.tape;
  int ia = a.id, ig = gamma.id, ib = beta.id;
  const auto& x = a.value();
  const Eigen::Index rows = x.rows(), d = x.cols();
  Matrix<Real> xhat(rows, d);
  Matrix<Real> inv_std(rows, 1);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Real mu = x.row(r).mean();
    const Real var = (x.row(r).array() - mu).square().mean();
    inv_std(r, 0) = Real(1) / std::sqrt(var + eps);
    xhat.row(r) = (x.row(r).array() - mu).matrix() * inv_std(r, 0);
  }
  Matrix<Real> y(rows, d);
  for (Eigen::Index r = 0; r < rows; ++r)
    y.row(r) = xhat.row(r).cwiseProduct(gamma.value().row(0)) +
               beta.value().row(0);
  int id = t.push(std::move(y),
                  [ia, ig, ib, xhat, inv_std, d](Tape<Real>& tt, int self) {
                    const auto& g = tt.grad_of(self);
                    const auto& gam = tt.val(ig);
                    tt.accum(ib, g.colwise().sum());
                    tt.accum(ig, g.cwiseProduct(xhat).colwise().sum());
                    Matrix<Real> gx(g.rows(), d);
                    for (Eigen::Index r = 0; r < g.rows(); ++r) {
                      Eigen::Matrix<Real, 1, Eigen::Dynamic> gh =
                          g.row(r).cwiseProduct(gam.row(0));
                      const Real m1 = gh.mean();
                      const Real m2 = gh.cwiseProduct(xhat.row(r)).mean();
                      gx.row(r) = ((gh.array() - m1) -
                                   xhat.row(r).array() * m2)
                                      .matrix() *
                                  inv_std(r, 0);
                    }
                    tt.accum(ia, gx);
                  });
  return {&t, id};
}

}  // namespace swep::ad
