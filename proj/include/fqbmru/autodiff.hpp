// Copyright 2026 The fqbmru Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Define-by-run reverse-mode differentiation over rank-2 tensors.
//
// A Tape records every operation together with a backward closure. Parameters
// live outside the tape and own their gradient accumulators; Tape::backward
// adds into them, so two backward passes without Parameter::zero_grad sum.
// Broadcasting is limited to (matrix, 1 x cols row vector) pairs.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fqbmru/errors.hpp"
#include "fqbmru/scan.hpp"
#include "fqbmru/tensor.hpp"

namespace fqbmru {

struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value)
      : name(std::move(name)), value(std::move(value)), grad(this->value.shape(), 0.0) {}

  void zero_grad() { grad.fill(0.0); }

  std::string name;
  Tensor value;
  Tensor grad;
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  std::size_t index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

using BackwardFn = std::function<void(Tape&, std::size_t)>;

class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor value) { return push(std::move(value), {}, nullptr, nullptr, false, "constant"); }

  /// Registers a parameter as a leaf; backward accumulates into p.grad.
  Var leaf(Parameter& p) {
    return push(p.value, {}, nullptr, grad_enabled_ ? &p : nullptr, grad_enabled_, "leaf");
  }

  /// Records an operation. `backward` reads adj(self) and adds into adj(inputs).
  Var record(const char* op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
    bool needs = false;
    if (grad_enabled_) {
      for (auto i : inputs) needs = needs || nodes_[i].needs_grad;
    }
    return push(std::move(value), std::move(inputs), needs ? std::move(backward) : nullptr, nullptr,
                needs, op);
  }

  const Tensor& value(std::size_t i) const { return nodes_[i].value; }
  const Tensor& value(const Var& v) const { return nodes_[v.index()].value; }
  const std::vector<std::size_t>& inputs(std::size_t i) const { return nodes_[i].inputs; }
  bool needs_grad(std::size_t i) const { return nodes_[i].needs_grad; }

  /// Adjoint of node i, allocated as zeros on first access.
  Tensor& adj(std::size_t i) {
    auto& n = nodes_[i];
    if (n.adjoint.empty() && !n.value.empty()) n.adjoint = Tensor(n.value.shape(), 0.0);
    return n.adjoint;
  }

  /// Adjoint from the most recent backward pass (empty if unreached).
  const Tensor& grad(const Var& v) const { return nodes_[v.index()].adjoint; }

  void backward(const Var& root) {
    if (root.value().size() != 1) {
      throw dimension_error("backward: root must be a scalar, got shape " +
                            shape_string(root.value().shape()));
    }
    backward(root, Tensor(root.value().shape(), 1.0));
  }

  void backward(const Var& root, Tensor seed) {
    if (seed.shape() != root.value().shape()) throw dimension_error("backward: seed shape mismatch");
    for (auto& n : nodes_) n.adjoint = Tensor();
    visit_order_.clear();
    nodes_[root.index()].adjoint = std::move(seed);
    for (std::size_t k = root.index() + 1; k-- > 0;) {
      auto& n = nodes_[k];
      if (!n.needs_grad || n.adjoint.empty()) continue;
      visit_order_.push_back(k);
      if (n.backward) n.backward(*this, k);
      if (n.param != nullptr) {
        auto g = n.param->grad.data();
        auto a = nodes_[k].adjoint.data();
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += a[j];
      }
    }
  }

  /// Node indices visited by the last backward pass, in visiting order.
  const std::vector<std::size_t>& visit_order() const { return visit_order_; }
  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(std::size_t i) const { return nodes_[i].op; }

 private:
  struct Node {
    Tensor value;
    Tensor adjoint;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
    std::string op;
  };

  Var push(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward, Parameter* param,
           bool needs, const char* op) {
    if (!value.all_finite()) throw numerical_error(std::string("non-finite value produced by ") + op);
    nodes_.push_back(Node{std::move(value), Tensor(), std::move(inputs), std::move(backward), param,
                          needs, op});
    return Var(this, nodes_.size() - 1);
  }

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::vector<std::size_t> visit_order_;
};

inline const Tensor& Var::value() const { return tape_->value(index_); }

namespace detail {

enum class Bcast { same, rhs_row, lhs_row };

inline Bcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  a.require_rank2(op);
  b.require_rank2(op);
  if (a.shape() == b.shape()) return Bcast::same;
  if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::rhs_row;
  if (a.rows() == 1 && a.cols() == b.cols()) return Bcast::lhs_row;
  throw dimension_error(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) +
                        " and " + shape_string(b.shape()));
}

// Adds g (full shape) into target, summing over rows when target is a row.
inline void accumulate(Tensor& target, const Tensor& g) {
  if (target.shape() == g.shape()) {
    for (std::size_t i = 0; i < g.size(); ++i) target[i] += g[i];
    return;
  }
  const std::size_t c = target.cols();
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t j = 0; j < c; ++j) target[j] += g(r, j);
}

inline Tape& same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw precondition_error("operands recorded on different tapes");
  return a.tape();
}

// Element-wise binary op with row broadcasting; returns the output value.
template <class F>
Tensor broadcast_apply(const Tensor& av, const Tensor& bv, Bcast kind, F f) {
  const Tensor& big = kind == Bcast::lhs_row ? bv : av;
  Tensor out(big.shape());
  const std::size_t c = big.cols();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = kind == Bcast::lhs_row ? av[i % c] : av[i];
    const double y = kind == Bcast::rhs_row ? bv[i % c] : bv[i];
    out[i] = f(x, y);
  }
  return out;
}

template <class F>
Var unary(const char* op, const Var& x, F f, std::function<double(double in, double out)> dfdx) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const std::size_t xi = x.index();
  return tape.record(op, std::move(out), {xi}, [xi, dfdx](Tape& t, std::size_t self) {
    const Tensor& g = t.adj(self);
    const Tensor& in = t.value(xi);
    const Tensor& y = t.value(self);
    Tensor& gx = t.adj(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(in[i], y[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Arithmetic

inline Var add(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  const detail::Bcast kind = detail::broadcast_kind(a.value(), b.value(), "add");
  Tensor out = detail::broadcast_apply(a.value(), b.value(), kind,
                                       [](double x, double y) { return x + y; });
  const std::size_t ai = a.index(), bi = b.index();
  return t.record("add", std::move(out), {ai, bi}, [ai, bi](Tape& tp, std::size_t self) {
    const Tensor& g = tp.adj(self);
    if (tp.needs_grad(ai)) detail::accumulate(tp.adj(ai), g);
    if (tp.needs_grad(bi)) detail::accumulate(tp.adj(bi), g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  const detail::Bcast kind = detail::broadcast_kind(a.value(), b.value(), "sub");
  Tensor out = detail::broadcast_apply(a.value(), b.value(), kind,
                                       [](double x, double y) { return x - y; });
  const std::size_t ai = a.index(), bi = b.index();
  return t.record("sub", std::move(out), {ai, bi}, [ai, bi](Tape& tp, std::size_t self) {
    const Tensor& g = tp.adj(self);
    if (tp.needs_grad(ai)) detail::accumulate(tp.adj(ai), g);
    if (tp.needs_grad(bi)) {
      Tensor neg(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
      detail::accumulate(tp.adj(bi), neg);
    }
  });
}

/// Element-wise product (with row-vector broadcasting).
inline Var mul(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  const detail::Bcast kind = detail::broadcast_kind(a.value(), b.value(), "mul");
  const std::size_t c = std::max(a.cols(), b.cols());
  Tensor out = detail::broadcast_apply(a.value(), b.value(), kind,
                                       [](double x, double y) { return x * y; });
  const std::size_t ai = a.index(), bi = b.index();
  return t.record("mul", std::move(out), {ai, bi}, [ai, bi, kind, c](Tape& tp, std::size_t self) {
    const Tensor& g = tp.adj(self);
    const Tensor& av = tp.value(ai);
    const Tensor& bv = tp.value(bi);
    const bool ga = tp.needs_grad(ai), gb = tp.needs_grad(bi);
    Tensor* gat = ga ? &tp.adj(ai) : nullptr;
    Tensor* gbt = gb ? &tp.adj(bi) : nullptr;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t ia = kind == detail::Bcast::lhs_row ? i % c : i;
      const std::size_t ib = kind == detail::Bcast::rhs_row ? i % c : i;
      if (ga) (*gat)[ia] += g[i] * bv[ib];
      if (gb) (*gbt)[ib] += g[i] * av[ia];
    }
  });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

inline Var scale(const Var& x, double k) {
  return detail::unary("scale", x, [k](double v) { return k * v; },
                       [k](double, double) { return k; });
}

inline Var add_scalar(const Var& x, double k) {
  return detail::unary("add_scalar", x, [k](double v) { return v + k; },
                       [](double, double) { return 1.0; });
}

inline Var neg(const Var& x) { return scale(x, -1.0); }

/// 1 - x.
inline Var one_minus(const Var& x) {
  return detail::unary("one_minus", x, [](double v) { return 1.0 - v; },
                       [](double, double) { return -1.0; });
}

inline Var relu(const Var& x) {
  return detail::unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

inline double sigmoid_value(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline double softplus_value(double v) {
  return v > 30.0 ? v : std::log1p(std::exp(v));
}

inline double softplus_inverse(double y) {
  if (!(y > 0.0)) throw precondition_error("softplus_inverse: argument must be positive");
  return y > 30.0 ? y : std::log(std::expm1(y));
}

inline Var sigmoid(const Var& x) {
  return detail::unary("sigmoid", x, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(const Var& x) {
  return detail::unary("tanh", x, [](double v) { return std::tanh(v); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Var exp(const Var& x) {
  return detail::unary("exp", x, [](double v) { return std::exp(v); },
                       [](double, double y) { return y; });
}

inline Var log(const Var& x) {
  return detail::unary("log", x, [](double v) { return std::log(v); },
                       [](double in, double) { return 1.0 / in; });
}

inline Var softplus(const Var& x) {
  return detail::unary("softplus", x, softplus_value,
                       [](double in, double) { return sigmoid_value(in); });
}

inline Var sin(const Var& x) {
  return detail::unary("sin", x, [](double v) { return std::sin(v); },
                       [](double in, double) { return std::cos(in); });
}

inline Var cos(const Var& x) {
  return detail::unary("cos", x, [](double v) { return std::cos(v); },
                       [](double in, double) { return -std::sin(in); });
}

inline Var sqrt(const Var& x) {
  return detail::unary("sqrt", x, [](double v) { return std::sqrt(v); },
                       [](double, double y) { return 0.5 / y; });
}

inline Var square(const Var& x) {
  return detail::unary("square", x, [](double v) { return v * v; },
                       [](double in, double) { return 2.0 * in; });
}

inline Var abs(const Var& x) {
  return detail::unary("abs", x, [](double v) { return std::fabs(v); },
                       [](double in, double) { return in > 0.0 ? 1.0 : (in < 0.0 ? -1.0 : 0.0); });
}

// ---------------------------------------------------------------------------
// Custom-backward element-wise operations

/// Element-wise op whose backward multiplies the upstream adjoint by
/// `surrogate(input)`; the forward output is never consulted.
class ElementwiseOp {
 public:
  ElementwiseOp(std::function<double(double)> forward, std::function<double(double)> surrogate,
                std::string name = "custom")
      : forward_(std::move(forward)), surrogate_(std::move(surrogate)), name_(std::move(name)) {}

  Var operator()(const Var& x) const {
    Tape& tape = x.tape();
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = forward_(xv[i]);
    const std::size_t xi = x.index();
    auto s = surrogate_;
    return tape.record(name_.c_str(), std::move(out), {xi}, [xi, s](Tape& t, std::size_t self) {
      const Tensor& g = t.adj(self);
      const Tensor& in = t.value(xi);
      Tensor& gx = t.adj(xi);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s(in[i]);
    });
  }

  double forward(double x) const { return forward_(x); }
  double backward_factor(double x) const { return surrogate_(x); }

 private:
  std::function<double(double)> forward_;
  std::function<double(double)> surrogate_;
  std::string name_;
};

inline ElementwiseOp custom_backward(std::function<double(double)> forward,
                                     std::function<double(double)> surrogate) {
  return ElementwiseOp(std::move(forward), std::move(surrogate));
}

/// d/dx of the Heaviside step, as used in the backward pass: 1 / (1 + (pi x)^2).
inline double heaviside_surrogate(double x) {
  const double px = std::numbers::pi * x;
  return 1.0 / (1.0 + px * px);
}

/// H(x) = 1 for x > 0, else 0. H(0) = 0: the threshold must be strictly exceeded.
inline double heaviside_value(double x) { return x > 0.0 ? 1.0 : 0.0; }

/// Antiderivative of the surrogate, atan(pi x)/pi + 1/2. Used to make the
/// surrogate-gradient path checkable by finite differences.
inline double heaviside_smooth_value(double x) {
  return std::atan(std::numbers::pi * x) / std::numbers::pi + 0.5;
}

enum class HeavisideMode { exact, smooth };

inline Var heaviside(const Var& x, HeavisideMode mode = HeavisideMode::exact) {
  static const ElementwiseOp exact(heaviside_value, heaviside_surrogate, "heaviside");
  static const ElementwiseOp smooth(heaviside_smooth_value, heaviside_surrogate, "heaviside_smooth");
  return mode == HeavisideMode::exact ? exact(x) : smooth(x);
}

// ---------------------------------------------------------------------------
// Linear algebra and reductions

inline Var matmul(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  Tensor out = fqbmru::matmul(a.value(), b.value());
  const std::size_t ai = a.index(), bi = b.index();
  return t.record("matmul", std::move(out), {ai, bi}, [ai, bi](Tape& tp, std::size_t self) {
    const Tensor& g = tp.adj(self);
    if (tp.needs_grad(ai)) detail::accumulate(tp.adj(ai), fqbmru::matmul(g, tp.value(bi).transposed()));
    if (tp.needs_grad(bi)) detail::accumulate(tp.adj(bi), fqbmru::matmul(tp.value(ai).transposed(), g));
  });
}

/// x W^T + b with x: R x in, W: out x in, b: 1 x out. Pass an invalid Var for no bias.
inline Var linear(const Var& x, const Var& w, const Var& b = Var()) {
  Tape& t = detail::same_tape(x, w);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  xv.require_rank2("linear");
  wv.require_rank2("linear");
  if (xv.cols() != wv.cols()) {
    throw dimension_error("linear: input " + shape_string(xv.shape()) + " vs weight " +
                          shape_string(wv.shape()));
  }
  const std::size_t R = xv.rows(), in = xv.cols(), out_dim = wv.rows();
  if (b.valid() && (b.value().rows() != 1 || b.value().cols() != out_dim)) {
    throw dimension_error("linear: bias shape " + shape_string(b.value().shape()));
  }
  Tensor out = Tensor::matrix(R, out_dim);
  for (std::size_t r = 0; r < R; ++r) {
    const double* xr = xv.data().data() + r * in;
    double* orow = out.data().data() + r * out_dim;
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double* wr = wv.data().data() + o * in;
      double acc = 0.0;
      for (std::size_t k = 0; k < in; ++k) acc += xr[k] * wr[k];
      orow[o] = b.valid() ? acc + b.value()[o] : acc;
    }
  }
  std::vector<std::size_t> inputs{x.index(), w.index()};
  if (b.valid()) inputs.push_back(b.index());
  const std::size_t xi = x.index(), wi = w.index();
  const bool has_b = b.valid();
  const std::size_t bi = has_b ? b.index() : 0;
  return t.record("linear", std::move(out), std::move(inputs),
                  [xi, wi, bi, has_b, R, in, out_dim](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.adj(self);
                    const Tensor& xv = tp.value(xi);
                    const Tensor& wv = tp.value(wi);
                    if (tp.needs_grad(xi)) {
                      Tensor& gx = tp.adj(xi);
                      for (std::size_t r = 0; r < R; ++r)
                        for (std::size_t o = 0; o < out_dim; ++o) {
                          const double go = g(r, o);
                          if (go == 0.0) continue;
                          for (std::size_t k = 0; k < in; ++k) gx(r, k) += go * wv(o, k);
                        }
                    }
                    if (tp.needs_grad(wi)) {
                      Tensor& gw = tp.adj(wi);
                      for (std::size_t r = 0; r < R; ++r)
                        for (std::size_t o = 0; o < out_dim; ++o) {
                          const double go = g(r, o);
                          if (go == 0.0) continue;
                          for (std::size_t k = 0; k < in; ++k) gw(o, k) += go * xv(r, k);
                        }
                    }
                    if (has_b && tp.needs_grad(bi)) detail::accumulate(tp.adj(bi), g);
                  });
}

inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const std::size_t xi = x.index();
  return x.tape().record("sum", Tensor::scalar(s), {xi}, [xi](Tape& t, std::size_t self) {
    const double g = t.adj(self)[0];
    Tensor& gx = t.adj(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

inline Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

inline Var slice_cols(const Var& x, std::size_t start, std::size_t count) {
  const Tensor& xv = x.value();
  xv.require_rank2("slice_cols");
  if (start + count > xv.cols()) throw dimension_error("slice_cols: range out of bounds");
  Tensor out = Tensor::matrix(xv.rows(), count);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t j = 0; j < count; ++j) out(r, j) = xv(r, start + j);
  const std::size_t xi = x.index();
  return x.tape().record("slice_cols", std::move(out), {xi}, [xi, start, count](Tape& t, std::size_t self) {
    const Tensor& g = t.adj(self);
    Tensor& gx = t.adj(xi);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t j = 0; j < count; ++j) gx(r, start + j) += g(r, j);
  });
}

inline Var slice_rows(const Var& x, std::size_t start, std::size_t count) {
  const Tensor& xv = x.value();
  xv.require_rank2("slice_rows");
  if (start + count > xv.rows()) throw dimension_error("slice_rows: range out of bounds");
  const std::size_t c = xv.cols();
  std::vector<double> data(xv.data().begin() + static_cast<std::ptrdiff_t>(start * c),
                           xv.data().begin() + static_cast<std::ptrdiff_t>((start + count) * c));
  const std::size_t xi = x.index();
  return x.tape().record("slice_rows", Tensor({count, c}, std::move(data)), {xi},
                         [xi, start, c](Tape& t, std::size_t self) {
                           const Tensor& g = t.adj(self);
                           Tensor& gx = t.adj(xi);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[start * c + i] += g[i];
                         });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw dimension_error("concat_cols: no inputs");
  Tape& t = parts[0].tape();
  const std::size_t R = parts[0].rows();
  std::size_t C = 0;
  std::vector<std::size_t> idx, widths;
  for (const auto& p : parts) {
    p.value().require_rank2("concat_cols");
    if (p.rows() != R) throw dimension_error("concat_cols: row counts differ");
    if (&p.tape() != &t) throw precondition_error("operands recorded on different tapes");
    idx.push_back(p.index());
    widths.push_back(p.cols());
    C += p.cols();
  }
  Tensor out = Tensor::matrix(R, C);
  std::size_t off = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t j = 0; j < p.cols(); ++j) out(r, off + j) = p.value()(r, j);
    off += p.cols();
  }
  return t.record("concat_cols", std::move(out), idx, [idx, widths](Tape& tp, std::size_t self) {
    const Tensor& g = tp.adj(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (tp.needs_grad(idx[k])) {
        Tensor& gp = tp.adj(idx[k]);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t j = 0; j < widths[k]; ++j) gp(r, j) += g(r, off + j);
      }
      off += widths[k];
    }
  });
}

/// Per-row normalization to zero mean and unit variance (no affine part).
inline Var layer_norm_rows(const Var& x, double eps = 1e-12) {
  const Tensor& xv = x.value();
  xv.require_rank2("layer_norm_rows");
  const std::size_t R = xv.rows(), C = xv.cols();
  Tensor out = Tensor::matrix(R, C);
  std::vector<double> inv_std(R);
  for (std::size_t r = 0; r < R; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < C; ++j) mu += xv(r, j);
    mu /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t j = 0; j < C; ++j) var += (xv(r, j) - mu) * (xv(r, j) - mu);
    var /= static_cast<double>(C);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < C; ++j) out(r, j) = (xv(r, j) - mu) * inv_std[r];
  }
  const std::size_t xi = x.index();
  return x.tape().record("layer_norm", std::move(out), {xi}, [xi, inv_std, C](Tape& t, std::size_t self) {
    const Tensor& g = t.adj(self);
    const Tensor& y = t.value(self);
    Tensor& gx = t.adj(xi);
    const double n = static_cast<double>(C);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double gsum = 0.0, gy = 0.0;
      for (std::size_t j = 0; j < C; ++j) {
        gsum += g(r, j);
        gy += g(r, j) * y(r, j);
      }
      for (std::size_t j = 0; j < C; ++j) {
        gx(r, j) += inv_std[r] * (g(r, j) - gsum / n - y(r, j) * gy / n);
      }
    }
  });
}

/// Mean over rows of -log softmax(logits[r])[labels[r]].
inline Var cross_entropy_rows(const Var& logits, std::span<const int> labels) {
  const Tensor& z = logits.value();
  z.require_rank2("cross_entropy_rows");
  if (labels.size() != z.rows()) throw dimension_error("cross_entropy_rows: label count != rows");
  const std::size_t R = z.rows(), C = z.cols();
  Tensor probs = Tensor::matrix(R, C);
  double loss = 0.0;
  for (std::size_t r = 0; r < R; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= C) {
      throw precondition_error("cross_entropy_rows: label out of range");
    }
    double mx = z(r, 0);
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, z(r, c));
    double se = 0.0;
    for (std::size_t c = 0; c < C; ++c) se += std::exp(z(r, c) - mx);
    const double lse = mx + std::log(se);
    for (std::size_t c = 0; c < C; ++c) probs(r, c) = std::exp(z(r, c) - lse);
    loss += lse - z(r, static_cast<std::size_t>(labels[r]));
  }
  loss /= static_cast<double>(R);
  std::vector<int> lab(labels.begin(), labels.end());
  const std::size_t zi = logits.index();
  return logits.tape().record("cross_entropy", Tensor::scalar(loss), {zi},
                              [zi, probs, lab, R, C](Tape& t, std::size_t self) {
                                const double g = t.adj(self)[0] / static_cast<double>(R);
                                Tensor& gz = t.adj(zi);
                                for (std::size_t r = 0; r < R; ++r)
                                  for (std::size_t c = 0; c < C; ++c) {
                                    const double onehot = static_cast<int>(c) == lab[r] ? 1.0 : 0.0;
                                    gz(r, c) += g * (probs(r, c) - onehot);
                                  }
                              });
}

// ---------------------------------------------------------------------------
// Recurrences over time-major (T*B) x d layouts: row t*B + b is step t of sequence b.

/// h_t = (a_t + eps) ⊙ h_{t-1} + b_t, returning all h_t as a (T*B) x d matrix.
/// With eps == 0 the forward pass uses the blocked associative scan.
inline Var linear_recurrence(const Var& a, const Var& b, const Var& h0, double eps, std::size_t T,
                             std::size_t B) {
  Tape& tape = detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Tensor& hv = h0.value();
  if (av.shape() != bv.shape() || av.rows() != T * B || hv.rows() != B || hv.cols() != av.cols()) {
    throw dimension_error("linear_recurrence: inconsistent shapes a" + shape_string(av.shape()) +
                          " b" + shape_string(bv.shape()) + " h0" + shape_string(hv.shape()));
  }
  const std::size_t w = B * av.cols();
  Tensor out(av.shape());
  if (eps == 0.0) {
    std::vector<AffineScanElement<double>> elems(T);
    for (std::size_t t = 0; t < T; ++t) {
      elems[t].a.assign(av.data().begin() + static_cast<std::ptrdiff_t>(t * w),
                        av.data().begin() + static_cast<std::ptrdiff_t>((t + 1) * w));
      elems[t].b.assign(bv.data().begin() + static_cast<std::ptrdiff_t>(t * w),
                        bv.data().begin() + static_cast<std::ptrdiff_t>((t + 1) * w));
    }
    auto states = scan_states<double>(elems, hv.data());
    for (std::size_t t = 0; t < T; ++t) std::copy(states[t].begin(), states[t].end(), out.data().begin() + static_cast<std::ptrdiff_t>(t * w));
  } else {
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t i = 0; i < w; ++i) {
        const double prev = t == 0 ? hv[i] : out[(t - 1) * w + i];
        out[t * w + i] = av[t * w + i] * prev + bv[t * w + i] + eps * prev;
      }
    }
  }
  const std::size_t ai = a.index(), bi = b.index(), hi = h0.index();
  return tape.record("linear_recurrence", std::move(out), {ai, bi, hi},
                     [ai, bi, hi, eps, T, w](Tape& tp, std::size_t self) {
                       const Tensor& g = tp.adj(self);
                       const Tensor& av = tp.value(ai);
                       const Tensor& hs = tp.value(self);
                       const Tensor& h0v = tp.value(hi);
                       const bool ga = tp.needs_grad(ai), gb = tp.needs_grad(bi), gh = tp.needs_grad(hi);
                       Tensor* gat = ga ? &tp.adj(ai) : nullptr;
                       Tensor* gbt = gb ? &tp.adj(bi) : nullptr;
                       std::vector<double> carry(w, 0.0);
                       for (std::size_t t = T; t-- > 0;) {
                         for (std::size_t i = 0; i < w; ++i) {
                           const double gt = g[t * w + i] + carry[i];
                           const double prev = t == 0 ? h0v[i] : hs[(t - 1) * w + i];
                           if (gb) (*gbt)[t * w + i] += gt;
                           if (ga) (*gat)[t * w + i] += gt * prev;
                           carry[i] = gt * (av[t * w + i] + eps);
                         }
                       }
                       if (gh) {
                         Tensor& ghv = tp.adj(hi);
                         for (std::size_t i = 0; i < w; ++i) ghv[i] += carry[i];
                       }
                     });
}

/// Complex diagonal recurrence x_t = lambda ⊙ x_{t-1} + b_t from x_0 = 0.
/// lambda is 1 x 2d laid out [re | im]; b and the result are (T*B) x 2d.
inline Var complex_linear_recurrence(const Var& lambda, const Var& b, std::size_t T, std::size_t B) {
  Tape& tape = detail::same_tape(lambda, b);
  const Tensor& lv = lambda.value();
  const Tensor& bv = b.value();
  if (lv.rows() != 1 || lv.cols() % 2 != 0 || bv.cols() != lv.cols() || bv.rows() != T * B) {
    throw dimension_error("complex_linear_recurrence: inconsistent shapes");
  }
  const std::size_t d = lv.cols() / 2, C = lv.cols();
  Tensor out(bv.shape());
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t s = 0; s < B; ++s) {
      const std::size_t row = t * B + s, prow = (t - 1) * B + s;
      for (std::size_t k = 0; k < d; ++k) {
        const double pr = t == 0 ? 0.0 : out(prow, k);
        const double pi = t == 0 ? 0.0 : out(prow, d + k);
        out(row, k) = lv[k] * pr - lv[d + k] * pi + bv(row, k);
        out(row, d + k) = lv[k] * pi + lv[d + k] * pr + bv(row, d + k);
      }
    }
  const std::size_t li = lambda.index(), bi = b.index();
  return tape.record("complex_linear_recurrence", std::move(out), {li, bi},
                     [li, bi, T, B, d, C](Tape& tp, std::size_t self) {
                       const Tensor& g = tp.adj(self);
                       const Tensor& lv = tp.value(li);
                       const Tensor& xs = tp.value(self);
                       const bool gl = tp.needs_grad(li), gb = tp.needs_grad(bi);
                       Tensor* glt = gl ? &tp.adj(li) : nullptr;
                       Tensor* gbt = gb ? &tp.adj(bi) : nullptr;
                       std::vector<double> carry(B * C, 0.0);
                       for (std::size_t t = T; t-- > 0;) {
                         for (std::size_t s = 0; s < B; ++s) {
                           const std::size_t row = t * B + s;
                           double* cr = carry.data() + s * C;
                           for (std::size_t k = 0; k < d; ++k) {
                             const double gr = g(row, k) + cr[k];
                             const double gi = g(row, d + k) + cr[d + k];
                             if (gb) {
                               (*gbt)(row, k) += gr;
                               (*gbt)(row, d + k) += gi;
                             }
                             const double pr = t == 0 ? 0.0 : xs(row - B, k);
                             const double pim = t == 0 ? 0.0 : xs(row - B, d + k);
                             if (gl) {
                               (*glt)[k] += gr * pr + gi * pim;
                               (*glt)[d + k] += -gr * pim + gi * pr;
                             }
                             cr[k] = lv[k] * gr + lv[d + k] * gi;
                             cr[d + k] = -lv[d + k] * gr + lv[k] * gi;
                           }
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Gradient checking

/// Largest |analytic - central difference| / (|central difference| + 1e-8)
/// over the coordinates of x.
inline double grad_check(const std::function<Var(Tape&, const Var&)>& f, const Tensor& x,
                         double eps = 1e-5) {
  Parameter p("x", x);
  {
    Tape tape;
    Var out = f(tape, tape.leaf(p));
    tape.backward(out);
  }
  auto eval = [&](const Tensor& at) {
    Tape tape(false);
    return f(tape, tape.constant(at)).value().item();
  };
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double fp = eval(probe);
    probe[i] = orig - eps;
    const double fm = eval(probe);
    probe[i] = orig;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double err = std::fabs(p.grad[i] - numeric) / (std::fabs(numeric) + 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace fqbmru
