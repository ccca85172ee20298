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

// Inference-side recurrent cells: parameter records, single steps, and
// sequential / associative-scan evaluation over a T x n input sequence.

#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fqbmru/autodiff.hpp"
#include "fqbmru/errors.hpp"
#include "fqbmru/scan.hpp"
#include "fqbmru/tensor.hpp"

namespace fqbmru {

using Vec = std::vector<double>;
using CVec = std::vector<std::complex<double>>;
using Rng = std::mt19937_64;

// ---------------------------------------------------------------------------
// Parameter records

struct FqBmruParams {
  Tensor W_x;  // d x n
  Vec b_x;
  Vec beta_lo;
  Vec delta;
  Vec alpha;

  std::size_t dim() const { return b_x.size(); }
  std::size_t input_dim() const { return W_x.cols(); }
  Vec beta_hi() const {
    Vec out(beta_lo.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = beta_lo[i] + delta[i];
    return out;
  }

  void validate() const {
    const std::size_t d = dim();
    if (W_x.rank() != 2 || W_x.rows() != d || beta_lo.size() != d || delta.size() != d ||
        alpha.size() != d) {
      throw dimension_error("FqBmruParams: inconsistent shapes");
    }
    for (std::size_t i = 0; i < d; ++i) {
      if (!(beta_lo[i] > 0.0) || !(delta[i] > 0.0) || !(alpha[i] > 0.0)) {
        throw precondition_error("FqBmruParams: beta_lo, delta and alpha must be positive (unit " +
                                 std::to_string(i) + ")");
      }
    }
  }
};

struct BmruParams {
  Tensor W_x;     // d x n
  Tensor W_beta;  // d x n
  Vec b_x;
  Vec b_beta;
  Vec alpha;

  std::size_t dim() const { return b_x.size(); }
};

struct LruParams {
  Vec nu;
  Vec theta;
  Tensor B_re, B_im;  // d x m
  Tensor C_re, C_im;  // d_out x d
  Tensor D;           // d_out x m
  /// When set, used instead of exp(-exp(nu) + i exp(theta)).
  std::optional<CVec> lambda_override;

  std::size_t dim() const { return nu.size(); }

  CVec lambda() const {
    if (lambda_override) return *lambda_override;
    CVec out(nu.size());
    for (std::size_t i = 0; i < nu.size(); ++i) {
      out[i] = std::exp(std::complex<double>(-std::exp(nu[i]), std::exp(theta[i])));
    }
    return out;
  }

  Vec gamma() const {
    const CVec lam = lambda();
    Vec out(lam.size());
    for (std::size_t i = 0; i < lam.size(); ++i) out[i] = std::sqrt(1.0 - std::norm(lam[i]));
    return out;
  }
};

struct MinGruParams {
  Tensor W_z, W_h;  // d x m
  Vec b_z, b_h;

  std::size_t dim() const { return b_z.size(); }
};

// ---------------------------------------------------------------------------
// Single steps

struct FqStep {
  Vec h;
  Vec h_hat;
};

/// State update given the candidate: set above beta_hi, reset below beta_lo,
/// hold in between, plus the eps * h_prev training augmentation.
inline Vec fq_bmru_update(const FqBmruParams& p, std::span<const double> h_hat,
                          std::span<const double> h_prev, double eps = 0.0) {
  const std::size_t d = p.dim();
  if (h_hat.size() != d || h_prev.size() != d) throw dimension_error("fq_bmru_update: size mismatch");
  Vec h(d);
  for (std::size_t i = 0; i < d; ++i) {
    if (eps == 0.0 && h_prev[i] < 0.0) {
      throw precondition_error("fq_bmru_step: negative previous state at unit " + std::to_string(i));
    }
    const double hi = p.beta_lo[i] + p.delta[i];
    const double z_lo = heaviside_value(p.beta_lo[i] - h_hat[i]);
    const double z_hi = heaviside_value(h_hat[i] - hi);
    h[i] = z_hi * p.alpha[i] + (1.0 - z_lo) * (1.0 - z_hi) * h_prev[i] + eps * h_prev[i];
  }
  return h;
}

inline Vec fq_bmru_candidate(const FqBmruParams& p, std::span<const double> x) {
  Vec h_hat = affine(p.W_x, p.b_x, x);
  for (double& v : h_hat) v = v > 0.0 ? v : 0.0;
  return h_hat;
}

inline FqStep fq_bmru_step(const FqBmruParams& p, std::span<const double> x,
                           std::span<const double> h_prev, double eps = 0.0) {
  if (eps < 0.0 || eps > 1.0) throw precondition_error("fq_bmru_step: eps outside [0, 1]");
  Vec h_hat = fq_bmru_candidate(p, x);
  Vec h = fq_bmru_update(p, h_hat, h_prev, eps);
  return {std::move(h), std::move(h_hat)};
}

inline AffineScanElement<double> fq_bmru_element(const FqBmruParams& p, std::span<const double> h_hat) {
  const std::size_t d = p.dim();
  AffineScanElement<double> e{Vec(d), Vec(d)};
  for (std::size_t i = 0; i < d; ++i) {
    const double z_lo = heaviside_value(p.beta_lo[i] - h_hat[i]);
    const double z_hi = heaviside_value(h_hat[i] - (p.beta_lo[i] + p.delta[i]));
    e.a[i] = (1.0 - z_lo) * (1.0 - z_hi);
    e.b[i] = z_hi * p.alpha[i];
  }
  return e;
}

inline double sign_value(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline AffineScanElement<double> bmru_element(const BmruParams& p, std::span<const double> x) {
  const Vec h_hat = affine(p.W_x, p.b_x, x);
  const Vec beta = affine(p.W_beta, p.b_beta, x);
  const std::size_t d = p.dim();
  AffineScanElement<double> e{Vec(d), Vec(d)};
  for (std::size_t i = 0; i < d; ++i) {
    const double z = heaviside_value(std::fabs(h_hat[i]) - std::fabs(beta[i]));
    e.a[i] = 1.0 - z;
    e.b[i] = z * sign_value(h_hat[i]) * p.alpha[i];
  }
  return e;
}

inline Vec bmru_step(const BmruParams& p, std::span<const double> x, std::span<const double> h_prev) {
  if (h_prev.size() != p.dim()) throw dimension_error("bmru_step: state size mismatch");
  return fqbmru::apply(bmru_element(p, x), h_prev);
}

struct LruStep {
  CVec x;
  Vec y;
};

/// Complex input drive gamma ⊙ (B u).
inline CVec lru_drive(const LruParams& p, std::span<const double> u) {
  const Vec re = affine(p.B_re, Vec(p.dim(), 0.0), u);
  const Vec im = affine(p.B_im, Vec(p.dim(), 0.0), u);
  const Vec g = p.gamma();
  CVec out(p.dim());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = g[i] * std::complex<double>(re[i], im[i]);
  return out;
}

inline Vec lru_readout(const LruParams& p, const CVec& x, std::span<const double> u) {
  const std::size_t d = p.dim();
  Vec xr(d), xi(d);
  for (std::size_t i = 0; i < d; ++i) {
    xr[i] = x[i].real();
    xi[i] = x[i].imag();
  }
  Vec y = affine(p.D, Vec(p.D.rows(), 0.0), u);
  const Vec cr = affine(p.C_re, Vec(p.C_re.rows(), 0.0), xr);
  const Vec ci = affine(p.C_im, Vec(p.C_im.rows(), 0.0), xi);
  for (std::size_t k = 0; k < y.size(); ++k) y[k] += cr[k] - ci[k];
  return y;
}

inline LruStep lru_step(const LruParams& p, std::span<const double> u, const CVec& x_prev) {
  if (x_prev.size() != p.dim()) throw dimension_error("lru_step: state size mismatch");
  const CVec lam = p.lambda();
  const CVec drive = lru_drive(p, u);
  CVec x(p.dim());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = lam[i] * x_prev[i] + drive[i];
  Vec y = lru_readout(p, x, u);
  return {std::move(x), std::move(y)};
}

inline AffineScanElement<double> min_gru_element(const MinGruParams& p, std::span<const double> x) {
  const Vec zpre = affine(p.W_z, p.b_z, x);
  const Vec cand = affine(p.W_h, p.b_h, x);
  AffineScanElement<double> e{Vec(p.dim()), Vec(p.dim())};
  for (std::size_t i = 0; i < p.dim(); ++i) {
    const double z = sigmoid_value(zpre[i]);
    e.a[i] = 1.0 - z;
    e.b[i] = z * cand[i];
  }
  return e;
}

inline Vec min_gru_step(const MinGruParams& p, std::span<const double> x, std::span<const double> h_prev) {
  if (h_prev.size() != p.dim()) throw dimension_error("min_gru_step: state size mismatch");
  return fqbmru::apply(min_gru_element(p, x), h_prev);
}

// ---------------------------------------------------------------------------
// Whole-sequence evaluation. Inputs are T x n; states come back T x d.

namespace detail {

inline Tensor stack_rows(const std::vector<Vec>& rows, std::size_t width) {
  Tensor out = Tensor::matrix(rows.size(), width);
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t j = 0; j < width; ++j) out(t, j) = rows[t][j];
  return out;
}

}  // namespace detail

inline Tensor scan_sequential(const FqBmruParams& p, const Tensor& inputs, std::span<const double> h0,
                              double eps = 0.0) {
  Vec h(h0.begin(), h0.end());
  std::vector<Vec> states;
  for (std::size_t t = 0; t < inputs.rows(); ++t) {
    h = fq_bmru_step(p, inputs.row_span(t), h, eps).h;
    states.push_back(h);
  }
  return detail::stack_rows(states, p.dim());
}

inline Tensor scan_sequential(const BmruParams& p, const Tensor& inputs, std::span<const double> h0) {
  Vec h(h0.begin(), h0.end());
  std::vector<Vec> states;
  for (std::size_t t = 0; t < inputs.rows(); ++t) {
    h = bmru_step(p, inputs.row_span(t), h);
    states.push_back(h);
  }
  return detail::stack_rows(states, p.dim());
}

inline Tensor scan_sequential(const MinGruParams& p, const Tensor& inputs, std::span<const double> h0) {
  Vec h(h0.begin(), h0.end());
  std::vector<Vec> states;
  for (std::size_t t = 0; t < inputs.rows(); ++t) {
    h = min_gru_step(p, inputs.row_span(t), h);
    states.push_back(h);
  }
  return detail::stack_rows(states, p.dim());
}

inline std::vector<CVec> scan_sequential(const LruParams& p, const Tensor& inputs, const CVec& x0) {
  CVec x = x0;
  std::vector<CVec> states;
  for (std::size_t t = 0; t < inputs.rows(); ++t) {
    x = lru_step(p, inputs.row_span(t), x).x;
    states.push_back(x);
  }
  return states;
}

inline Tensor scan_parallel(const FqBmruParams& p, const Tensor& inputs, std::span<const double> h0,
                            double eps = 0.0, std::size_t block = kDefaultScanBlock) {
  if (eps != 0.0) {
    throw precondition_error("scan_parallel: eps != 0 is unsupported; use scan_sequential");
  }
  for (double v : h0) {
    if (v < 0.0) throw precondition_error("scan_parallel: negative initial state");
  }
  std::vector<AffineScanElement<double>> elems;
  elems.reserve(inputs.rows());
  for (std::size_t t = 0; t < inputs.rows(); ++t) {
    elems.push_back(fq_bmru_element(p, fq_bmru_candidate(p, inputs.row_span(t))));
  }
  return detail::stack_rows(scan_states<double>(elems, h0, block), p.dim());
}

inline Tensor scan_parallel(const BmruParams& p, const Tensor& inputs, std::span<const double> h0,
                            std::size_t block = kDefaultScanBlock) {
  std::vector<AffineScanElement<double>> elems;
  for (std::size_t t = 0; t < inputs.rows(); ++t) elems.push_back(bmru_element(p, inputs.row_span(t)));
  return detail::stack_rows(scan_states<double>(elems, h0, block), p.dim());
}

inline Tensor scan_parallel(const MinGruParams& p, const Tensor& inputs, std::span<const double> h0,
                            std::size_t block = kDefaultScanBlock) {
  std::vector<AffineScanElement<double>> elems;
  for (std::size_t t = 0; t < inputs.rows(); ++t) elems.push_back(min_gru_element(p, inputs.row_span(t)));
  return detail::stack_rows(scan_states<double>(elems, h0, block), p.dim());
}

inline std::vector<CVec> scan_parallel(const LruParams& p, const Tensor& inputs, const CVec& x0,
                                       std::size_t block = kDefaultScanBlock) {
  const CVec lam = p.lambda();
  std::vector<AffineScanElement<std::complex<double>>> elems;
  for (std::size_t t = 0; t < inputs.rows(); ++t) elems.push_back({lam, lru_drive(p, inputs.row_span(t))});
  return scan_states<std::complex<double>>(elems, x0, block);
}

// ---------------------------------------------------------------------------
// Initialization

namespace detail {

inline Tensor uniform_matrix(std::size_t r, std::size_t c, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor m = Tensor::matrix(r, c);
  for (double& v : m.values()) v = u(rng);
  return m;
}

inline Vec uniform_vec(std::size_t n, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vec v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// Uniform on (0, 1].
inline Vec positive_unit_vec(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec v(n);
  for (double& x : v) x = 1.0 - u(rng);
  return v;
}

inline void require_dims(std::size_t d, std::size_t n) {
  if (d == 0 || n == 0) throw precondition_error("cell init: dimensions must be at least 1");
}

}  // namespace detail

inline FqBmruParams init_fq_bmru(std::size_t d, std::size_t n, Rng& rng) {
  detail::require_dims(d, n);
  const double k = 1.0 / std::sqrt(static_cast<double>(n));
  FqBmruParams p;
  p.W_x = detail::uniform_matrix(d, n, k, rng);
  p.b_x = detail::uniform_vec(d, -k, k, rng);
  p.alpha = detail::positive_unit_vec(d, rng);
  p.beta_lo = detail::positive_unit_vec(d, rng);
  p.delta = detail::positive_unit_vec(d, rng);
  return p;
}

inline BmruParams init_bmru(std::size_t d, std::size_t n, Rng& rng) {
  detail::require_dims(d, n);
  const double k = 1.0 / std::sqrt(static_cast<double>(n));
  BmruParams p;
  p.W_x = detail::uniform_matrix(d, n, k, rng);
  p.W_beta = detail::uniform_matrix(d, n, k, rng);
  p.b_x = detail::uniform_vec(d, -k, k, rng);
  p.b_beta = detail::uniform_vec(d, -k, k, rng);
  p.alpha = detail::positive_unit_vec(d, rng);
  return p;
}

inline MinGruParams init_min_gru(std::size_t d, std::size_t m, Rng& rng) {
  detail::require_dims(d, m);
  const double k = 1.0 / std::sqrt(static_cast<double>(m));
  MinGruParams p;
  p.W_z = detail::uniform_matrix(d, m, k, rng);
  p.W_h = detail::uniform_matrix(d, m, k, rng);
  p.b_z = detail::uniform_vec(d, -k, k, rng);
  p.b_h = detail::uniform_vec(d, -k, k, rng);
  return p;
}

/// Eigenvalue magnitudes uniform in [r_min, r_max], phases uniform in (0, max_phase].
inline LruParams init_lru(std::size_t d, std::size_t m, std::size_t d_out, Rng& rng,
                          double r_min = 0.9, double r_max = 0.999,
                          double max_phase = 2.0 * std::numbers::pi) {
  detail::require_dims(d, m);
  detail::require_dims(d_out, 1);
  LruParams p;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  p.nu.resize(d);
  p.theta.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double r = r_min + (r_max - r_min) * u(rng);
    p.nu[i] = std::log(-std::log(r));
    const double phase = max_phase * (1.0 - u(rng));
    p.theta[i] = std::log(phase);
  }
  std::normal_distribution<double> g(0.0, 1.0);
  auto normal = [&](std::size_t r, std::size_t c, double s) {
    Tensor t = Tensor::matrix(r, c);
    for (double& v : t.values()) v = s * g(rng);
    return t;
  };
  const double sb = 1.0 / std::sqrt(2.0 * static_cast<double>(m));
  const double sc = 1.0 / std::sqrt(static_cast<double>(d));
  p.B_re = normal(d, m, sb);
  p.B_im = normal(d, m, sb);
  p.C_re = normal(d_out, d, sc);
  p.C_im = normal(d_out, d, sc);
  p.D = normal(d_out, m, 1.0 / std::sqrt(static_cast<double>(m)));
  return p;
}

}  // namespace fqbmru
