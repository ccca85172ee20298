#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <random>
#include <set>

#include "fqbmru/cells.hpp"

using namespace fqbmru;

namespace {

FqBmruParams scalar_fq(double lo, double hi, double alpha) {
  FqBmruParams p;
  p.W_x = Tensor::from_rows({{1.0}});
  p.b_x = {0.0};
  p.beta_lo = {lo};
  p.delta = {hi - lo};
  p.alpha = {alpha};
  return p;
}

Tensor random_inputs(std::size_t T, std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor x = Tensor::matrix(T, n);
  for (double& v : x.values()) v = u(rng);
  return x;
}

}  // namespace

TEST(FqBmruStep, SetHoldReset) {
  auto p = scalar_fq(0.3, 0.7, 1.0);
  const Vec zero{0.0}, one{1.0};
  EXPECT_EQ(fq_bmru_update(p, Vec{0.9}, zero)[0], 1.0);
  EXPECT_EQ(fq_bmru_update(p, Vec{0.5}, one)[0], 1.0);
  EXPECT_EQ(fq_bmru_update(p, Vec{0.1}, one)[0], 0.0);
  // Through the full step (ĥ = ReLU(x)).
  auto s = fq_bmru_step(p, Vec{0.9}, zero);
  EXPECT_EQ(s.h_hat[0], 0.9);
  EXPECT_EQ(s.h[0], 1.0);
  EXPECT_EQ(fq_bmru_step(p, Vec{-4.0}, one).h_hat[0], 0.0);
}

TEST(FqBmruStep, ThresholdMustBeStrictlyExceeded) {
  auto p = scalar_fq(0.25, 0.75, 1.0);
  EXPECT_EQ(fq_bmru_update(p, Vec{0.75}, Vec{0.0})[0], 0.0);  // H(0) = 0: no set
  EXPECT_EQ(fq_bmru_update(p, Vec{0.25}, Vec{1.0})[0], 1.0);  // no reset
}

TEST(FqBmruStep, EpsAugmentation) {
  auto p = scalar_fq(0.3, 0.7, 1.0);
  EXPECT_DOUBLE_EQ(fq_bmru_update(p, Vec{0.5}, Vec{0.4}, 0.5)[0], 0.4 + 0.2);
  EXPECT_DOUBLE_EQ(fq_bmru_update(p, Vec{0.9}, Vec{0.4}, 0.5)[0], 1.0 + 0.2);
}

TEST(FqBmruStep, NegativeStateRejectedAtEpsZero) {
  auto p = scalar_fq(0.3, 0.7, 1.0);
  EXPECT_THROW(fq_bmru_step(p, Vec{0.5}, Vec{-0.1}), precondition_error);
}

TEST(BmruStep, Examples) {
  BmruParams p;
  p.W_x = Tensor::from_rows({{1.0, 0.0}});
  p.W_beta = Tensor::from_rows({{0.0, 1.0}});
  p.b_x = {0.0};
  p.b_beta = {0.0};
  p.alpha = {1.0};
  EXPECT_EQ(bmru_step(p, Vec{2.0, 1.0}, Vec{-1.0})[0], 1.0);
  EXPECT_EQ(bmru_step(p, Vec{0.5, 1.0}, Vec{-1.0})[0], -1.0);
  EXPECT_EQ(bmru_step(p, Vec{-2.0, 1.0}, Vec{1.0})[0], -1.0);
  EXPECT_EQ(bmru_step(p, Vec{-2.0, -1.0}, Vec{1.0})[0], -1.0);  // |beta|
}

TEST(LruStep, ZeroEigenvalueKeepsNoMemory) {
  Rng rng(1);
  auto p = init_lru(3, 2, 2, rng);
  p.lambda_override = CVec(3, {0.0, 0.0});
  const Vec u{0.3, -0.7};
  CVec prev(3, {5.0, -2.0});
  auto s = lru_step(p, u, prev);
  const CVec drive = lru_drive(p, u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(s.x[i], drive[i]);
    EXPECT_EQ(p.gamma()[i], 1.0);
  }
}

TEST(LruStep, ZeroInputPureDecay) {
  Rng rng(2);
  auto p = init_lru(4, 3, 2, rng);
  CVec v{{1, 2}, {-1, 0.5}, {0, 1}, {3, -3}};
  auto s = lru_step(p, Vec(3, 0.0), v);
  const CVec lam = p.lambda();
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(s.x[i], lam[i] * v[i]);
}

TEST(LruStep, MatchesComplexOracle) {
  Rng rng(3);
  const std::size_t d = 4, m = 3, dout = 2;
  auto p = init_lru(d, m, dout, rng);
  Tensor u = random_inputs(8, m, rng);
  CVec x(d, {0.0, 0.0});
  for (std::size_t t = 0; t < 8; ++t) {
    auto s = lru_step(p, u.row_span(t), x);
    // Oracle built from complex matrices directly.
    CVec ref(d);
    for (std::size_t i = 0; i < d; ++i) {
      const std::complex<double> lam = std::exp(std::complex<double>(-std::exp(p.nu[i]), std::exp(p.theta[i])));
      std::complex<double> bu = 0.0;
      for (std::size_t j = 0; j < m; ++j) bu += std::complex<double>(p.B_re(i, j), p.B_im(i, j)) * u(t, j);
      ref[i] = lam * x[i] + std::sqrt(1.0 - std::norm(lam)) * bu;
      EXPECT_NEAR(std::abs(s.x[i] - ref[i]), 0.0, 1e-12);
    }
    for (std::size_t k = 0; k < dout; ++k) {
      std::complex<double> cx = 0.0;
      for (std::size_t i = 0; i < d; ++i) cx += std::complex<double>(p.C_re(k, i), p.C_im(k, i)) * ref[i];
      double du = 0.0;
      for (std::size_t j = 0; j < m; ++j) du += p.D(k, j) * u(t, j);
      EXPECT_NEAR(s.y[k], cx.real() + du, 1e-12);
    }
    x = s.x;
  }
}

TEST(LruInit, EigenvaluesInsideRing) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    auto p = init_lru(8, 2, 2, rng);
    for (const auto& l : p.lambda()) {
      EXPECT_GE(std::abs(l), 0.9 - 1e-12);
      EXPECT_LE(std::abs(l), 0.999 + 1e-12);
      EXPECT_LT(std::abs(l), 1.0);
    }
    for (double th : p.theta) {
      EXPECT_GT(std::exp(th), 0.0);
      EXPECT_LE(std::exp(th), 2.0 * std::numbers::pi + 1e-12);
    }
  }
}

TEST(MinGruStep, Examples) {
  MinGruParams p;
  p.W_z = Tensor::from_rows({{0.0}});
  p.W_h = Tensor::from_rows({{2.0}});
  p.b_z = {0.0};
  p.b_h = {0.5};
  EXPECT_DOUBLE_EQ(min_gru_step(p, Vec{1.0}, Vec{3.0})[0], 0.5 * 3.0 + 0.5 * 2.5);
  p.b_z = {20.0};
  EXPECT_NEAR(min_gru_step(p, Vec{1.0}, Vec{3.0})[0], 2.5, 1e-8);
}

TEST(MinGruStep, MatchesDirectFormulaAndGateInRange) {
  Rng rng(5);
  auto p = init_min_gru(5, 3, rng);
  Tensor x = random_inputs(20, 3, rng, -50.0, 50.0);
  Vec h(5, 0.2);
  for (std::size_t t = 0; t < 20; ++t) {
    Vec next = min_gru_step(p, x.row_span(t), h);
    for (std::size_t i = 0; i < 5; ++i) {
      double zp = p.b_z[i], hc = p.b_h[i];
      for (std::size_t j = 0; j < 3; ++j) {
        zp += p.W_z(i, j) * x(t, j);
        hc += p.W_h(i, j) * x(t, j);
      }
      const double z = 1.0 / (1.0 + std::exp(-zp));
      EXPECT_GT(z, 0.0);
      EXPECT_LT(z, 1.0);
      EXPECT_NEAR(next[i], (1.0 - z) * h[i] + z * hc, 1e-12);
    }
    h = next;
  }
}

TEST(Composition, SetAndHold) {
  const double alpha = 0.8;
  AffineScanElement<double> hold{{1.0}, {0.0}}, set{{0.0}, {alpha}};
  EXPECT_EQ(compose(hold, set), set);
  EXPECT_EQ(compose(set, hold), set);
}

TEST(Composition, AssociativeOnDiscreteElements) {
  Rng rng(6);
  std::uniform_int_distribution<int> pick(0, 2);
  const Vec alpha{0.37, 1.25, 0.9};
  auto random_elem = [&] {
    AffineScanElement<double> e{Vec(3), Vec(3)};
    for (std::size_t i = 0; i < 3; ++i) {
      const int r = pick(rng);  // 0 reset, 1 hold, 2 set
      e.a[i] = r == 1 ? 1.0 : 0.0;
      e.b[i] = r == 2 ? alpha[i] : 0.0;
    }
    return e;
  };
  for (int k = 0; k < 500; ++k) {
    auto e1 = random_elem(), e2 = random_elem(), e3 = random_elem();
    EXPECT_EQ(compose(compose(e1, e2), e3), compose(e1, compose(e2, e3)));
  }
}

TEST(Composition, AssociativeOnRealElementsToRounding) {
  Rng rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 500; ++k) {
    AffineScanElement<double> e[3];
    for (auto& x : e) x = {{u(rng), u(rng)}, {u(rng), u(rng)}};
    auto l = compose(compose(e[0], e[1]), e[2]);
    auto r = compose(e[0], compose(e[1], e[2]));
    for (std::size_t i = 0; i < 2; ++i) {
      EXPECT_NEAR(l.a[i], r.a[i], 1e-15);
      EXPECT_NEAR(l.b[i], r.b[i], 1e-12);
    }
  }
}

TEST(Scan, SingleStepEqualsStep) {
  Rng rng(8);
  auto p = init_fq_bmru(4, 3, rng);
  Tensor x = random_inputs(1, 3, rng);
  const Vec h0{0.0, p.alpha[1], 0.0, p.alpha[3]};
  auto st = scan_sequential(p, x, h0);
  auto ref = fq_bmru_step(p, x.row_span(0), h0).h;
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(st(0, i), ref[i]);
}

TEST(Scan, HoldWindowPersists) {
  auto p = scalar_fq(0.3, 0.7, 1.0);
  Tensor x = Tensor::matrix(40, 1);
  Rng rng(9);
  std::uniform_real_distribution<double> u(0.31, 0.69);
  for (double& v : x.values()) v = u(rng);
  for (double h0 : {0.0, 1.0}) {
    auto st = scan_sequential(p, x, Vec{h0});
    for (std::size_t t = 0; t < 40; ++t) EXPECT_EQ(st(t, 0), h0);
  }
}

TEST(Scan, ParallelEqualsSequentialAllCells) {
  Rng rng(10);
  std::uniform_int_distribution<std::size_t> len(1, 256), dim(1, 6);
  for (int inst = 0; inst < 30; ++inst) {
    const std::size_t T = len(rng), d = dim(rng), n = dim(rng);
    Tensor x = random_inputs(T, n, rng, -2.0, 2.0);
    {
      auto p = init_fq_bmru(d, n, rng);
      Vec h0(d);
      for (std::size_t i = 0; i < d; ++i) h0[i] = i % 2 ? p.alpha[i] : 0.0;
      EXPECT_EQ(scan_parallel(p, x, h0), scan_sequential(p, x, h0));
      EXPECT_EQ(scan_parallel(p, x, h0, 0.0, 7), scan_sequential(p, x, h0));
    }
    {
      auto p = init_bmru(d, n, rng);
      Vec h0(d);
      for (std::size_t i = 0; i < d; ++i) h0[i] = i % 2 ? p.alpha[i] : -p.alpha[i];
      EXPECT_EQ(scan_parallel(p, x, h0), scan_sequential(p, x, h0));
    }
    {
      auto p = init_min_gru(d, n, rng);
      Vec h0(d, 0.3);
      auto a = scan_parallel(p, x, h0), b = scan_sequential(p, x, h0);
      for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-10);
    }
    {
      auto p = init_lru(d, n, 2, rng);
      CVec x0(d, {0.1, -0.2});
      auto a = scan_parallel(p, x, x0), b = scan_sequential(p, x, x0);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < d; ++i) EXPECT_LT(std::abs(a[t][i] - b[t][i]), 1e-10);
    }
  }
}

TEST(Scan, ParallelRejectsEps) {
  Rng rng(11);
  auto p = init_fq_bmru(2, 2, rng);
  EXPECT_THROW(scan_parallel(p, Tensor::matrix(3, 2), Vec(2, 0.0), 0.5), precondition_error);
}

TEST(Scan, FqStatesStayInFiniteSet) {
  Rng rng(12);
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t d = 3, n = 4, T = 256;
    auto p = init_fq_bmru(d, n, rng);
    Tensor x = random_inputs(T, n, rng, -3.0, 3.0);
    const Vec h0{0.123, 0.0, 0.456};
    auto st = scan_sequential(p, x, h0);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < d; ++i) {
        const double v = st(t, i);
        EXPECT_TRUE(v == 0.0 || v == p.alpha[i] || v == h0[i]);
      }
  }
}

TEST(Scan, WindowPerturbationNeverChangesOutput) {
  Rng rng(13);
  auto p = scalar_fq(0.3, 0.7, 0.6);
  std::uniform_real_distribution<double> u(0.0, 1.0), win(0.3001, 0.6999);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor x = Tensor::matrix(30, 1);
    for (double& v : x.values()) v = u(rng);
    const std::size_t k = static_cast<std::size_t>(trial % 30);
    x(k, 0) = win(rng);
    Tensor y = x;
    y(k, 0) = win(rng);
    EXPECT_EQ(scan_sequential(p, x, Vec{0.0}), scan_sequential(p, y, Vec{0.0}));
  }
}

TEST(FqInit, SeededAndValid) {
  Rng a(42), b(42);
  auto p = init_fq_bmru(1, 1, a), q = init_fq_bmru(1, 1, b);
  EXPECT_EQ(p.W_x, q.W_x);
  EXPECT_EQ(p.alpha, q.alpha);
  EXPECT_EQ(p.beta_lo, q.beta_lo);
  Rng rng(43);
  for (int k = 0; k < 10000; ++k) {
    auto r = init_fq_bmru(1, 3, rng);
    const double hi = r.beta_hi()[0];
    EXPECT_GT(hi, r.beta_lo[0]);
    EXPECT_GT(r.beta_lo[0], 0.0);
    EXPECT_GT(r.alpha[0], 0.0);
    EXPECT_LE(std::fabs(r.W_x(0, 0)), 1.0 / std::sqrt(3.0));
  }
  EXPECT_THROW(init_fq_bmru(0, 1, rng), precondition_error);
}
