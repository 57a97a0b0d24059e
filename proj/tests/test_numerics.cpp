#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "mtada/numerics.hpp"
#include "mtada/rng.hpp"

using namespace mtada;
using mtada::testing::numeric_gradient;
using mtada::testing::random_vec;
using mtada::testing::relative_error;

TEST(Matvec, IdentityZeroAndHandProduct) {
  Mat I(2, 2);
  I(0, 0) = I(1, 1) = 1.0;
  EXPECT_EQ(matvec(I, Vec{3.0, -1.0}), (Vec{3.0, -1.0}));

  Mat W(2, 2);
  W.data = {1, 2, 3, 4};
  EXPECT_EQ(matvec(W, Vec{0.0, 0.0}), (Vec{0.0, 0.0}));
  EXPECT_EQ(matvec(W, Vec{1.0, 1.0}), (Vec{3.0, 7.0}));
}

TEST(Matvec, DimensionMismatchThrows) {
  Mat W(2, 3);
  EXPECT_THROW(matvec(W, Vec{1.0, 2.0}), ShapeError);
}

TEST(Matvec, DistributesOverAddition) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Mat W(5, 4);
    for (double& v : W.data) v = rng.normal();
    const Vec a = random_vec(rng, 4), b = random_vec(rng, 4);
    Vec ab(4);
    for (int i = 0; i < 4; ++i) ab[i] = a[i] + b[i];
    const Vec lhs = matvec(W, ab), ra = matvec(W, a), rb = matvec(W, b);
    for (int i = 0; i < 5; ++i) EXPECT_NEAR(lhs[i], ra[i] + rb[i], 1e-12);
  }
}

TEST(Relu, ValuesAndGradient) {
  EXPECT_EQ(relu(Vec{-1.0, 2.0}), (Vec{0.0, 2.0}));
  EXPECT_EQ(relu_grad(Vec{-1.0, 2.0}, Vec{5.0, 5.0}), (Vec{0.0, 5.0}));
  EXPECT_EQ(relu(Vec{-3.0, -0.5, -1e-9}), (Vec{0.0, 0.0, 0.0}));
}

TEST(Softmax, SymmetryShiftAndClosedForm) {
  for (double p : softmax(Vec{0.7, 0.7, 0.7, 0.7})) EXPECT_DOUBLE_EQ(p, 0.25);

  const Vec base{0.3, -1.2, 2.5};
  const Vec shifted{100.3, 98.8, 102.5};
  const Vec a = softmax(base), b = softmax(shifted);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(a[i], b[i], 1e-12);

  const Vec p = softmax(Vec{0.0, std::log(3.0)});
  EXPECT_NEAR(p[0], 0.25, 1e-15);
  EXPECT_NEAR(p[1], 0.75, 1e-15);
}

TEST(Softmax, SumsToOneForLargeLogits) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec l = random_vec(rng, 6, 1e3 / 3.0);
    const Vec p = softmax(l);
    double s = 0.0;
    for (double v : p) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Cosine, Conventions) {
  const Vec v{0.3, -2.0, 1.5};
  Vec neg = v;
  for (double& x : neg) x = -x;
  EXPECT_NEAR(cosine(v, v), 1.0, 1e-15);
  EXPECT_EQ(cosine(Vec{1.0, 0.0}, Vec{0.0, 1.0}), 0.0);
  EXPECT_NEAR(cosine(v, neg), -1.0, 1e-15);
  EXPECT_EQ(cosine(v, Vec{0.0, 0.0, 0.0}), 0.0);
}

TEST(Cosine, StaysInRange) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec a = random_vec(rng, 5), b = random_vec(rng, 5);
    const double c = cosine(a, b);
    EXPECT_LE(c, 1.0);
    EXPECT_GE(c, -1.0);
  }
}

TEST(LayerGradients, MatchCentralDifferences) {
  Rng rng(5);
  for (int trial = 0; trial < 25; ++trial) {
    Mat W(3, 4);
    for (double& v : W.data) v = rng.normal();
    const Vec x = random_vec(rng, 4);
    const Vec u = random_vec(rng, 3);

    // f(x) = u . relu(W x): analytic dx = W^T relu_grad(Wx, u)
    auto f = [&](const Vec& xx) { return dot(u, relu(matvec(W, xx))); };
    Vec analytic(4, 0.0);
    matvec_transposed_add(W, relu_grad(matvec(W, x), u), analytic);
    EXPECT_LT(relative_error(analytic, numeric_gradient(f, x)), 1e-6);

    // f(W) = u . (W x): analytic dW = u x^T
    Mat G(3, 4);
    outer_add(u, x, G);
    auto fw = [&](const Vec& w) {
      Mat M(3, 4);
      M.data = w;
      return dot(u, matvec(M, x));
    };
    EXPECT_LT(relative_error(G.data, numeric_gradient(fw, W.data)), 1e-6);

    // f(l) = u . softmax(l): analytic dl = p * (u - p.u)
    const Vec l = random_vec(rng, 3);
    const Vec p = softmax(l);
    const double pu = dot(p, u);
    Vec ds(3);
    for (int i = 0; i < 3; ++i) ds[i] = p[i] * (u[i] - pu);
    auto fs = [&](const Vec& ll) { return dot(u, softmax(ll)); };
    EXPECT_LT(relative_error(ds, numeric_gradient(fs, l)), 1e-6);
  }
}

TEST(Rng, DeterministicAndForksIndependent) {
  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng f1 = Rng(42).fork("x"), f2 = Rng(42).fork("y");
  EXPECT_NE(f1.next_u64(), f2.next_u64());
  Rng u(9);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    EXPECT_GE(v, 0.0);
    EXPECT_LT(v, 1.0);
    EXPECT_LT(u.below(7), 7u);
  }
}

TEST(Rng, NormalMoments) {
  Rng rng(1);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    s += v;
    s2 += v * v;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}
