#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "mtada/losses.hpp"
#include "mtada/rng.hpp"

using namespace mtada;
using mtada::testing::numeric_gradient;
using mtada::testing::random_vec;
using mtada::testing::relative_error;

TEST(ClsLoss, Examples) {
  EXPECT_NEAR(cls_loss(Vec{50.0, 0.0, 0.0}, 0).value, 0.0, 1e-20);
  EXPECT_NEAR(cls_loss(Vec{0.1, 0.1, 0.1, 0.1}, 2).value, std::log(4.0), 1e-15);

  const auto l = cls_loss(Vec{0.0, std::log(3.0)}, 0);
  EXPECT_NEAR(l.value, std::log(4.0), 1e-15);
  EXPECT_NEAR(l.d_logits[0], 0.25 - 1.0, 1e-15);
  EXPECT_NEAR(l.d_logits[1], 0.75, 1e-15);
}

TEST(ClsLoss, GradientIsSoftmaxMinusOnehot) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec l = random_vec(rng, 5, 3.0);
    const int y = static_cast<int>(rng.below(5));
    const auto b = cls_loss(l, y);
    const Vec p = softmax(l);
    for (int k = 0; k < 5; ++k) EXPECT_NEAR(b.d_logits[k], p[k] - (k == y ? 1.0 : 0.0), 1e-12);
  }
}

TEST(DomLossBinary, Examples) {
  EXPECT_NEAR(dom_loss_binary(Vec{0.4, 0.4}, 0).value, std::log(2.0), 1e-15);
  const Vec l{0.3, -0.8};
  EXPECT_EQ(dom_loss_binary(l, 1).value, dom_loss_binary(l, 2).value);
  EXPECT_EQ(dom_loss_binary(l, 1).d_logits, dom_loss_binary(l, 5).d_logits);
  EXPECT_NEAR(dom_loss_binary(Vec{std::log(3.0), 0.0}, 0).value, -std::log(0.75), 1e-15);
}

TEST(DomLossAllWay, Examples) {
  EXPECT_NEAR(dom_loss_allway(Vec{0.0, 0.0, 0.0}, 1).value, std::log(3.0), 1e-15);
  EXPECT_NEAR(dom_loss_allway(Vec{0.0, 0.0, std::log(2.0)}, 2).value, std::log(2.0), 1e-15);
  // N = 1: same two channels as binary
  const Vec l{0.9, -0.4};
  EXPECT_EQ(dom_loss_allway(l, 0).value, dom_loss_binary(l, 0).value);
  EXPECT_EQ(dom_loss_allway(l, 1).value, dom_loss_binary(l, 1).value);
}

TEST(DomLossDecomposed, AlphaZeroEqualsBinary) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec l = random_vec(rng, 4);
    for (int m = 0; m <= 2; ++m) {
      const auto dec = dom_loss_decomposed(l, m, 0.0);
      const auto bin = dom_loss_binary(Vec{l[0], l[1]}, m);
      EXPECT_EQ(dec.value, bin.value);
      EXPECT_EQ(dec.d_logits[0], bin.d_logits[0]);
      EXPECT_EQ(dec.d_logits[1], bin.d_logits[1]);
      EXPECT_EQ(dec.d_logits[2], 0.0);
      EXPECT_EQ(dec.d_logits[3], 0.0);
    }
  }
}

TEST(DomLossDecomposed, UniformAdditivity) {
  EXPECT_NEAR(dom_loss_decomposed(Vec{0.0, 0.0, 0.0, 0.0}, 1, 1.0).value, std::log(2.0) + std::log(3.0), 1e-15);
}

TEST(DomLossDecomposed, EqualsSeparatelyComputedParts) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const int N = 1 + static_cast<int>(rng.below(4));
    const Vec l = random_vec(rng, N + 2, 2.0);
    const int m = static_cast<int>(rng.below(N + 1));
    const double alpha = trial == 0 ? 0.5 : rng.uniform(0.0, 2.0);
    Vec aw{l[0]};
    for (int i = 2; i < N + 2; ++i) aw.push_back(l[i]);
    const double expected = dom_loss_binary(Vec{l[0], l[1]}, m).value + alpha * dom_loss_allway(aw, m).value;
    EXPECT_NEAR(dom_loss_decomposed(l, m, alpha).value, expected, 1e-12);
  }
}

TEST(DomLossDecomposed, SourceChannelCollectsBothGroups) {
  const Vec l{0.2, -0.1, 0.5, 0.3};
  const double alpha = 0.7;
  const auto dec = dom_loss_decomposed(l, 2, alpha);
  const auto bin = dom_loss_binary(Vec{l[0], l[1]}, 2);
  const auto aw = dom_loss_allway(Vec{l[0], l[2], l[3]}, 2);
  EXPECT_NEAR(dec.d_logits[0], bin.d_logits[0] + alpha * aw.d_logits[0], 1e-15);
  EXPECT_NE(bin.d_logits[0], 0.0);
  EXPECT_NE(aw.d_logits[0], 0.0);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec cl = random_vec(rng, 4, 2.0);
    const int y = static_cast<int>(rng.below(4));
    EXPECT_LT(relative_error(cls_loss(cl, y).d_logits,
                             numeric_gradient([&](const Vec& v) { return cls_loss(v, y).value; }, cl)),
              1e-6);

    const Vec bl = random_vec(rng, 2, 2.0);
    const int mb = static_cast<int>(rng.below(3));
    EXPECT_LT(relative_error(dom_loss_binary(bl, mb).d_logits,
                             numeric_gradient([&](const Vec& v) { return dom_loss_binary(v, mb).value; }, bl)),
              1e-6);

    const Vec al = random_vec(rng, 3, 2.0);
    const int ma = static_cast<int>(rng.below(3));
    EXPECT_LT(relative_error(dom_loss_allway(al, ma).d_logits,
                             numeric_gradient([&](const Vec& v) { return dom_loss_allway(v, ma).value; }, al)),
              1e-6);

    const Vec dl = random_vec(rng, 4, 2.0);
    const double alpha = rng.uniform(0.0, 1.5);
    EXPECT_LT(relative_error(dom_loss_decomposed(dl, ma, alpha).d_logits,
                             numeric_gradient([&](const Vec& v) { return dom_loss_decomposed(v, ma, alpha).value; },
                                              dl)),
              1e-6);
  }
}

TEST(Losses, InvariantToLogitShiftWithinGroup) {
  Rng rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    Vec l = random_vec(rng, 4);
    const double c = rng.uniform(-50.0, 50.0);
    Vec s = l;
    for (double& v : s) v += c;
    EXPECT_NEAR(cls_loss(l, 1).value, cls_loss(s, 1).value, 1e-9);
    EXPECT_NEAR(dom_loss_allway(l, 3).value, dom_loss_allway(s, 3).value, 1e-9);
  }
}

TEST(DiscriminationMode, LogitCountsAndParsing) {
  EXPECT_EQ(DiscriminationMode::binary().logit_count(3), 2);
  EXPECT_EQ(DiscriminationMode::all_way().logit_count(3), 4);
  EXPECT_EQ(DiscriminationMode::decomposed(1.0).logit_count(3), 5);
  EXPECT_THROW(DiscriminationMode::decomposed(-0.1), ConfigError);
  EXPECT_EQ(parse_mode("decomposed", 0.25).alpha, 0.25);
  EXPECT_THROW(parse_mode("nope", 0.0), ConfigError);
}

TEST(SourceProbability, DecomposedReadsBinaryGroup) {
  const Vec l{std::log(3.0), 0.0, 5.0, -2.0};
  EXPECT_NEAR(source_probability(l, DiscriminationMode::decomposed(1.0)), 0.75, 1e-15);
  EXPECT_NEAR(source_probability(Vec{std::log(3.0), 0.0}, DiscriminationMode::binary()), 0.75, 1e-15);
}
