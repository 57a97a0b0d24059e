#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "mtada/sampler.hpp"

using namespace mtada;
using mtada::testing::numeric_gradient;
using mtada::testing::random_vec;
using mtada::testing::relative_error;
using mtada::testing::brute_force_radius;
using mtada::testing::plain_kmeans;

namespace {

std::vector<Vec> random_points(Rng& rng, std::size_t n, std::size_t d) {
  std::vector<Vec> pts;
  for (std::size_t i = 0; i < n; ++i) pts.push_back(random_vec(rng, d));
  return pts;
}

ScoredPool pool_from(const std::vector<Vec>& z, const Vec& weights) {
  ScoredPool pool;
  for (std::size_t i = 0; i < z.size(); ++i) {
    ScoredSample s;
    s.id = static_cast<int>(i);
    s.domain = 1 + static_cast<int>(i % 2);
    s.z = z[i];
    s.probs = {0.5, 0.5};
    s.weight = weights[i];
    pool.samples.push_back(s);
  }
  return pool;
}

Params linear_head_identity() {
  Params p = zeros_like({2, 2, 2, 2, 2, 2});
  p.cls.W.data = {1, 0, 0, 1};
  return p;
}

}  // namespace

TEST(GradCls, ClosedFormAndFixedPoint) {
  Params p = linear_head_identity();
  // logits (ln 3, 0) give p = (0.75, 0.25)
  const Vec z{std::log(3.0), 0.0};
  const Vec g = grad_cls(p, z, 0);
  EXPECT_NEAR(g[0], 0.25, 1e-15);
  EXPECT_NEAR(g[1], -0.25, 1e-15);

  const Vec confident{800.0, 0.0};
  const Vec g0 = grad_cls(p, confident, 0);
  EXPECT_EQ(g0[0], 0.0);
  EXPECT_EQ(g0[1], 0.0);
}

TEST(GradDa, SaturatedSourceGivesVanishingGradient) {
  Params p = zeros_like({2, 2, 2, 2, 2, 2});
  p.disc3.b = {60.0, 0.0};
  const Vec g = grad_da(p, Vec{0.3, -0.4}, DiscriminationMode::binary());
  EXPECT_LT(l2_norm(g), 1e-20);
}

TEST(GuGradients, MatchFiniteDifferences) {
  Rng rng(13);
  const std::vector<DiscriminationMode> modes{DiscriminationMode::binary(), DiscriminationMode::all_way(),
                                              DiscriminationMode::decomposed(0.5)};
  for (int trial = 0; trial < 60; ++trial) {
    const auto& mode = modes[trial % 3];
    const Model m = make_model({4, 6, 5, 3, 6, mode.logit_count(2)}, Rng(500 + trial));
    const Vec z = random_vec(rng, 5);
    const int y = static_cast<int>(rng.below(3));
    const Vec nc = numeric_gradient([&](const Vec& v) { return class_loss_at(m.params, v, y).value; }, z);
    const Vec nd = numeric_gradient([&](const Vec& v) { return domain_loss_at(m.params, v, 0, mode).value; }, z);
    Vec gc = grad_cls(m.params, z, y), gd = grad_da(m.params, z, mode);
    for (double& v : gc) v = -v;
    for (double& v : gd) v = -v;
    EXPECT_LT(relative_error(gc, nc), 1e-6);
    EXPECT_LT(relative_error(gd, nd), 1e-6);
  }
}

TEST(GradDa, DecomposedIsBinaryPlusAlphaAllWay) {
  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const double alpha = 0.5;
    const Model m = make_model({4, 6, 5, 3, 6, 4}, Rng(trial));
    const Vec z = random_vec(rng, 5);
    const Vec gdec = grad_da(m.params, z, DiscriminationMode::decomposed(alpha));
    // the two groups evaluated separately through the same trunk
    ForwardCache c;
    c.z = z;
    discriminator_forward(m.params, z, c);
    const auto bin = dom_loss_binary(Vec{c.domain_logits[0], c.domain_logits[1]}, 0);
    const auto aw = dom_loss_allway(Vec{c.domain_logits[0], c.domain_logits[2], c.domain_logits[3]}, 0);
    const Vec db{bin.d_logits[0], bin.d_logits[1], 0.0, 0.0};
    const Vec da{aw.d_logits[0], 0.0, aw.d_logits[1], aw.d_logits[2]};
    const Vec gb = discriminator_backward(m.params, c, db, nullptr);
    const Vec ga = discriminator_backward(m.params, c, da, nullptr);
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(gdec[i], -(gb[i] + alpha * ga[i]), 1e-12);
  }
}

TEST(GradientUtility, CorrelationCases) {
  const Vec g{0.3, -1.2, 0.7};
  Vec neg = g;
  for (double& v : neg) v = -v;
  const Vec perp{1.2, 0.3, 0.0};
  const double n = l2_norm(g);
  EXPECT_NEAR(gradient_utility(g, g).phi, 2.0 * n, 1e-12);
  EXPECT_NEAR(gradient_utility(g, neg).phi, 0.0, 1e-12);
  EXPECT_NEAR(gradient_utility(g, perp).phi, n, 1e-12);
  EXPECT_EQ(gradient_utility(Vec{0.0, 0.0, 0.0}, g).phi, 0.0);
  EXPECT_EQ(gradient_utility(g, Vec{0.0, 0.0, 0.0}).phi, n);
}

TEST(GradientUtility, BoundedByTwicePhiCls) {
  Rng rng(15);
  for (int trial = 0; trial < 500; ++trial) {
    const auto u = gradient_utility(random_vec(rng, 4), random_vec(rng, 4));
    EXPECT_GE(u.phi, 0.0);
    EXPECT_LE(u.phi, 2.0 * u.phi_cls);
    EXPECT_NEAR(u.phi_da, u.phi_cls * u.corr, 1e-15);
  }
}

TEST(GuWeights, Examples) {
  EXPECT_EQ(gu_weights(Vec{2.0, 1.0}, 4.0), (Vec{1.0, 0.0625}));
  EXPECT_EQ(gu_weights(Vec{0.2, 3.0, 0.0}, 0.0), (Vec{1.0, 1.0, 1.0}));
  Rng rng(1);
  for (double beta : {0.5, 1.0, 4.0, 9.0}) {
    Vec phi = random_vec(rng, 10);
    for (double& v : phi) v = std::abs(v);
    const Vec w = gu_weights(phi, beta);
    const auto top = std::max_element(phi.begin(), phi.end()) - phi.begin();
    EXPECT_EQ(w[top], 1.0);
    for (double v : w) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_EQ(gu_weights(Vec{0.0, 0.0}, 4.0), (Vec{1.0, 1.0}));
}

TEST(GuWeights, InvariantToPositiveScaling) {
  Rng rng(2);
  Vec phi = random_vec(rng, 12);
  for (double& v : phi) v = std::abs(v);
  Vec scaled = phi;
  for (double& v : scaled) v *= 8.0;
  EXPECT_EQ(gu_weights(phi, 4.0), gu_weights(scaled, 4.0));
}

TEST(WeightedKMeans, ObjectiveNonIncreasing) {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 10 + rng.below(40);
    const auto pts = random_points(rng, n, 1 + rng.below(4));
    Vec w(n);
    for (double& v : w) v = rng.uniform() < 0.15 ? 0.0 : rng.uniform(0.01, 1.0);
    w[0] = 1.0;
    std::size_t positive = 0;
    for (double v : w) positive += v > 0.0;
    const int k = 1 + static_cast<int>(rng.below(std::min<std::size_t>(positive, 8)));
    const auto r = weighted_kmeans(pts, w, k, 1000 + trial);
    for (std::size_t i = 1; i < r.objective.size(); ++i)
      EXPECT_LE(r.objective[i], r.objective[i - 1] * (1.0 + 1e-12) + 1e-12) << "trial " << trial << " iter " << i;
  }
}

TEST(WeightedKMeans, KEqualsNIsolatesEveryPoint) {
  Rng rng(3);
  const auto pts = random_points(rng, 7, 3);
  const auto r = weighted_kmeans(pts, Vec(7, 1.0), 7, 5);
  EXPECT_EQ(r.objective.back(), 0.0);
  std::set<int> clusters(r.assignment.begin(), r.assignment.end());
  EXPECT_EQ(clusters.size(), 7u);
  const auto picked = nearest_to_centroids(pts, r.centroids);
  EXPECT_EQ(std::set<std::size_t>(picked.begin(), picked.end()).size(), 7u);
}

TEST(WeightedKMeans, UniformWeightsMatchUnweightedOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto pts = random_points(rng, 30, 3);
    const int k = 2 + trial % 5;
    const auto r = weighted_kmeans(pts, Vec(30, 1.0), k, 77 + trial);
    EXPECT_EQ(r.centroids, plain_kmeans(pts, k, 77 + trial)) << "trial " << trial;
  }
}

TEST(WeightedKMeans, ZeroWeightPointsDoNotMoveCentroids) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto pts = random_points(rng, 25, 2);
    Vec w(25);
    for (double& v : w) v = rng.uniform(0.1, 1.0);
    std::vector<Vec> kept;
    Vec kept_w;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i % 4 == 1) {
        w[i] = 0.0;
        continue;
      }
      kept.push_back(pts[i]);
      kept_w.push_back(w[i]);
    }
    const auto full = weighted_kmeans(pts, w, 4, 300 + trial);
    const auto reduced = weighted_kmeans(kept, kept_w, 4, 300 + trial);
    for (int c = 0; c < 4; ++c)
      for (int j = 0; j < 2; ++j) EXPECT_NEAR(full.centroids[c][j], reduced.centroids[c][j], 1e-12);
  }
}

TEST(WeightedKMeans, RejectsTooFewWeightedPoints) {
  const std::vector<Vec> pts{{0.0}, {1.0}, {2.0}};
  EXPECT_THROW(weighted_kmeans(pts, Vec{1.0, 0.0, 0.0}, 2, 1), SelectionError);
}

TEST(SelectGuKMeans, WholePoolAndBlobs) {
  Rng rng(6);
  const auto pts = random_points(rng, 9, 2);
  const ScoredPool pool = pool_from(pts, Vec(9, 1.0));
  SelectionContext ctx;
  ctx.targets = 2;
  ctx.seed = 3;
  const auto all = select(Strategy::GuKMeans, pool, 9, ctx);
  EXPECT_EQ(std::set<int>(all.ids.begin(), all.ids.end()).size(), 9u);

  std::vector<Vec> blobs;
  for (int i = 0; i < 10; ++i) blobs.push_back({0.1 * rng.normal(), 0.1 * rng.normal()});
  for (int i = 0; i < 10; ++i) blobs.push_back({50.0 + 0.1 * rng.normal(), 0.1 * rng.normal()});
  Vec w(20);
  for (double& v : w) v = rng.uniform(0.2, 1.0);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ctx.seed = seed;
    const auto r = select(Strategy::GuKMeans, pool_from(blobs, w), 2, ctx);
    const bool first_left = r.ids[0] < 10, second_left = r.ids[1] < 10;
    EXPECT_NE(first_left, second_left);
  }
}

TEST(SelectGuKMeans, BetaZeroEqualsUnweightedKMeans) {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const auto pts = random_points(rng, 40, 3);
    Vec phi(40);
    for (double& v : phi) v = std::abs(rng.normal());
    const ScoredPool pool = pool_from(pts, gu_weights(phi, 0.0));
    SelectionContext ctx;
    ctx.targets = 2;
    ctx.seed = 900 + trial;
    const auto r = select(Strategy::GuKMeans, pool, 5, ctx);
    const auto expected = nearest_to_centroids(pts, plain_kmeans(pts, 5, 900 + trial));
    ASSERT_EQ(r.ids.size(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_EQ(r.ids[i], static_cast<int>(expected[i]));
  }
}

TEST(SelectGuKMeans, ScalingPhiKeepsSelection) {
  Rng rng(8);
  const auto pts = random_points(rng, 30, 2);
  Vec phi(30);
  for (double& v : phi) v = std::abs(rng.normal());
  Vec scaled = phi;
  for (double& v : scaled) v *= 0.125;
  SelectionContext ctx;
  ctx.targets = 2;
  ctx.seed = 4;
  EXPECT_EQ(select(Strategy::GuKMeans, pool_from(pts, gu_weights(phi, 4.0)), 4, ctx).ids,
            select(Strategy::GuKMeans, pool_from(pts, gu_weights(scaled, 4.0)), 4, ctx).ids);
}

TEST(BaselineScores, EntropyMarginAada) {
  EXPECT_NEAR(entropy(Vec{0.25, 0.25, 0.25, 0.25}), std::log(4.0), 1e-15);
  EXPECT_EQ(entropy(Vec{0.0, 1.0, 0.0, 0.0}), 0.0);
  EXPECT_NEAR(margin(Vec{0.6, 0.4}), 0.2, 1e-15);
  EXPECT_EQ(margin(Vec{0.0, 1.0, 0.0}), 1.0);
  EXPECT_EQ(aada_score(0.5, 0.8), 0.8);
  EXPECT_EQ(aada_score(1.0, 0.8), 0.0);
  EXPECT_LT(aada_score(0.999999, 0.8), 1e-5);
}

TEST(TopB, TiesGoToLowerId) {
  const auto idx = top_b(Vec{0.5, 0.9, 0.5, 0.9, 0.1}, 3);
  EXPECT_EQ(idx, (std::vector<std::size_t>{1, 3, 0}));
}

TEST(TopB, InvariantUnderMonotoneRescaling) {
  Rng rng(9);
  Vec s(30);
  for (double& v : s) v = rng.uniform();
  Vec t = s;
  for (double& v : t) v = std::exp(3.0 * v) + 2.0;
  EXPECT_EQ(top_b(s, 7), top_b(t, 7));
}

TEST(Coreset, OneDimensionalSingleton) {
  const std::vector<Vec> pts{{0.0}, {1.0}, {10.0}};
  const auto c = k_center_greedy(pts, {}, 1);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0], 1u);
  EXPECT_EQ(covering_radius(pts, c), 9.0);
}

TEST(Coreset, WithinTwiceBruteForceOptimum) {
  Rng rng(10);
  int instances = 0;
  for (std::size_t n = 2; n <= 10; ++n)
    for (std::size_t k = 1; k <= 3 && k <= n; ++k)
      for (int rep = 0; rep < 10; ++rep, ++instances) {
        const auto pts = random_points(rng, n, 1 + rng.below(3));
        const auto greedy = k_center_greedy(pts, {}, k);
        EXPECT_LE(covering_radius(pts, greedy), 2.0 * brute_force_radius(pts, k) + 1e-12);
      }
  EXPECT_GE(instances, 200);
}

TEST(Coreset, SeedsSteerAwayFromLabeledRegion) {
  const std::vector<Vec> pts{{0.0}, {0.1}, {5.0}, {9.0}};
  const std::vector<Vec> seeds{{0.05}, {9.1}};
  EXPECT_EQ(k_center_greedy(pts, seeds, 1), (std::vector<std::size_t>{2}));
}

TEST(GreedyMmd, FullPoolHasZeroDiscrepancy) {
  Rng rng(11);
  const auto pts = random_points(rng, 15, 3);
  const auto r = greedy_mmd(pts, 15);
  EXPECT_NEAR(r.mmd2, 0.0, 1e-12);
  EXPECT_EQ(std::set<std::size_t>(r.chosen.begin(), r.chosen.end()).size(), 15u);
}

TEST(GreedyMmd, ReportedValueMatchesDirectFormula) {
  Rng rng(12);
  const auto pts = random_points(rng, 12, 2);
  const auto r = greedy_mmd(pts, 4);
  const double gamma = 1.0 / (2.0 * r.bandwidth * r.bandwidth);
  auto k = [&](const Vec& a, const Vec& b) { return std::exp(-gamma * squared_distance(a, b)); };
  double ss = 0.0, sp = 0.0, pp = 0.0;
  for (auto i : r.chosen)
    for (auto j : r.chosen) ss += k(pts[i], pts[j]);
  for (auto i : r.chosen)
    for (const auto& p : pts) sp += k(pts[i], p);
  for (const auto& a : pts)
    for (const auto& b : pts) pp += k(a, b);
  const double expected = ss / 16.0 - 2.0 * sp / (4.0 * 12.0) + pp / 144.0;
  EXPECT_NEAR(r.mmd2, expected, 1e-12);
}

TEST(Select, EveryStrategyReturnsDistinctPoolIds) {
  Rng rng(13);
  const auto pts = random_points(rng, 40, 3);
  ScoredPool pool = pool_from(pts, Vec(40, 1.0));
  for (auto& s : pool.samples) {
    s.probs = softmax(random_vec(rng, 3));
    s.pseudo_label = static_cast<int>(argmax(s.probs));
    s.entropy = entropy(s.probs);
    s.margin = margin(s.probs);
    s.aada = aada_score(rng.uniform(0.1, 0.9), s.entropy);
    s.weight = rng.uniform();
  }
  SelectionContext ctx;
  ctx.targets = 2;
  ctx.seed = 5;
  ctx.labeled_features = random_points(rng, 3, 3);
  for (const char* name :
       {"random", "entropy", "margin", "coreset", "badge", "aada", "clue", "greedy-mmd", "gu-kmeans"}) {
    const auto r = select(parse_strategy(name), pool, 8, ctx);
    EXPECT_EQ(r.ids.size(), 8u) << name;
    EXPECT_EQ(std::set<int>(r.ids.begin(), r.ids.end()).size(), 8u) << name;
    EXPECT_EQ(r.per_domain[1] + r.per_domain[2], 8) << name;
    EXPECT_EQ(select(parse_strategy(name), pool, 8, ctx).ids, r.ids) << name;
  }
  EXPECT_THROW(select(Strategy::Entropy, pool, 41, ctx), SelectionError);
  EXPECT_THROW(parse_strategy("tqs"), ConfigError);
}

TEST(ScorePool, RejectsSourceAndTestIds) {
  GeneratorConfig g;
  g.classes = 2;
  g.targets = 1;
  g.dim = 3;
  g.train_per_domain = 8;
  g.test_per_domain = 4;
  g.shifts = {DomainShift{}, DomainShift{}};
  const Dataset ds = generate(1, g);
  const Model m = make_model({3, 4, 3, 2, 4, 2}, Rng(1));
  const auto mode = DiscriminationMode::binary();
  EXPECT_THROW(score_pool(m, ds, std::vector<int>{ds.labeled(0)[0]}, mode, 4.0), SelectionError);
  EXPECT_THROW(score_pool(m, ds, std::vector<int>{ds.ids(1, Split::Test)[0]}, mode, 4.0), SelectionError);
  const auto pool = score_pool(m, ds, ds.unlabeled(1), mode, 4.0);
  EXPECT_EQ(pool.samples.size(), 8u);
  for (const auto& s : pool.samples) {
    EXPECT_GE(s.gu.phi, 0.0);
    EXPECT_LE(s.gu.phi, 2.0 * s.gu.phi_cls);
    EXPECT_GE(s.weight, 0.0);
    EXPECT_LE(s.weight, 1.0);
  }
}
