#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mtada/data.hpp"
#include "mtada/errors.hpp"
#include "mtada/losses.hpp"
#include "mtada/model.hpp"
#include "mtada/numerics.hpp"
#include "mtada/rng.hpp"

namespace mtada {

// ---------------------------------------------------------------------------
// Gradient utility

/// Negative classification-loss gradient w.r.t. z under pseudo-label `y`:
/// -C^T (p - onehot(y)).
inline Vec grad_cls(const Params& p, std::span<const double> z, int y) {
  Vec g = class_loss_at(p, z, y).d_z;
  for (double& v : g) v = -v;
  return g;
}

/// Negative gradient w.r.t. z of the domain loss with the label forced to
/// the source domain. No gradient reversal is applied here.
inline Vec grad_da(const Params& p, std::span<const double> z, const DiscriminationMode& mode) {
  Vec g = domain_loss_at(p, z, 0, mode).d_z;
  for (double& v : g) v = -v;
  return g;
}

struct GradientUtility {
  double phi_cls = 0.0;
  double corr = 0.0;
  double phi_da = 0.0;
  double phi = 0.0;
};

/// phi = |g_cls| + |g_cls| cos(g_cls, g_da), bounded by [0, 2 |g_cls|].
inline GradientUtility gradient_utility(std::span<const double> g_cls, std::span<const double> g_da) {
  GradientUtility u;
  u.phi_cls = l2_norm(g_cls);
  u.corr = cosine(g_cls, g_da);
  u.phi_da = u.phi_cls * u.corr;
  u.phi = u.phi_cls + u.phi_da;
  return u;
}

/// w_i = (phi_i / max phi)^beta. All-zero scores give uniform weights.
inline Vec gu_weights(std::span<const double> phi, double beta) {
  Vec w(phi.size(), 1.0);
  if (phi.empty()) return w;
  const double mx = *std::max_element(phi.begin(), phi.end());
  if (!(mx > 0.0)) {
    warn("gu_weights: all gradient utilities are zero; using uniform weights");
    return w;
  }
  for (std::size_t i = 0; i < phi.size(); ++i) w[i] = std::pow(std::max(phi[i], 0.0) / mx, beta);
  return w;
}

// ---------------------------------------------------------------------------
// Weighted KMeans

struct KMeansResult {
  std::vector<Vec> centroids;
  std::vector<int> assignment;
  std::vector<double> objective;  // weighted SSE after each Lloyd update
  int iterations = 0;
};

namespace detail {

/// Index drawn with probability proportional to `mass`; entries with zero
/// mass are never returned. Returns -1 when the total mass is zero.
inline int sample_proportional(std::span<const double> mass, Rng& rng) {
  double total = 0.0;
  for (double v : mass) total += v;
  if (!(total > 0.0)) return -1;
  const double u = rng.uniform() * total;
  double acc = 0.0;
  int last = -1;
  for (std::size_t i = 0; i < mass.size(); ++i) {
    if (!(mass[i] > 0.0)) continue;
    acc += mass[i];
    last = static_cast<int>(i);
    if (acc > u) return last;
  }
  return last;
}

inline double weighted_sse(std::span<const Vec> pts, std::span<const double> w, std::span<const Vec> cents,
                           std::span<const int> assign) {
  double s = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (w[i] != 0.0) s += w[i] * squared_distance(pts[i], cents[assign[i]]);
  return s;
}

inline double min_sq_distance(std::span<const double> x, std::span<const Vec> cents) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : cents) best = std::min(best, squared_distance(x, c));
  return best;
}

}  // namespace detail

/// Lloyd's algorithm with weighted centroids mu_c = sum w z / sum w and
/// weighted k-means++ seeding (first centre ~ w, then ~ w * D^2). Stops when
/// assignments stabilise or after `max_iter` updates. A cluster with zero
/// total weight is re-seeded at the point with the largest w * D^2.
inline KMeansResult weighted_kmeans(std::span<const Vec> points, std::span<const double> weights, int k,
                                    std::uint64_t seed, int max_iter = 100) {
  const std::size_t n = points.size();
  require_shape(weights.size() == n, "weighted_kmeans: weights/points length mismatch");
  if (k < 1) throw SelectionError("weighted_kmeans: k must be >= 1");
  std::size_t positive = 0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw SelectionError("weighted_kmeans: weights must be finite and >= 0");
    if (w > 0.0) ++positive;
  }
  if (static_cast<std::size_t>(k) > positive)
    throw SelectionError("weighted_kmeans: k exceeds the number of points with nonzero weight");

  Rng rng(seed);
  KMeansResult res;
  std::vector<char> is_center(n, 0);
  auto add_center = [&](int i) {
    res.centroids.push_back(points[i]);
    is_center[i] = 1;
  };
  add_center(detail::sample_proportional(weights, rng));
  Vec mass(n);
  while (res.centroids.size() < static_cast<std::size_t>(k)) {
    for (std::size_t i = 0; i < n; ++i)
      mass[i] = is_center[i] ? 0.0 : weights[i] * detail::min_sq_distance(points[i], res.centroids);
    int pick = detail::sample_proportional(mass, rng);
    if (pick < 0) {
      // every weighted point coincides with a centre; take the next unused one
      for (std::size_t i = 0; i < n && pick < 0; ++i)
        if (weights[i] > 0.0 && !is_center[i]) pick = static_cast<int>(i);
    }
    add_center(pick);
  }

  const std::size_t dim = points.empty() ? 0 : points[0].size();
  res.assignment.assign(n, -1);
  std::vector<int> next(n);
  for (int it = 0; it < max_iter; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double bd = squared_distance(points[i], res.centroids[0]);
      for (int c = 1; c < k; ++c) {
        const double dd = squared_distance(points[i], res.centroids[c]);
        if (dd < bd) {
          bd = dd;
          best = c;
        }
      }
      next[i] = best;
    }
    if (next == res.assignment) break;
    res.assignment = next;

    std::vector<Vec> sums(k, Vec(dim, 0.0));
    Vec mass_c(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const int c = res.assignment[i];
      mass_c[c] += weights[i];
      for (std::size_t j = 0; j < dim; ++j) sums[c][j] += weights[i] * points[i][j];
    }
    for (int c = 0; c < k; ++c)
      if (mass_c[c] > 0.0)
        for (std::size_t j = 0; j < dim; ++j) res.centroids[c][j] = sums[c][j] / mass_c[c];
    for (int c = 0; c < k; ++c) {
      if (mass_c[c] > 0.0) continue;
      int far = -1;
      double best = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!(weights[i] > 0.0)) continue;
        const double score = weights[i] * detail::min_sq_distance(points[i], res.centroids);
        if (score > best) {
          best = score;
          far = static_cast<int>(i);
        }
      }
      res.centroids[c] = points[far];
    }
    res.objective.push_back(detail::weighted_sse(points, weights, res.centroids, res.assignment));
    res.iterations = it + 1;
  }
  return res;
}

/// For each centroid in order, the nearest not-yet-chosen point (ties go to
/// the lower index).
inline std::vector<std::size_t> nearest_to_centroids(std::span<const Vec> points, std::span<const Vec> centroids) {
  if (centroids.size() > points.size()) throw SelectionError("nearest_to_centroids: more centroids than points");
  std::vector<char> taken(points.size(), 0);
  std::vector<std::size_t> out;
  for (const auto& c : centroids) {
    std::size_t best = points.size();
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (taken[i]) continue;
      const double dd = squared_distance(points[i], c);
      if (dd < bd) {
        bd = dd;
        best = i;
      }
    }
    taken[best] = 1;
    out.push_back(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pool scoring

struct ScoredSample {
  int id = 0;
  int domain = 0;
  Vec z;
  Vec probs;
  int pseudo_label = 0;
  Vec domain_logits;
  double entropy = 0.0;
  double margin = 0.0;
  double source_prob = 0.0;
  double aada = 0.0;
  Vec g_cls, g_da;
  GradientUtility gu;
  double weight = 1.0;  // GU weight
};

struct ScoredPool {
  std::vector<ScoredSample> samples;  // ascending id
  DiscriminationMode mode;
  double beta = 4.0;
};

inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

/// Difference between the largest and second largest probability.
inline double margin(std::span<const double> p) {
  if (p.size() < 2) return 1.0;
  double a = -1.0, b = -1.0;
  for (double v : p) {
    if (v > a) {
      b = a;
      a = v;
    } else if (v > b) {
      b = v;
    }
  }
  return a - b;
}

/// AADA score (1 - q_S) / q_S * H.
inline double aada_score(double source_prob, double h) {
  const double q = std::clamp(source_prob, 1e-12, 1.0);
  return (1.0 - q) / q * h;
}

/// Scores every id of the pool against a frozen model.
inline ScoredPool score_pool(const Model& m, const Dataset& ds, std::span<const int> ids,
                             const DiscriminationMode& mode, double beta) {
  ScoredPool pool;
  pool.mode = mode;
  pool.beta = beta;
  pool.samples.reserve(ids.size());
  ForwardCache c;
  for (int id : ids) {
    const Sample& s = ds.sample(id);
    if (s.split != Split::Train || s.domain == 0) throw SelectionError("score_pool: pool must hold target train ids");
    forward(m, s.x, c);
    ScoredSample r;
    r.id = id;
    r.domain = s.domain;
    r.z = c.z;
    r.probs = softmax(c.class_logits);
    r.pseudo_label = static_cast<int>(argmax(r.probs));
    r.domain_logits = c.domain_logits;
    r.entropy = entropy(r.probs);
    r.margin = margin(r.probs);
    r.source_prob = source_probability(c.domain_logits, mode);
    r.aada = aada_score(r.source_prob, r.entropy);
    r.g_cls = grad_cls(m.params, r.z, r.pseudo_label);
    r.g_da = grad_da(m.params, r.z, mode);
    r.gu = gradient_utility(r.g_cls, r.g_da);
    pool.samples.push_back(std::move(r));
  }
  Vec phi;
  for (const auto& r : pool.samples) phi.push_back(r.gu.phi);
  if (!phi.empty()) {
    const Vec w = gu_weights(phi, beta);
    for (std::size_t i = 0; i < w.size(); ++i) pool.samples[i].weight = w[i];
  }
  return pool;
}

// ---------------------------------------------------------------------------
// Selection strategies

enum class Strategy { Random, Entropy, Margin, Coreset, Badge, Aada, Clue, GreedyMmd, GuKMeans };

inline Strategy parse_strategy(std::string_view name) {
  if (name == "random") return Strategy::Random;
  if (name == "entropy") return Strategy::Entropy;
  if (name == "margin") return Strategy::Margin;
  if (name == "coreset") return Strategy::Coreset;
  if (name == "badge") return Strategy::Badge;
  if (name == "aada") return Strategy::Aada;
  if (name == "clue") return Strategy::Clue;
  if (name == "greedy-mmd" || name == "lamda") return Strategy::GreedyMmd;
  if (name == "gu-kmeans") return Strategy::GuKMeans;
  throw ConfigError("unknown sampler '" + std::string(name) + "'");
}

inline std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Random: return "random";
    case Strategy::Entropy: return "entropy";
    case Strategy::Margin: return "margin";
    case Strategy::Coreset: return "coreset";
    case Strategy::Badge: return "badge";
    case Strategy::Aada: return "aada";
    case Strategy::Clue: return "clue";
    case Strategy::GreedyMmd: return "greedy-mmd";
    case Strategy::GuKMeans: return "gu-kmeans";
  }
  return {};
}

struct SelectionResult {
  std::vector<int> ids;          // in selection order
  std::vector<int> per_domain;   // index = domain; [0] stays 0
};

/// Indices of the `b` largest scores; ties go to the lower index (= lower id).
inline std::vector<std::size_t> top_b(std::span<const double> scores, std::size_t b) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t c) { return scores[a] > scores[c]; });
  idx.resize(b);
  return idx;
}

/// Greedy k-center. Starts from the distances to `seeds`; without seeds the
/// first centre is the point whose farthest neighbour is nearest.
inline std::vector<std::size_t> k_center_greedy(std::span<const Vec> points, std::span<const Vec> seeds,
                                                std::size_t b) {
  const std::size_t n = points.size();
  if (b > n) throw SelectionError("k_center_greedy: budget exceeds pool");
  std::vector<std::size_t> out;
  if (b == 0) return out;
  Vec mind(n, std::numeric_limits<double>::infinity());
  for (const auto& s : seeds)
    for (std::size_t i = 0; i < n; ++i) mind[i] = std::min(mind[i], squared_distance(points[i], s));
  auto take = [&](std::size_t c) {
    out.push_back(c);
    for (std::size_t i = 0; i < n; ++i) mind[i] = std::min(mind[i], squared_distance(points[i], points[c]));
  };
  if (seeds.empty()) {
    std::size_t best = 0;
    double br = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      double r = 0.0;
      for (std::size_t j = 0; j < n; ++j) r = std::max(r, squared_distance(points[i], points[j]));
      if (r < br) {
        br = r;
        best = i;
      }
    }
    take(best);
  }
  std::vector<char> chosen(n, 0);
  for (auto c : out) chosen[c] = 1;
  while (out.size() < b) {
    std::size_t far = n;
    double fd = -1.0;
    for (std::size_t i = 0; i < n; ++i)
      if (!chosen[i] && mind[i] > fd) {
        fd = mind[i];
        far = i;
      }
    chosen[far] = 1;
    take(far);
  }
  return out;
}

/// Largest distance from any point to its nearest selected centre.
inline double covering_radius(std::span<const Vec> points, std::span<const std::size_t> centers) {
  double r = 0.0;
  for (const auto& p : points) {
    double d = std::numeric_limits<double>::infinity();
    for (auto c : centers) d = std::min(d, distance(p, points[c]));
    r = std::max(r, d);
  }
  return r;
}

/// BADGE: k-means++ seeding over gradient embeddings (p - onehot(y^)) (x) z.
inline std::vector<std::size_t> badge_select(const ScoredPool& pool, std::size_t b, std::uint64_t seed) {
  const std::size_t n = pool.samples.size();
  std::vector<Vec> emb(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = pool.samples[i];
    for (std::size_t k = 0; k < s.probs.size(); ++k) {
      const double g = s.probs[k] - (static_cast<int>(k) == s.pseudo_label ? 1.0 : 0.0);
      for (double zj : s.z) emb[i].push_back(g * zj);
    }
  }
  std::vector<std::size_t> out;
  if (b == 0) return out;
  std::size_t first = 0;
  double bn = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double nn = l2_norm(emb[i]);
    if (nn > bn) {
      bn = nn;
      first = i;
    }
  }
  Rng rng(seed);
  std::vector<char> chosen(n, 0);
  Vec d2(n, std::numeric_limits<double>::infinity());
  auto take = [&](std::size_t c) {
    out.push_back(c);
    chosen[c] = 1;
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(emb[i], emb[c]));
  };
  take(first);
  Vec mass(n);
  while (out.size() < b) {
    for (std::size_t i = 0; i < n; ++i) mass[i] = chosen[i] ? 0.0 : d2[i];
    int pick = detail::sample_proportional(mass, rng);
    if (pick < 0)
      for (std::size_t i = 0; i < n && pick < 0; ++i)
        if (!chosen[i]) pick = static_cast<int>(i);
    take(static_cast<std::size_t>(pick));
  }
  return out;
}

struct MmdSelection {
  std::vector<std::size_t> chosen;
  double mmd2 = 0.0;  // squared MMD between the chosen subset and the pool
  double bandwidth = 1.0;
};

/// Median pairwise Euclidean distance (1 when the pool is degenerate).
inline double median_pairwise_distance(std::span<const Vec> points) {
  Vec d;
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t j = i + 1; j < points.size(); ++j) d.push_back(distance(points[i], points[j]));
  if (d.empty()) return 1.0;
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid > 0.0 ? *mid : 1.0;
}

/// Greedily adds the sample that minimises the RBF-kernel MMD^2 between the
/// chosen subset and the whole pool.
inline MmdSelection greedy_mmd(std::span<const Vec> points, std::size_t b) {
  const std::size_t n = points.size();
  if (b > n) throw SelectionError("greedy_mmd: budget exceeds pool");
  MmdSelection res;
  res.bandwidth = median_pairwise_distance(points);
  const double gamma = 1.0 / (2.0 * res.bandwidth * res.bandwidth);
  Mat K(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) K(i, j) = K(j, i) = std::exp(-gamma * squared_distance(points[i], points[j]));
  Vec row_mean(n, 0.0);
  double pool_term = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) row_mean[i] += K(i, j);
    pool_term += row_mean[i];
    row_mean[i] /= static_cast<double>(n);
  }
  pool_term /= static_cast<double>(n) * static_cast<double>(n);

  Vec cross(n, 0.0);  // sum over chosen s of K(s, i)
  std::vector<char> chosen(n, 0);
  double ss = 0.0, sp = 0.0;  // sum K(S,S), sum of row means over S
  for (std::size_t step = 0; step < b; ++step) {
    const double m1 = static_cast<double>(step + 1);
    std::size_t best = n;
    double bv = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) {
      if (chosen[c]) continue;
      const double v = (ss + 2.0 * cross[c] + K(c, c)) / (m1 * m1) - 2.0 * (sp + row_mean[c]) / m1;
      if (v < bv) {
        bv = v;
        best = c;
      }
    }
    chosen[best] = 1;
    res.chosen.push_back(best);
    ss += 2.0 * cross[best] + K(best, best);
    sp += row_mean[best];
    for (std::size_t i = 0; i < n; ++i) cross[i] += K(best, i);
  }
  if (b > 0) {
    const double m = static_cast<double>(b);
    res.mmd2 = ss / (m * m) - 2.0 * sp / m + pool_term;
  }
  return res;
}

/// Context a selector may need beyond the scored pool.
struct SelectionContext {
  std::vector<Vec> labeled_features;  // encoded labeled target samples (coreset seeds)
  std::uint64_t seed = 0;
  int targets = 0;
};

/// Picks `b` distinct pool members with the given strategy.
inline SelectionResult select(Strategy strategy, const ScoredPool& pool, std::size_t b, const SelectionContext& ctx) {
  const std::size_t n = pool.samples.size();
  if (b > n)
    throw SelectionError("select: budget " + std::to_string(b) + " exceeds unlabeled pool of " + std::to_string(n));
  std::vector<Vec> z(n);
  Vec scores(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = pool.samples[i].z;

  std::vector<std::size_t> picked;
  switch (strategy) {
    case Strategy::Random: {
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), 0);
      Rng rng(ctx.seed);
      rng.shuffle(idx);
      picked.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(b));
      break;
    }
    case Strategy::Entropy:
      for (std::size_t i = 0; i < n; ++i) scores[i] = pool.samples[i].entropy;
      picked = top_b(scores, b);
      break;
    case Strategy::Margin:
      for (std::size_t i = 0; i < n; ++i) scores[i] = -pool.samples[i].margin;
      picked = top_b(scores, b);
      break;
    case Strategy::Aada:
      for (std::size_t i = 0; i < n; ++i) scores[i] = pool.samples[i].aada;
      picked = top_b(scores, b);
      break;
    case Strategy::Coreset:
      picked = k_center_greedy(z, ctx.labeled_features, b);
      break;
    case Strategy::Badge:
      picked = badge_select(pool, b, ctx.seed);
      break;
    case Strategy::GreedyMmd:
      picked = greedy_mmd(z, b).chosen;
      break;
    case Strategy::Clue:
    case Strategy::GuKMeans: {
      if (b == 0) break;
      for (std::size_t i = 0; i < n; ++i)
        scores[i] = strategy == Strategy::Clue ? pool.samples[i].entropy : pool.samples[i].weight;
      std::size_t positive = 0;
      for (double w : scores) positive += w > 0.0 ? 1 : 0;
      if (positive < b) {
        warn("select: fewer positively weighted samples than the budget; using uniform weights");
        std::fill(scores.begin(), scores.end(), 1.0);
      }
      const auto km = weighted_kmeans(z, scores, static_cast<int>(b), ctx.seed);
      picked = nearest_to_centroids(z, km.centroids);
      break;
    }
  }

  SelectionResult res;
  res.per_domain.assign(static_cast<std::size_t>(ctx.targets) + 1, 0);
  for (auto i : picked) {
    const auto& s = pool.samples[i];
    res.ids.push_back(s.id);
    if (s.domain >= static_cast<int>(res.per_domain.size())) res.per_domain.resize(s.domain + 1, 0);
    ++res.per_domain[s.domain];
  }
  return res;
}

}  // namespace mtada
