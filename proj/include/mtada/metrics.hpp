#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "mtada/data.hpp"
#include "mtada/errors.hpp"
#include "mtada/model.hpp"
#include "mtada/numerics.hpp"

namespace mtada {

inline int predict(const Model& m, std::span<const double> x) {
  ForwardCache c;
  forward(m, x, c);
  return static_cast<int>(argmax(c.class_logits));
}

/// Fraction of argmax-correct predictions over `ids`.
inline double accuracy(const Model& m, const Dataset& ds, std::span<const int> ids) {
  if (ids.empty()) throw ConfigError("accuracy: empty sample set");
  std::size_t correct = 0;
  ForwardCache c;
  for (int id : ids) {
    const Sample& s = ds.sample(id);
    forward(m, s.x, c);
    if (static_cast<int>(argmax(c.class_logits)) == s.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ids.size());
}

inline double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  require_shape(predicted.size() == truth.size(), "accuracy: length mismatch");
  if (truth.empty()) throw ConfigError("accuracy: empty sample set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(truth.size());
}

inline double macro_average(std::span<const double> per_target) {
  if (per_target.empty()) throw ConfigError("macro_average: no targets");
  double s = 0.0;
  for (double a : per_target) s += a;
  return s / static_cast<double>(per_target.size());
}

inline std::vector<Vec> encode(const Model& m, const Dataset& ds, std::span<const int> ids) {
  std::vector<Vec> out;
  out.reserve(ids.size());
  ForwardCache c;
  for (int id : ids) {
    forward(m, ds.sample(id).x, c);
    out.push_back(c.z);
  }
  return out;
}

/// Mean Euclidean distance over all ordered cross pairs (a, b).
inline double domain_distance(std::span<const Vec> a, std::span<const Vec> b) {
  if (a.empty() || b.empty()) throw ConfigError("domain_distance: empty feature set");
  double s = 0.0;
  for (const auto& x : a)
    for (const auto& y : b) s += distance(x, y);
  return s / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

/// Mean distance over unordered pairs of distinct source samples.
inline double source_self_distance(std::span<const Vec> source) {
  const std::size_t n = source.size();
  if (n < 2) throw ConfigError("source_self_distance: need at least 2 source samples");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) s += distance(source[i], source[j]);
  const double d = 2.0 * s / (static_cast<double>(n) * static_cast<double>(n - 1));
  if (!(d > 0.0)) throw ConfigError("source_self_distance: all source features coincide");
  return d;
}

inline double normalized_domain_distance(std::span<const Vec> a, std::span<const Vec> b,
                                         std::span<const Vec> source) {
  return domain_distance(a, b) / source_self_distance(source);
}

/// Symmetric matrix of normalised distances between domain feature sets;
/// features[0] is the source.
struct DomainDistanceMatrix {
  std::size_t size = 0;
  double source_self = 0.0;
  Mat normalized;

  /// Mean of the off-diagonal entries.
  double average_off_diagonal() const {
    if (size < 2) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < size; ++i)
      for (std::size_t j = 0; j < size; ++j)
        if (i != j) s += normalized(i, j);
    return s / static_cast<double>(size * (size - 1));
  }
};

inline DomainDistanceMatrix domain_distance_matrix(std::span<const std::vector<Vec>> features) {
  if (features.empty()) throw ConfigError("domain_distance_matrix: no domains");
  DomainDistanceMatrix out;
  out.size = features.size();
  out.source_self = source_self_distance(features[0]);
  out.normalized = Mat(out.size, out.size);
  for (std::size_t i = 0; i < out.size; ++i)
    for (std::size_t j = i; j < out.size; ++j)
      out.normalized(i, j) = out.normalized(j, i) = domain_distance(features[i], features[j]) / out.source_self;
  return out;
}

// ---------------------------------------------------------------------------
// PCA

struct Pca2d {
  Vec mean;
  std::array<Vec, 2> components;    // unit vectors, or zero when there is no variance left
  std::array<double, 2> variance{};  // eigenvalues of the covariance
  std::vector<std::array<double, 2>> projections;
};

/// Top eigenpair of a symmetric PSD matrix by power iteration, started from
/// the column with the largest diagonal entry. Returns a zero vector when the
/// matrix is numerically zero.
inline std::pair<Vec, double> power_iteration(const Mat& A, int max_iter = 200, double tol = 1e-9) {
  const std::size_t d = A.rows;
  double trace = 0.0;
  std::size_t col = 0;
  for (std::size_t i = 0; i < d; ++i) {
    trace += std::abs(A(i, i));
    if (A(i, i) > A(col, col)) col = i;
  }
  Vec v(d, 0.0);
  if (!(trace > 0.0)) return {v, 0.0};
  for (std::size_t i = 0; i < d; ++i) v[i] = A(i, col);
  double nv = l2_norm(v);
  if (nv <= 1e-12 * trace) return {Vec(d, 0.0), 0.0};
  for (double& x : v) x /= nv;
  Vec w(d);
  for (int it = 0; it < max_iter; ++it) {
    matvec(A, v, w);
    const double nw = l2_norm(w);
    if (nw <= 1e-12 * trace) return {Vec(d, 0.0), 0.0};
    double delta = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      w[i] /= nw;
      delta = std::max(delta, std::abs(w[i] - v[i]));
    }
    v.swap(w);
    if (delta < tol) break;
  }
  matvec(A, v, w);
  const double lambda = dot(v, w);
  for (double x : v)
    if (std::abs(x) > 1e-12) {
      if (x < 0.0)
        for (double& y : v) y = -y;
      break;
    }
  return {v, lambda};
}

/// Projects mean-centred features onto the top two covariance eigenvectors
/// (power iteration with deflation).
inline Pca2d pca_2d(std::span<const Vec> features) {
  const std::size_t n = features.size();
  if (n < 2) throw ConfigError("pca_2d: need at least 2 samples");
  const std::size_t d = features[0].size();
  Pca2d out;
  out.mean.assign(d, 0.0);
  for (const auto& f : features)
    for (std::size_t j = 0; j < d; ++j) out.mean[j] += f[j];
  for (double& v : out.mean) v /= static_cast<double>(n);
  Mat cov(d, d);
  for (const auto& f : features)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) cov(i, j) += (f[i] - out.mean[i]) * (f[j] - out.mean[j]);
  for (double& v : cov.data) v /= static_cast<double>(n - 1);
  double trace = 0.0;
  for (std::size_t i = 0; i < d; ++i) trace += cov(i, i);

  for (int k = 0; k < 2; ++k) {
    auto [v, lambda] = power_iteration(cov);
    if (lambda <= 1e-12 * trace) {
      v.assign(d, 0.0);
      lambda = 0.0;
    }
    out.components[k] = v;
    out.variance[k] = lambda;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) cov(i, j) -= lambda * v[i] * v[j];
  }
  out.projections.reserve(n);
  Vec centred(d);
  for (const auto& f : features) {
    for (std::size_t j = 0; j < d; ++j) centred[j] = f[j] - out.mean[j];
    out.projections.push_back({dot(centred, out.components[0]), dot(centred, out.components[1])});
  }
  return out;
}

}  // namespace mtada
