#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "mtada/errors.hpp"

namespace mtada {

using Vec = std::vector<double>;

// Row-major dense matrix.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Mat&, const Mat&) = default;
};

inline void require_shape(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  require_shape(a.size() == b.size(), "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  require_shape(a.size() == b.size(), "squared_distance: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return s;
}

inline double distance(std::span<const double> a, std::span<const double> b) {
  return std::sqrt(squared_distance(a, b));
}

/// Cosine similarity clamped to [-1, 1]. A zero-norm argument yields 0.
inline double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

/// y = W x
inline void matvec(const Mat& W, std::span<const double> x, std::span<double> y) {
  require_shape(W.cols == x.size(), "matvec: W.cols != x.len");
  require_shape(W.rows == y.size(), "matvec: W.rows != y.len");
  for (std::size_t r = 0; r < W.rows; ++r) {
    const double* w = W.data.data() + r * W.cols;
    double s = 0.0;
    for (std::size_t c = 0; c < W.cols; ++c) s += w[c] * x[c];
    y[r] = s;
  }
}

inline Vec matvec(const Mat& W, std::span<const double> x) {
  Vec y(W.rows);
  matvec(W, x, y);
  return y;
}

/// y += W^T g
inline void matvec_transposed_add(const Mat& W, std::span<const double> g, std::span<double> y) {
  require_shape(W.rows == g.size(), "matvec_transposed: W.rows != g.len");
  require_shape(W.cols == y.size(), "matvec_transposed: W.cols != y.len");
  for (std::size_t r = 0; r < W.rows; ++r) {
    const double gr = g[r];
    const double* w = W.data.data() + r * W.cols;
    for (std::size_t c = 0; c < W.cols; ++c) y[c] += w[c] * gr;
  }
}

/// G += g x^T
inline void outer_add(std::span<const double> g, std::span<const double> x, Mat& G) {
  require_shape(G.rows == g.size() && G.cols == x.size(), "outer_add: shape mismatch");
  for (std::size_t r = 0; r < G.rows; ++r) {
    const double gr = g[r];
    double* out = G.data.data() + r * G.cols;
    for (std::size_t c = 0; c < G.cols; ++c) out[c] += gr * x[c];
  }
}

inline Vec relu(std::span<const double> x) {
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

/// Gradient of relu at pre-activation x given the upstream gradient.
inline Vec relu_grad(std::span<const double> x, std::span<const double> upstream) {
  require_shape(x.size() == upstream.size(), "relu_grad: length mismatch");
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > 0.0 ? upstream[i] : 0.0;
  return g;
}

inline double log_sum_exp(std::span<const double> logits) {
  require_shape(!logits.empty(), "log_sum_exp: empty input");
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double l : logits) s += std::exp(l - m);
  return m + std::log(s);
}

inline Vec softmax(std::span<const double> logits) {
  require_shape(!logits.empty(), "softmax: empty input");
  const double m = *std::max_element(logits.begin(), logits.end());
  Vec p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    s += p[i];
  }
  for (double& v : p) v /= s;
  return p;
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline std::size_t argmax(std::span<const double> v) {
  require_shape(!v.empty(), "argmax: empty input");
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace mtada
