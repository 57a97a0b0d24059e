#pragma once

#include <cmath>
#include <span>
#include <string>
#include <string_view>

#include "mtada/errors.hpp"
#include "mtada/numerics.hpp"

namespace mtada {

/// How the discriminator head is laid out and trained.
///  Binary:     2 logits   [S, T~]
///  AllWay:     N+1 logits [S, T_1..T_N]
///  Decomposed: N+2 logits [S, T~, T_1..T_N]; loss = L_bin + alpha * L_aw
struct DiscriminationMode {
  enum class Kind { Binary, AllWay, Decomposed };
  Kind kind = Kind::Binary;
  double alpha = 0.0;

  static DiscriminationMode binary() { return {Kind::Binary, 0.0}; }
  static DiscriminationMode all_way() { return {Kind::AllWay, 0.0}; }
  static DiscriminationMode decomposed(double alpha) {
    if (!(alpha >= 0.0)) throw ConfigError("decomposed mode needs alpha >= 0");
    return {Kind::Decomposed, alpha};
  }

  int logit_count(int targets) const {
    switch (kind) {
      case Kind::Binary: return 2;
      case Kind::AllWay: return targets + 1;
      case Kind::Decomposed: return targets + 2;
    }
    return 0;
  }

  std::string name() const {
    switch (kind) {
      case Kind::Binary: return "binary";
      case Kind::AllWay: return "allway";
      case Kind::Decomposed: return "decomposed";
    }
    return {};
  }

  friend bool operator==(const DiscriminationMode&, const DiscriminationMode&) = default;
};

inline DiscriminationMode parse_mode(std::string_view name, double alpha) {
  if (name == "binary") return DiscriminationMode::binary();
  if (name == "allway" || name == "all-way") return DiscriminationMode::all_way();
  if (name == "decomposed") return DiscriminationMode::decomposed(alpha);
  throw ConfigError("unknown discrimination mode '" + std::string(name) + "'");
}

/// Scalar loss with its gradient w.r.t. the logits it was computed from.
/// `d_z` is filled only by the head-aware wrappers in model.hpp.
struct LossBundle {
  double value = 0.0;
  Vec d_logits;
  Vec d_z;
};

/// Softmax cross-entropy: value = -log softmax(logits)_target, grad = p - onehot.
inline LossBundle softmax_cross_entropy(std::span<const double> logits, std::size_t target) {
  require_shape(target < logits.size(), "softmax_cross_entropy: target out of range");
  LossBundle out;
  out.value = log_sum_exp(logits) - logits[target];
  out.d_logits = softmax(logits);
  out.d_logits[target] -= 1.0;
  return out;
}

inline LossBundle cls_loss(std::span<const double> class_logits, int y) {
  require_shape(y >= 0, "cls_loss: negative label");
  return softmax_cross_entropy(class_logits, static_cast<std::size_t>(y));
}

/// Two-channel [S, T~] loss; every target domain collapses onto T~.
inline LossBundle dom_loss_binary(std::span<const double> logits, int domain) {
  require_shape(logits.size() == 2, "dom_loss_binary: need 2 logits");
  return softmax_cross_entropy(logits, domain == 0 ? 0 : 1);
}

/// (N+1)-channel [S, T_1..T_N] loss with the true domain as target.
inline LossBundle dom_loss_allway(std::span<const double> logits, int domain) {
  require_shape(domain >= 0 && static_cast<std::size_t>(domain) < logits.size(),
                "dom_loss_allway: domain out of range");
  return softmax_cross_entropy(logits, static_cast<std::size_t>(domain));
}

/// (N+2)-channel [S, T~, T_1..T_N]. The binary group is channels {0, 1}, the
/// all-way group is channels {0, 2..N+1}; channel S is shared by both.
inline LossBundle dom_loss_decomposed(std::span<const double> logits, int domain, double alpha) {
  require_shape(logits.size() >= 3, "dom_loss_decomposed: need N+2 >= 3 logits");
  const std::size_t n_aw = logits.size() - 1;
  Vec aw_logits(n_aw);
  aw_logits[0] = logits[0];
  for (std::size_t i = 1; i < n_aw; ++i) aw_logits[i] = logits[i + 1];

  const LossBundle bin = dom_loss_binary(logits.first(2), domain);
  const LossBundle aw = dom_loss_allway(aw_logits, domain);

  LossBundle out;
  out.value = bin.value + alpha * aw.value;
  out.d_logits.assign(logits.size(), 0.0);
  out.d_logits[0] = bin.d_logits[0] + alpha * aw.d_logits[0];
  out.d_logits[1] = bin.d_logits[1];
  for (std::size_t i = 1; i < n_aw; ++i) out.d_logits[i + 1] = alpha * aw.d_logits[i];
  return out;
}

inline LossBundle dom_loss(std::span<const double> logits, int domain, const DiscriminationMode& mode) {
  switch (mode.kind) {
    case DiscriminationMode::Kind::Binary: return dom_loss_binary(logits, domain);
    case DiscriminationMode::Kind::AllWay: return dom_loss_allway(logits, domain);
    case DiscriminationMode::Kind::Decomposed: return dom_loss_decomposed(logits, domain, mode.alpha);
  }
  throw ShapeError("dom_loss: unknown mode");
}

/// Probability the discriminator assigns to the source domain. For the
/// decomposed head this is read from the binary group {S, T~}.
inline double source_probability(std::span<const double> logits, const DiscriminationMode& mode) {
  if (mode.kind == DiscriminationMode::Kind::Decomposed) return softmax(logits.first(2))[0];
  return softmax(logits)[0];
}

}  // namespace mtada
