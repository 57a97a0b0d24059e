#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mtada/data.hpp"
#include "mtada/errors.hpp"
#include "mtada/losses.hpp"
#include "mtada/numerics.hpp"
#include "mtada/rng.hpp"

namespace mtada {

inline void warn(std::string_view msg) { std::cerr << "warning: " << msg << '\n'; }

struct Linear {
  Mat W;
  Vec b;

  Linear() = default;
  Linear(std::size_t out, std::size_t in) : W(out, in), b(out, 0.0) {}

  std::size_t in() const { return W.cols; }
  std::size_t out() const { return W.rows; }

  friend bool operator==(const Linear&, const Linear&) = default;
};

/// Encoder F (enc1 -> relu -> enc2), classifier C (cls) and discriminator D
/// (disc1 -> relu -> disc2 -> relu -> disc3). Gradients and momentum buffers
/// share this layout.
struct Params {
  Linear enc1, enc2, cls, disc1, disc2, disc3;

  friend bool operator==(const Params&, const Params&) = default;
};

/// Calls fn(name, span) for every parameter block in a fixed order.
template <typename P, typename Fn>
  requires std::same_as<std::remove_const_t<P>, Params>
void for_each_block(P& p, Fn&& fn) {
  auto visit = [&](std::string_view layer, auto& lin) {
    fn(std::string(layer) + ".weight", std::span(lin.W.data));
    fn(std::string(layer) + ".bias", std::span(lin.b));
  };
  visit("enc1", p.enc1);
  visit("enc2", p.enc2);
  visit("cls", p.cls);
  visit("disc1", p.disc1);
  visit("disc2", p.disc2);
  visit("disc3", p.disc3);
}

struct ModelShape {
  int input = 8;
  int hidden = 32;
  int embed = 16;
  int classes = 4;
  int disc_hidden = 32;
  int domain_logits = 2;

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

inline Params zeros_like(const ModelShape& s) {
  Params p;
  p.enc1 = Linear(s.hidden, s.input);
  p.enc2 = Linear(s.embed, s.hidden);
  p.cls = Linear(s.classes, s.embed);
  p.disc1 = Linear(s.disc_hidden, s.embed);
  p.disc2 = Linear(s.disc_hidden, s.disc_hidden);
  p.disc3 = Linear(s.domain_logits, s.disc_hidden);
  return p;
}

inline ModelShape shape_of(const Params& p) {
  return {static_cast<int>(p.enc1.in()),  static_cast<int>(p.enc1.out()), static_cast<int>(p.enc2.out()),
          static_cast<int>(p.cls.out()),  static_cast<int>(p.disc1.out()), static_cast<int>(p.disc3.out())};
}

struct Model {
  ModelShape shape;
  Params params;
  Params momentum;
  double disc_dropout = 0.0;  // 0 disables dropout in D

  friend bool operator==(const Model&, const Model&) = default;
};

/// Uniform(+-1/sqrt(fan_in)) initialisation. Each block draws from its own
/// stream forked by name, so blocks shared between head layouts (e.g. the
/// first two rows of disc3) initialise identically.
inline Model make_model(const ModelShape& shape, const Rng& rng) {
  Model m;
  m.shape = shape;
  m.params = zeros_like(shape);
  m.momentum = zeros_like(shape);
  auto init = [&](std::string_view name, Linear& lin) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(lin.in()));
    Rng wr = rng.fork(std::string(name) + ".weight");
    for (double& v : lin.W.data) v = wr.uniform(-bound, bound);
    Rng br = rng.fork(std::string(name) + ".bias");
    for (double& v : lin.b) v = br.uniform(-bound, bound);
  };
  init("enc1", m.params.enc1);
  init("enc2", m.params.enc2);
  init("cls", m.params.cls);
  init("disc1", m.params.disc1);
  init("disc2", m.params.disc2);
  init("disc3", m.params.disc3);
  return m;
}

// ---------------------------------------------------------------------------
// Forward / backward

struct ForwardCache {
  Vec x, h1_pre, h1, z, class_logits;
  Vec d1_pre, d1, d2_pre, d2, domain_logits;
  Vec mask1, mask2;  // empty when dropout is off
};

inline void affine(const Linear& lin, std::span<const double> x, Vec& out) {
  out.resize(lin.out());
  matvec(lin.W, x, out);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += lin.b[i];
}

inline void relu_into(const Vec& pre, Vec& out) {
  out.resize(pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i) out[i] = pre[i] > 0.0 ? pre[i] : 0.0;
}

inline void dropout_mask(Rng& rng, double rate, std::size_t n, Vec& mask) {
  mask.resize(n);
  const double keep = 1.0 / (1.0 - rate);
  for (double& v : mask) v = rng.uniform() < rate ? 0.0 : keep;
}

/// Runs D on an encoded feature, filling the discriminator part of `c`.
inline void discriminator_forward(const Params& p, std::span<const double> z, ForwardCache& c,
                                  Rng* dropout_rng = nullptr, double dropout = 0.0) {
  affine(p.disc1, z, c.d1_pre);
  relu_into(c.d1_pre, c.d1);
  if (dropout_rng && dropout > 0.0) {
    dropout_mask(*dropout_rng, dropout, c.d1.size(), c.mask1);
    for (std::size_t i = 0; i < c.d1.size(); ++i) c.d1[i] *= c.mask1[i];
  } else {
    c.mask1.clear();
  }
  affine(p.disc2, c.d1, c.d2_pre);
  relu_into(c.d2_pre, c.d2);
  if (dropout_rng && dropout > 0.0) {
    dropout_mask(*dropout_rng, dropout, c.d2.size(), c.mask2);
    for (std::size_t i = 0; i < c.d2.size(); ++i) c.d2[i] *= c.mask2[i];
  } else {
    c.mask2.clear();
  }
  affine(p.disc3, c.d2, c.domain_logits);
}

/// z = F(x), class logits = C(z), domain logits = D(z). Pass a generator to
/// enable the model's discriminator dropout (training only).
inline void forward(const Model& m, std::span<const double> x, ForwardCache& c, Rng* dropout_rng = nullptr) {
  require_shape(static_cast<int>(x.size()) == m.shape.input, "forward: x.len != input dim");
  c.x.assign(x.begin(), x.end());
  affine(m.params.enc1, x, c.h1_pre);
  relu_into(c.h1_pre, c.h1);
  affine(m.params.enc2, c.h1, c.z);
  affine(m.params.cls, c.z, c.class_logits);
  discriminator_forward(m.params, c.z, c, dropout_rng, m.disc_dropout);
}

inline ForwardCache forward(const Model& m, std::span<const double> x) {
  ForwardCache c;
  forward(m, x, c);
  return c;
}

/// Backpropagates d(loss)/d(domain logits) through D. Accumulates D's
/// parameter gradients into `grads` when non-null and returns d/dz.
inline Vec discriminator_backward(const Params& p, const ForwardCache& c, std::span<const double> d_logits,
                                  Params* grads) {
  Vec g2(p.disc3.in(), 0.0);
  matvec_transposed_add(p.disc3.W, d_logits, g2);
  for (std::size_t i = 0; i < g2.size(); ++i) {
    if (!c.mask2.empty()) g2[i] *= c.mask2[i];
    if (!(c.d2_pre[i] > 0.0)) g2[i] = 0.0;
  }
  Vec g1(p.disc2.in(), 0.0);
  matvec_transposed_add(p.disc2.W, g2, g1);
  for (std::size_t i = 0; i < g1.size(); ++i) {
    if (!c.mask1.empty()) g1[i] *= c.mask1[i];
    if (!(c.d1_pre[i] > 0.0)) g1[i] = 0.0;
  }
  Vec dz(p.disc1.in(), 0.0);
  matvec_transposed_add(p.disc1.W, g1, dz);
  if (grads) {
    outer_add(d_logits, c.d2, grads->disc3.W);
    for (std::size_t i = 0; i < d_logits.size(); ++i) grads->disc3.b[i] += d_logits[i];
    outer_add(g2, c.d1, grads->disc2.W);
    for (std::size_t i = 0; i < g2.size(); ++i) grads->disc2.b[i] += g2[i];
    outer_add(g1, c.z, grads->disc1.W);
    for (std::size_t i = 0; i < g1.size(); ++i) grads->disc1.b[i] += g1[i];
  }
  return dz;
}

/// Accumulates parameter gradients for one sample. Class-logit gradients flow
/// into C and F normally. Domain-logit gradients train D as given and reach F
/// through the gradient reversal layer, i.e. multiplied by -eta.
/// Either upstream span may be empty to skip that branch.
inline void backward(const Params& p, const ForwardCache& c, std::span<const double> d_class_logits,
                     std::span<const double> d_domain_logits, double eta, Params& grads) {
  Vec dz(p.enc2.out(), 0.0);
  if (!d_class_logits.empty()) {
    outer_add(d_class_logits, c.z, grads.cls.W);
    for (std::size_t i = 0; i < d_class_logits.size(); ++i) grads.cls.b[i] += d_class_logits[i];
    matvec_transposed_add(p.cls.W, d_class_logits, dz);
  }
  if (!d_domain_logits.empty()) {
    const Vec dz_dom = discriminator_backward(p, c, d_domain_logits, &grads);
    for (std::size_t i = 0; i < dz.size(); ++i) dz[i] -= eta * dz_dom[i];
  }
  outer_add(dz, c.h1, grads.enc2.W);
  for (std::size_t i = 0; i < dz.size(); ++i) grads.enc2.b[i] += dz[i];
  Vec gh(p.enc1.out(), 0.0);
  matvec_transposed_add(p.enc2.W, dz, gh);
  for (std::size_t i = 0; i < gh.size(); ++i)
    if (!(c.h1_pre[i] > 0.0)) gh[i] = 0.0;
  outer_add(gh, c.x, grads.enc1.W);
  for (std::size_t i = 0; i < gh.size(); ++i) grads.enc1.b[i] += gh[i];
}

/// Classification loss evaluated directly on an encoded feature; d_z is the
/// gradient w.r.t. z through the linear head, C^T (p - onehot(y)).
inline LossBundle class_loss_at(const Params& p, std::span<const double> z, int y) {
  Vec logits;
  affine(p.cls, z, logits);
  LossBundle out = cls_loss(logits, y);
  out.d_z.assign(z.size(), 0.0);
  matvec_transposed_add(p.cls.W, out.d_logits, out.d_z);
  return out;
}

/// Domain loss for label `domain` evaluated on an encoded feature, with its
/// plain (non-reversed) gradient w.r.t. z.
inline LossBundle domain_loss_at(const Params& p, std::span<const double> z, int domain,
                                 const DiscriminationMode& mode) {
  ForwardCache c;
  c.z.assign(z.begin(), z.end());
  discriminator_forward(p, z, c);
  LossBundle out = dom_loss(c.domain_logits, domain, mode);
  out.d_z = discriminator_backward(p, c, out.d_logits, nullptr);
  return out;
}

// ---------------------------------------------------------------------------
// Schedules and optimiser

enum class Phase { Pretrain, Active };

/// Gradient reversal weight: 2 / (1 + exp(-10 p)) - 1 while pretraining,
/// constant 1 in active stages.
inline double grl_weight(double p, Phase phase) {
  if (p < 0.0 || p > 1.0) {
    warn("grl_weight: progress " + std::to_string(p) + " clamped to [0, 1]");
    p = std::clamp(p, 0.0, 1.0);
  }
  if (phase == Phase::Active) return 1.0;
  return 2.0 / (1.0 + std::exp(-10.0 * p)) - 1.0;
}

struct OptimizerConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.005;
  double decay_power = 0.75;
  double decay_q = 10.0;
  double backbone_lr_ratio = 1.0;  // applied to enc1, the layer below the feature projection
};

/// lr * (1 + q p)^-0.75
inline double lr_at(const OptimizerConfig& cfg, double p) {
  return cfg.lr * std::pow(1.0 + cfg.decay_q * p, -cfg.decay_power);
}

/// v <- momentum v + (g + wd theta);  theta <- theta - lr v
inline void sgd_step(Model& m, const Params& grads, const OptimizerConfig& cfg, double p) {
  if (!(cfg.lr > 0.0)) throw ConfigError("sgd_step: learning rate must be > 0");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) throw ConfigError("sgd_step: momentum must be in [0, 1)");
  std::vector<std::pair<std::string, std::span<const double>>> g;
  for_each_block(grads, [&](const std::string& name, std::span<const double> s) { g.emplace_back(name, s); });
  for (const auto& [name, s] : g)
    if (!all_finite(s)) throw NumericError("sgd_step: non-finite gradient in block " + name);

  std::vector<std::span<double>> theta, vel;
  for_each_block(m.params, [&](const std::string&, std::span<double> s) { theta.push_back(s); });
  for_each_block(m.momentum, [&](const std::string&, std::span<double> s) { vel.push_back(s); });
  const double lr = lr_at(cfg, p);
  for (std::size_t b = 0; b < g.size(); ++b) {
    const bool backbone = g[b].first.starts_with("enc1.");
    const double step = backbone ? lr * cfg.backbone_lr_ratio : lr;
    auto gs = g[b].second;
    auto ts = theta[b];
    auto vs = vel[b];
    for (std::size_t i = 0; i < ts.size(); ++i) {
      vs[i] = cfg.momentum * vs[i] + (gs[i] + cfg.weight_decay * ts[i]);
      ts[i] -= step * vs[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: one CSV line per block, "name,rows,cols,v0,v1,...". Momentum
// blocks are prefixed "momentum.".

inline void write_checkpoint(const Model& m, std::ostream& out) {
  out << "block,rows,cols,values\n";
  out << "disc_dropout,1,1," << format_double(m.disc_dropout) << '\n';
  auto dump = [&](const Params& p, std::string_view prefix) {
    auto layer = [&](std::string_view name, const Linear& lin) {
      out << prefix << name << ".weight," << lin.W.rows << ',' << lin.W.cols;
      for (double v : lin.W.data) out << ',' << format_double(v);
      out << '\n' << prefix << name << ".bias," << lin.b.size() << ",1";
      for (double v : lin.b) out << ',' << format_double(v);
      out << '\n';
    };
    layer("enc1", p.enc1);
    layer("enc2", p.enc2);
    layer("cls", p.cls);
    layer("disc1", p.disc1);
    layer("disc2", p.disc2);
    layer("disc3", p.disc3);
  };
  dump(m.params, "");
  dump(m.momentum, "momentum.");
}

inline void save_checkpoint(const Model& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  write_checkpoint(m, out);
}

inline Model read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "block,rows,cols,values") throw ParseError("line 1: not a checkpoint");
  Model m;
  std::size_t line_no = 1;
  auto read_block = [&](std::string_view expect, std::size_t& rows, std::size_t& cols) {
    ++line_no;
    if (!std::getline(in, line)) throw ParseError("line " + std::to_string(line_no) + ": truncated checkpoint");
    const auto f = detail::split_fields(line);
    if (f.size() < 3 || f[0] != expect)
      throw ParseError("line " + std::to_string(line_no) + ": expected block " + std::string(expect));
    rows = detail::parse_number<std::size_t>(f[1], line_no);
    cols = detail::parse_number<std::size_t>(f[2], line_no);
    if (f.size() != 3 + rows * cols)
      throw ParseError("line " + std::to_string(line_no) + ": value count does not match shape");
    Vec v(rows * cols);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = detail::parse_number<double>(f[3 + i], line_no);
    return v;
  };
  std::size_t r = 0, c = 0;
  m.disc_dropout = read_block("disc_dropout", r, c).at(0);
  auto load = [&](Params& p, const std::string& prefix) {
    auto layer = [&](const std::string& name, Linear& lin) {
      Vec w = read_block(prefix + name + ".weight", r, c);
      lin.W.rows = r;
      lin.W.cols = c;
      lin.W.data = std::move(w);
      std::size_t br = 0, bc = 0;
      lin.b = read_block(prefix + name + ".bias", br, bc);
      if (br != r || bc != 1) throw ParseError("line " + std::to_string(line_no) + ": bias shape mismatch");
    };
    layer("enc1", p.enc1);
    layer("enc2", p.enc2);
    layer("cls", p.cls);
    layer("disc1", p.disc1);
    layer("disc2", p.disc2);
    layer("disc3", p.disc3);
  };
  load(m.params, "");
  load(m.momentum, "momentum.");
  m.shape = shape_of(m.params);
  if (shape_of(m.momentum) != m.shape) throw ParseError("checkpoint: momentum shape differs from parameters");
  return m;
}

inline Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace mtada
