#pragma once

#include <span>
#include <string>
#include <vector>

#include "mtada/data.hpp"
#include "mtada/errors.hpp"
#include "mtada/losses.hpp"
#include "mtada/model.hpp"
#include "mtada/rng.hpp"

namespace mtada {

struct BatchPlan {
  int source = 32;
  int target = 16;   // per-target batch for the domain loss
  int labeled = 8;   // per-target labeled batch (active stages)
};

struct TrainPlan {
  int epochs = 60;  // counted w.r.t. the source loader
  OptimizerConfig opt;
  BatchPlan batch;
  DiscriminationMode mode;
  bool domain_adaptation = true;  // false trains on source classification only
};

struct LossRecord {
  int stage = 0;
  int iter = 0;
  double l_cls = 0.0;
  double l_dom = 0.0;
  double lr = 0.0;
  double eta = 0.0;
  double l_cls_source = 0.0;
  double l_cls_target = 0.0;
};

/// Cycles over a pool in reshuffled passes. A pool smaller than the batch is
/// returned whole and padded with draws made with replacement.
class Loader {
 public:
  Loader(std::vector<int> ids, int batch, Rng rng) : ids_(std::move(ids)), batch_(batch), rng_(rng) {
    order_ = ids_;
    rng_.shuffle(order_);
  }

  bool empty() const { return ids_.empty(); }
  std::size_t size() const { return ids_.size(); }

  void next(std::vector<int>& out) {
    out.clear();
    if (ids_.empty() || batch_ <= 0) return;
    if (ids_.size() < static_cast<std::size_t>(batch_)) {
      out = ids_;
      rng_.shuffle(out);
      while (out.size() < static_cast<std::size_t>(batch_)) out.push_back(ids_[rng_.below(ids_.size())]);
      return;
    }
    while (out.size() < static_cast<std::size_t>(batch_)) {
      if (pos_ == order_.size()) {
        rng_.shuffle(order_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
  }

 private:
  std::vector<int> ids_;
  std::vector<int> order_;
  std::size_t pos_ = 0;
  int batch_;
  Rng rng_;
};

inline int iterations_per_epoch(std::size_t source_count, int batch) {
  return static_cast<int>((source_count + static_cast<std::size_t>(batch) - 1) / static_cast<std::size_t>(batch));
}

namespace detail {

struct StepEntry {
  int id;
  double cls_weight;  // 0 = not in the classification loss
  double dom_weight;  // 0 = not in the domain loss
  bool target_cls;    // classification term belongs to the labeled-target part
};

struct StepLosses {
  double cls_source = 0.0, cls_target = 0.0, dom = 0.0;  // unweighted batch means
};

/// One optimiser update over a composed batch; returns the mean losses.
inline StepLosses train_step(Model& m, const Dataset& ds, std::span<const StepEntry> entries,
                             const DiscriminationMode& mode, double eta, double p, const OptimizerConfig& opt,
                             Rng& dropout_rng) {
  Params grads = zeros_like(m.shape);
  ForwardCache cache;
  StepLosses out;
  std::size_t n_source = 0, n_target = 0;
  Vec d_cls, d_dom;
  for (const auto& e : entries) {
    const Sample& s = ds.sample(e.id);
    forward(m, s.x, cache, m.disc_dropout > 0.0 ? &dropout_rng : nullptr);
    d_cls.clear();
    d_dom.clear();
    if (e.cls_weight != 0.0) {
      LossBundle l = cls_loss(cache.class_logits, s.label);
      if (e.target_cls) {
        out.cls_target += l.value;
        ++n_target;
      } else {
        out.cls_source += l.value;
        ++n_source;
      }
      d_cls = std::move(l.d_logits);
      for (double& v : d_cls) v *= e.cls_weight;
    }
    if (e.dom_weight != 0.0) {
      LossBundle l = dom_loss(cache.domain_logits, s.domain, mode);
      out.dom += e.dom_weight * l.value;
      d_dom = std::move(l.d_logits);
      for (double& v : d_dom) v *= e.dom_weight;
    }
    backward(m.params, cache, d_cls, d_dom, eta, grads);
  }
  if (n_source) out.cls_source /= static_cast<double>(n_source);
  if (n_target) out.cls_target /= static_cast<double>(n_target);
  sgd_step(m, grads, opt, p);
  return out;
}

}  // namespace detail

/// Unsupervised domain adapted pretraining. Each iteration draws a source
/// batch and one batch per target; the classification loss averages over the
/// source batch, the domain loss over the concatenation of all batches, and
/// the update minimises their sum with the reversal weight of the pretrain
/// schedule. Progress runs linearly from 0 over the iterations.
inline Model pretrain(Model m, const Dataset& ds, const TrainPlan& plan, const Rng& rng,
                      std::vector<LossRecord>* log = nullptr, int stage = 0) {
  for (int t = 1; t <= ds.targets(); ++t)
    if (!ds.labeled(t).empty()) throw ConfigError("pretrain: labeled target sets must be empty");
  const auto& src = ds.labeled(0);
  if (src.empty()) throw ConfigError("pretrain: empty source set");
  if (plan.batch.source < 1 || plan.batch.target < 1) throw ConfigError("pretrain: batch sizes must be >= 1");

  Loader source(src, plan.batch.source, rng.fork("source"));
  std::vector<Loader> targets;
  for (int t = 1; t <= ds.targets(); ++t)
    targets.emplace_back(ds.unlabeled(t), plan.batch.target, rng.fork("target" + std::to_string(t)));
  Rng dropout_rng = rng.fork("dropout");

  const int iters = plan.epochs * iterations_per_epoch(src.size(), plan.batch.source);
  std::vector<int> batch;
  std::vector<detail::StepEntry> entries;
  for (int it = 0; it < iters; ++it) {
    const double p = static_cast<double>(it) / iters;
    const double eta = grl_weight(p, Phase::Pretrain);
    entries.clear();
    source.next(batch);
    const std::size_t n_src = batch.size();
    for (int id : batch) entries.push_back({id, 1.0 / static_cast<double>(n_src), 0.0, false});
    if (plan.domain_adaptation) {
      for (auto& l : targets) {
        l.next(batch);
        for (int id : batch) entries.push_back({id, 0.0, 0.0, false});
      }
      const double w = 1.0 / static_cast<double>(entries.size());
      for (auto& e : entries) e.dom_weight = w;
    }
    const auto losses = detail::train_step(m, ds, entries, plan.mode, eta, p, plan.opt, dropout_rng);
    if (log)
      log->push_back({stage, it, losses.cls_source, losses.dom, lr_at(plan.opt, p), eta, losses.cls_source, 0.0});
  }
  return m;
}

/// Domain adapted training of one active stage, finetuning from `m`.
/// l_cls = 0.5 L_cls(source batch) + 0.5 L_cls(concatenated labeled-target
/// batches); l_dom runs over the source batch plus one all-data batch per
/// target (labeled samples included); the reversal weight is fixed at 1.
inline Model active_stage_train(Model m, const Dataset& ds, const TrainPlan& plan, const Rng& rng,
                                std::vector<LossRecord>* log = nullptr, int stage = 1) {
  bool any_labeled = false;
  for (int t = 1; t <= ds.targets(); ++t) any_labeled = any_labeled || !ds.labeled(t).empty();
  if (!any_labeled) throw ConfigError("active_stage_train: no labeled target samples; run sampling first");
  const auto& src = ds.labeled(0);
  if (src.empty()) throw ConfigError("active_stage_train: empty source set");
  if (plan.batch.source < 1 || plan.batch.target < 1 || plan.batch.labeled < 1)
    throw ConfigError("active_stage_train: batch sizes must be >= 1");

  Loader source(src, plan.batch.source, rng.fork("source"));
  std::vector<Loader> labeled, all;
  for (int t = 1; t <= ds.targets(); ++t) {
    labeled.emplace_back(ds.labeled(t), plan.batch.labeled, rng.fork("labeled" + std::to_string(t)));
    std::vector<int> every = ds.labeled(t);
    every.insert(every.end(), ds.unlabeled(t).begin(), ds.unlabeled(t).end());
    std::sort(every.begin(), every.end());
    all.emplace_back(std::move(every), plan.batch.target, rng.fork("target" + std::to_string(t)));
  }
  Rng dropout_rng = rng.fork("dropout");

  const int iters = plan.epochs * iterations_per_epoch(src.size(), plan.batch.source);
  std::vector<int> batch, target_lab;
  std::vector<detail::StepEntry> entries;
  for (int it = 0; it < iters; ++it) {
    const double p = static_cast<double>(it) / iters;
    const double eta = grl_weight(p, Phase::Active);
    entries.clear();
    source.next(batch);
    const std::size_t n_src = batch.size();
    for (int id : batch) entries.push_back({id, 0.5 / static_cast<double>(n_src), 0.0, false});
    if (plan.domain_adaptation) {
      for (auto& l : all) {
        l.next(batch);
        for (int id : batch) entries.push_back({id, 0.0, 0.0, false});
      }
      const double w = 1.0 / static_cast<double>(entries.size());
      for (auto& e : entries) e.dom_weight = w;
    }
    target_lab.clear();
    for (auto& l : labeled) {
      l.next(batch);
      target_lab.insert(target_lab.end(), batch.begin(), batch.end());
    }
    for (int id : target_lab) entries.push_back({id, 0.5 / static_cast<double>(target_lab.size()), 0.0, true});

    const auto losses = detail::train_step(m, ds, entries, plan.mode, eta, p, plan.opt, dropout_rng);
    if (log)
      log->push_back({stage, it, 0.5 * losses.cls_source + 0.5 * losses.cls_target, losses.dom,
                      lr_at(plan.opt, p), eta, losses.cls_source, losses.cls_target});
  }
  return m;
}

}  // namespace mtada
