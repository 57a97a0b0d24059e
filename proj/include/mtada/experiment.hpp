#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "mtada/config.hpp"
#include "mtada/data.hpp"
#include "mtada/metrics.hpp"
#include "mtada/model.hpp"
#include "mtada/sampler.hpp"
#include "mtada/trainer.hpp"

namespace mtada {

struct StageError : std::runtime_error {
  StageError(int stage, const std::string& what)
      : std::runtime_error("stage " + std::to_string(stage) + ": " + what), stage(stage) {}
  int stage;
};

struct TargetReport {
  int target = 0;
  double accuracy = 0.0;
  int selected = 0;
  double distance_to_source = 0.0;  // normalised, on test features
};

struct StageReport {
  int stage = 0;
  std::uint64_t seed = 0;
  std::vector<TargetReport> targets;
  double mean_accuracy = 0.0;
  double wall_seconds = 0.0;
};

/// Everything the sampler saw at one stage, for the score and PCA exports.
struct StageTrace {
  int stage = 0;
  ScoredPool pool;
  std::vector<char> selected;  // parallel to pool.samples
  Pca2d pca;
};

struct ExperimentResult {
  std::vector<StageReport> stages;
  std::vector<LossRecord> losses;
  std::vector<StageTrace> traces;
  std::vector<Model> models;          // theta_0 .. theta_s
  std::vector<std::size_t> pool_totals;  // labeled + unlabeled before pretraining and after each stage
  std::set<int> audit;                // every id handed to training or sampling
  Dataset dataset;                    // final annotation state
};

inline StageReport evaluate_stage(const Model& m, const Dataset& ds, int stage) {
  StageReport r;
  r.stage = stage;
  const auto src_test = ds.ids(0, Split::Test);
  const auto src_feat = encode(m, ds, src_test);
  const double self = source_self_distance(src_feat);
  Vec acc;
  for (int t = 1; t <= ds.targets(); ++t) {
    const auto ids = ds.ids(t, Split::Test);
    TargetReport tr;
    tr.target = t;
    tr.accuracy = accuracy(m, ds, ids);
    tr.distance_to_source = domain_distance(encode(m, ds, ids), src_feat) / self;
    acc.push_back(tr.accuracy);
    r.targets.push_back(tr);
  }
  r.mean_accuracy = macro_average(acc);
  return r;
}

/// Pretrain, then `stages` rounds of (score pool -> select -> annotate ->
/// finetune), evaluating on the test partition after every stage.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, Dataset ds) {
  validate(cfg);
  using clock = std::chrono::steady_clock;
  const auto mode = parse_mode(cfg.mode, cfg.alpha);
  const auto strategy = parse_strategy(cfg.sampler);
  const auto budgets = stage_budgets(cfg);
  const Rng root(cfg.seed);

  ExperimentResult res;
  auto audit_pools = [&] {
    for (int m = 0; m <= ds.targets(); ++m) {
      res.audit.insert(ds.labeled(m).begin(), ds.labeled(m).end());
      res.audit.insert(ds.unlabeled(m).begin(), ds.unlabeled(m).end());
    }
  };
  res.pool_totals.push_back(ds.pool_total());

  auto t0 = clock::now();
  Model model = make_model(model_shape(cfg, ds.classes(), ds.targets(), ds.dim()), root.fork("model"));
  model.disc_dropout = cfg.disc_dropout;
  try {
    audit_pools();
    model = pretrain(std::move(model), ds, pretrain_plan(cfg), root.fork("pretrain"), &res.losses, 0);
    StageReport rep = evaluate_stage(model, ds, 0);
    rep.seed = cfg.seed;
    rep.wall_seconds = std::chrono::duration<double>(clock::now() - t0).count();
    res.stages.push_back(rep);
  } catch (const std::exception& e) {
    throw StageError(0, e.what());
  }
  res.models.push_back(model);

  for (int j = 1; j <= cfg.stages; ++j) {
    t0 = clock::now();
    try {
      const auto b = static_cast<std::size_t>(budgets[j - 1]);
      const auto pool_ids = ds.unlabeled_target_union();
      if (b > pool_ids.size())
        throw SelectionError("budget " + std::to_string(b) + " exceeds unlabeled pool of " +
                             std::to_string(pool_ids.size()));
      res.audit.insert(pool_ids.begin(), pool_ids.end());
      StageTrace trace;
      trace.stage = j;
      trace.pool = score_pool(model, ds, pool_ids, mode, cfg.beta);

      SelectionContext ctx;
      ctx.targets = ds.targets();
      ctx.seed = root.fork("select" + std::to_string(j)).next_u64();
      for (int t = 1; t <= ds.targets(); ++t) {
        const auto f = encode(model, ds, ds.labeled(t));
        ctx.labeled_features.insert(ctx.labeled_features.end(), f.begin(), f.end());
        res.audit.insert(ds.labeled(t).begin(), ds.labeled(t).end());
      }
      const SelectionResult sel = select(strategy, trace.pool, b, ctx);

      std::set<int> chosen(sel.ids.begin(), sel.ids.end());
      if (chosen.size() != b) throw SelectionError("sampler returned duplicate ids");
      for (int t = 1; t <= ds.targets(); ++t) {
        std::vector<int> ids;
        for (int id : sel.ids)
          if (ds.sample(id).domain == t) ids.push_back(id);
        ds.annotate(t, ids);
      }
      trace.selected.resize(trace.pool.samples.size());
      std::vector<Vec> feats;
      for (std::size_t i = 0; i < trace.pool.samples.size(); ++i) {
        trace.selected[i] = chosen.count(trace.pool.samples[i].id) ? 1 : 0;
        feats.push_back(trace.pool.samples[i].z);
      }
      if (feats.size() >= 2) trace.pca = pca_2d(feats);
      res.traces.push_back(std::move(trace));

      audit_pools();
      model = active_stage_train(std::move(model), ds, active_plan(cfg), root.fork("stage" + std::to_string(j)),
                                 &res.losses, j);
      StageReport rep = evaluate_stage(model, ds, j);
      rep.seed = cfg.seed;
      for (auto& tr : rep.targets)
        tr.selected = tr.target < static_cast<int>(sel.per_domain.size()) ? sel.per_domain[tr.target] : 0;
      rep.wall_seconds = std::chrono::duration<double>(clock::now() - t0).count();
      res.stages.push_back(rep);
      res.pool_totals.push_back(ds.pool_total());
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(j, e.what());
    }
    res.models.push_back(model);
  }
  res.dataset = std::move(ds);
  return res;
}

inline Dataset make_dataset(const ExperimentConfig& cfg) {
  if (!cfg.data.empty()) return load_csv(cfg.data);
  return generate(cfg.seed, generator_config(cfg));
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) { return run_experiment(cfg, make_dataset(cfg)); }

// ---------------------------------------------------------------------------
// CSV exports

inline void write_stages_csv(const ExperimentResult& r, std::ostream& out) {
  out << "stage,target,accuracy,selected_count,domain_distance_to_source\n";
  for (const auto& s : r.stages)
    for (const auto& t : s.targets)
      out << s.stage << ',' << t.target << ',' << format_double(t.accuracy) << ',' << t.selected << ','
          << format_double(t.distance_to_source) << '\n';
}

inline void write_losses_csv(const ExperimentResult& r, std::ostream& out) {
  out << "stage,iter,l_cls,l_dom,lr,eta\n";
  for (const auto& l : r.losses)
    out << l.stage << ',' << l.iter << ',' << format_double(l.l_cls) << ',' << format_double(l.l_dom) << ','
        << format_double(l.lr) << ',' << format_double(l.eta) << '\n';
}

inline void write_scores_csv(const StageTrace& t, std::ostream& out) {
  out << "id,domain,entropy,margin,phi_cls,corr,phi,weight,selected\n";
  for (std::size_t i = 0; i < t.pool.samples.size(); ++i) {
    const auto& s = t.pool.samples[i];
    out << s.id << ',' << s.domain << ',' << format_double(s.entropy) << ',' << format_double(s.margin) << ','
        << format_double(s.gu.phi_cls) << ',' << format_double(s.gu.corr) << ',' << format_double(s.gu.phi) << ','
        << format_double(s.weight) << ',' << int(t.selected[i]) << '\n';
  }
}

inline void write_pca_csv(const StageTrace& t, std::ostream& out) {
  out << "id,domain,selected,entropy,pc1,pc2\n";
  for (std::size_t i = 0; i < t.pool.samples.size(); ++i) {
    const auto& s = t.pool.samples[i];
    const double pc1 = i < t.pca.projections.size() ? t.pca.projections[i][0] : 0.0;
    const double pc2 = i < t.pca.projections.size() ? t.pca.projections[i][1] : 0.0;
    out << s.id << ',' << s.domain << ',' << int(t.selected[i]) << ',' << format_double(s.entropy) << ','
        << format_double(pc1) << ',' << format_double(pc2) << '\n';
  }
}

}  // namespace mtada
