#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mtada/data.hpp"
#include "mtada/errors.hpp"
#include "mtada/losses.hpp"
#include "mtada/model.hpp"
#include "mtada/rng.hpp"
#include "mtada/sampler.hpp"
#include "mtada/trainer.hpp"

namespace mtada {

/// Everything that determines an experiment. Serialised as flat
/// `key = value` lines (lists comma separated, `#` starts a comment).
struct ExperimentConfig {
  std::uint64_t seed = 1;

  int classes = 4;
  int targets = 2;
  int dim = 8;
  int train_per_domain = 300;
  int test_per_domain = 300;
  double class_sep = 3.0;
  double class_std = 1.0;
  // per target domain; the source is never shifted
  std::vector<double> rotation_deg{30.0, 60.0};
  std::vector<double> translation{3.0, 3.0};
  std::vector<double> scale{1.0, 1.0};
  std::vector<double> noise{0.2, 0.2};

  int hidden = 32;
  int embed = 16;
  int disc_hidden = 32;
  double disc_dropout = 0.0;

  std::string mode = "binary";
  double alpha = 0.5;
  std::string sampler = "gu-kmeans";
  double beta = 4.0;

  int stages = 4;
  std::vector<int> budget{10};  // one value for all stages, or one per stage
  int pretrain_epochs = 60;
  int active_epochs = 30;
  int batch_source = 32;
  int batch_target = 16;
  int batch_labeled = 8;

  double lr_pretrain = 0.01;
  double lr_active = 0.002;
  double q_pretrain = 10.0;
  double q_active = 1.0;
  double momentum = 0.9;
  double weight_decay = 0.005;
  double backbone_lr_ratio = 1.0;

  std::string data;  // optional dataset CSV; generated from the seed when empty

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_value(std::string_view key, std::string_view text) {
  const std::string t = trim(text);
  T v{};
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size())
    throw ConfigError("config: bad value '" + t + "' for key " + std::string(key));
  return v;
}

template <typename T>
std::vector<T> parse_list(std::string_view key, std::string_view text) {
  std::vector<T> out;
  if (trim(text).empty()) return out;
  for (auto f : split_fields(text)) out.push_back(parse_value<T>(key, f));
  return out;
}

inline std::string fmt(double v) { return format_double(v); }
inline std::string fmt(int v) { return std::to_string(v); }
inline std::string fmt(std::uint64_t v) { return std::to_string(v); }
inline std::string fmt(const std::string& v) { return v; }
template <typename T>
std::string fmt(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v[i]);
  return s;
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T>
Field field(std::string key, T ExperimentConfig::*member) {
  Field f;
  f.key = key;
  f.set = [key, member](ExperimentConfig& c, std::string_view v) {
    if constexpr (std::is_same_v<T, std::string>)
      c.*member = trim(v);
    else if constexpr (std::is_same_v<T, std::vector<double>>)
      c.*member = parse_list<double>(key, v);
    else if constexpr (std::is_same_v<T, std::vector<int>>)
      c.*member = parse_list<int>(key, v);
    else
      c.*member = parse_value<T>(key, v);
  };
  f.get = [member](const ExperimentConfig& c) { return fmt(c.*member); };
  return f;
}

inline const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> all = {
      field("seed", &C::seed),
      field("classes", &C::classes),
      field("targets", &C::targets),
      field("dim", &C::dim),
      field("train_per_domain", &C::train_per_domain),
      field("test_per_domain", &C::test_per_domain),
      field("class_sep", &C::class_sep),
      field("class_std", &C::class_std),
      field("rotation_deg", &C::rotation_deg),
      field("translation", &C::translation),
      field("scale", &C::scale),
      field("noise", &C::noise),
      field("hidden", &C::hidden),
      field("embed", &C::embed),
      field("disc_hidden", &C::disc_hidden),
      field("disc_dropout", &C::disc_dropout),
      field("mode", &C::mode),
      field("alpha", &C::alpha),
      field("sampler", &C::sampler),
      field("beta", &C::beta),
      field("stages", &C::stages),
      field("budget", &C::budget),
      field("pretrain_epochs", &C::pretrain_epochs),
      field("active_epochs", &C::active_epochs),
      field("batch_source", &C::batch_source),
      field("batch_target", &C::batch_target),
      field("batch_labeled", &C::batch_labeled),
      field("lr_pretrain", &C::lr_pretrain),
      field("lr_active", &C::lr_active),
      field("q_pretrain", &C::q_pretrain),
      field("q_active", &C::q_active),
      field("momentum", &C::momentum),
      field("weight_decay", &C::weight_decay),
      field("backbone_lr_ratio", &C::backbone_lr_ratio),
      field("data", &C::data),
  };
  return all;
}

}  // namespace detail

inline void set_config_value(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& f : detail::fields())
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  throw ConfigError("config: unknown key '" + std::string(key) + "'");
}

/// Applies `key = value` lines on top of `cfg`.
inline void apply_config_text(ExperimentConfig& cfg, std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    set_config_value(cfg, detail::trim(std::string_view(t).substr(0, eq)), std::string_view(t).substr(eq + 1));
  }
}

inline ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  apply_config_text(cfg, text);
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Every key in a fixed order; parse_config(to_text(c)) == c.
inline std::string to_text(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : detail::fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

inline std::map<std::string, std::string> config_map(const ExperimentConfig& cfg) {
  std::map<std::string, std::string> m;
  for (const auto& f : detail::fields()) m[f.key] = f.get(cfg);
  return m;
}

// ---------------------------------------------------------------------------
// Derived settings

inline void validate(const ExperimentConfig& c) {
  auto per_target = [&](const auto& v, const char* name) {
    if (static_cast<int>(v.size()) != c.targets)
      throw ConfigError(std::string("config: ") + name + " needs one entry per target domain");
  };
  per_target(c.rotation_deg, "rotation_deg");
  per_target(c.translation, "translation");
  per_target(c.scale, "scale");
  per_target(c.noise, "noise");
  if (c.stages < 0) throw ConfigError("config: stages must be >= 0");
  if (c.budget.size() != 1 && static_cast<int>(c.budget.size()) != c.stages)
    throw ConfigError("config: budget needs one value or one per stage");
  for (int b : c.budget)
    if (b < 1) throw ConfigError("config: budgets must be >= 1");
  if (c.pretrain_epochs < 0 || c.active_epochs < 0) throw ConfigError("config: epochs must be >= 0");
  if (c.hidden < 1 || c.embed < 1 || c.disc_hidden < 1) throw ConfigError("config: layer sizes must be >= 1");
  if (!(c.disc_dropout >= 0.0 && c.disc_dropout < 1.0)) throw ConfigError("config: disc_dropout must be in [0, 1)");
  if (!(c.beta >= 0.0)) throw ConfigError("config: beta must be >= 0");
  parse_mode(c.mode, c.alpha);
  parse_strategy(c.sampler);
}

inline std::vector<int> stage_budgets(const ExperimentConfig& c) {
  if (c.budget.size() == 1) return std::vector<int>(static_cast<std::size_t>(c.stages), c.budget[0]);
  return c.budget;
}

/// Shift per domain. Translations point along a unit direction drawn from
/// the seed, one per target.
inline GeneratorConfig generator_config(const ExperimentConfig& c) {
  validate(c);
  GeneratorConfig g;
  g.classes = c.classes;
  g.targets = c.targets;
  g.dim = c.dim;
  g.train_per_domain = c.train_per_domain;
  g.test_per_domain = c.test_per_domain;
  g.class_sep = c.class_sep;
  g.class_std = c.class_std;
  g.shifts.push_back(DomainShift{});
  const Rng base(c.seed);
  for (int t = 0; t < c.targets; ++t) {
    DomainShift s;
    s.rotation = c.rotation_deg[t] * std::numbers::pi / 180.0;
    s.scale = c.scale[t];
    s.noise = c.noise[t];
    if (c.translation[t] != 0.0) {
      Rng r = base.fork("translation" + std::to_string(t + 1));
      Vec dir(c.dim);
      double n = 0.0;
      while (n < 1e-12) {
        for (double& v : dir) v = r.normal();
        n = l2_norm(dir);
      }
      for (double& v : dir) v *= c.translation[t] / n;
      s.translation = std::move(dir);
    }
    g.shifts.push_back(std::move(s));
  }
  return g;
}

inline ModelShape model_shape(const ExperimentConfig& c, int classes, int targets, int dim) {
  return {dim, c.hidden, c.embed, classes, c.disc_hidden, parse_mode(c.mode, c.alpha).logit_count(targets)};
}

inline TrainPlan pretrain_plan(const ExperimentConfig& c) {
  TrainPlan p;
  p.epochs = c.pretrain_epochs;
  p.opt = {c.lr_pretrain, c.momentum, c.weight_decay, 0.75, c.q_pretrain, c.backbone_lr_ratio};
  p.batch = {c.batch_source, c.batch_target, c.batch_labeled};
  p.mode = parse_mode(c.mode, c.alpha);
  return p;
}

inline TrainPlan active_plan(const ExperimentConfig& c) {
  TrainPlan p = pretrain_plan(c);
  p.epochs = c.active_epochs;
  p.opt.lr = c.lr_active;
  p.opt.decay_q = c.q_active;
  return p;
}

}  // namespace mtada
