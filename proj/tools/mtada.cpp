// mtada: generate datasets, run staged active domain adaptation experiments,
// aggregate run directories and evaluate checkpoints.

#include <CLI11.hpp>
#include <openssl/evp.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "mtada/config.hpp"
#include "mtada/experiment.hpp"
#include "mtada/report.hpp"

namespace fs = std::filesystem;
using namespace mtada;

namespace {

/// git-style blob id: sha1("blob <size>\0" + content).
std::string git_blob_sha1(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx, content.data(), content.size()) != 1 || EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("sha1 digest failed");
  }
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw std::runtime_error("write failed for " + path.string());
}

void prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory " + dir.string() + ": " + ec.message());
  if (!fs::is_directory(dir)) throw std::runtime_error(dir.string() + " is not a directory");
}

/// "1-5", "1,3,9" or a mix such as "1-3,7".
std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = detail::trim(part);
    if (part.empty()) continue;
    const auto dash = part.find('-');
    try {
      if (dash == std::string::npos) {
        out.push_back(std::stoull(part));
      } else {
        const auto lo = std::stoull(part.substr(0, dash)), hi = std::stoull(part.substr(dash + 1));
        if (hi < lo) throw ConfigError("bad seed range " + part);
        for (auto s = lo; s <= hi; ++s) out.push_back(s);
      }
    } catch (const std::logic_error&) {
      throw ConfigError("bad seed list '" + text + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty seed list");
  return out;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ','))
    if (!detail::trim(part).empty()) out.push_back(detail::trim(part));
  return out;
}

/// Options shared by every subcommand that builds an ExperimentConfig.
/// Precedence, lowest first: built-in defaults, MTADA_SEED, --config file,
/// --set pairs, dedicated flags.
struct ConfigOptions {
  std::string file;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  std::string mode, sampler, budget, data;
  double alpha = 0.0, beta = 0.0;
  int stages = 0;
  CLI::Option *seed_opt = nullptr, *alpha_opt = nullptr, *beta_opt = nullptr, *stages_opt = nullptr;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", file, "Config file of `key = value` lines")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "Override one key, e.g. --set lr_active=0.003 (repeatable)");
    seed_opt = app->add_option("--seed", seed, "Seed (falls back to MTADA_SEED, then 1)");
    app->add_option("--mode", mode, "binary | allway | decomposed");
    alpha_opt = app->add_option("--alpha", alpha, "All-way weight of the decomposed loss");
    app->add_option("--sampler", sampler, "random | entropy | margin | coreset | badge | aada | clue | greedy-mmd | gu-kmeans");
    beta_opt = app->add_option("--beta", beta, "Exponent of the gradient utility weights");
    stages_opt = app->add_option("--stages", stages, "Number of active stages");
    app->add_option("--budget", budget, "Budget per stage: one value or a comma list");
    app->add_option("--data", data, "Dataset CSV to use instead of generating one");
  }

  ExperimentConfig build() const {
    ExperimentConfig cfg;
    if (const char* env = std::getenv("MTADA_SEED"); env && *env) set_config_value(cfg, "seed", env);
    if (!file.empty()) {
      std::ifstream in(file, std::ios::binary);
      std::stringstream ss;
      ss << in.rdbuf();
      apply_config_text(cfg, ss.str());
    }
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      set_config_value(cfg, detail::trim(kv.substr(0, eq)), kv.substr(eq + 1));
    }
    if (seed_opt->count()) cfg.seed = seed;
    if (!mode.empty()) cfg.mode = mode;
    if (alpha_opt->count()) cfg.alpha = alpha;
    if (!sampler.empty()) cfg.sampler = sampler;
    if (beta_opt->count()) cfg.beta = beta;
    if (stages_opt->count()) cfg.stages = stages;
    if (!budget.empty()) set_config_value(cfg, "budget", budget);
    if (!data.empty()) cfg.data = data;
    validate(cfg);
    return cfg;
  }
};

struct RunOutcome {
  ExperimentConfig cfg;
  fs::path dir;
  std::vector<StageReport> stages;
  std::string error;
};

/// Runs one experiment and writes its directory.
RunOutcome run_one(const ExperimentConfig& cfg, const fs::path& dir, bool checkpoints) {
  RunOutcome out{cfg, dir, {}, {}};
  try {
    prepare_dir(dir);
    Dataset ds = make_dataset(cfg);
    const std::string echo = to_text(cfg) + "# dataset_sha1 = " + git_blob_sha1(to_csv(ds)) + "\n";
    write_file(dir / "config.echo", echo);

    const ExperimentResult res = run_experiment(cfg, std::move(ds));
    std::ostringstream stages, losses;
    write_stages_csv(res, stages);
    write_losses_csv(res, losses);
    write_file(dir / "stages.csv", stages.str());
    write_file(dir / "losses.csv", losses.str());
    for (const auto& t : res.traces) {
      std::ostringstream scores, pca;
      write_scores_csv(t, scores);
      write_pca_csv(t, pca);
      write_file(dir / ("scores_stage" + std::to_string(t.stage) + ".csv"), scores.str());
      write_file(dir / ("pca_stage" + std::to_string(t.stage) + ".csv"), pca.str());
    }
    if (checkpoints)
      for (std::size_t j = 0; j < res.models.size(); ++j)
        save_checkpoint(res.models[j], dir / ("checkpoint_stage" + std::to_string(j) + ".csv"));
    out.stages = res.stages;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

void print_stage_table(const RunOutcome& r) {
  std::printf("%-6s", "stage");
  for (const auto& t : r.stages.front().targets) std::printf("  T%-7d", t.target);
  std::printf("  %-8s %-9s %s\n", "mean", "selected", "seconds");
  for (const auto& s : r.stages) {
    int selected = 0;
    std::printf("%-6d", s.stage);
    for (const auto& t : s.targets) {
      std::printf("  %-8.4f", t.accuracy);
      selected += t.selected;
    }
    std::printf("  %-8.4f %-9d %.2f\n", s.mean_accuracy, selected, s.wall_seconds);
  }
}

int cmd_generate(const ConfigOptions& opts, const std::string& out_dir, bool force) {
  const ExperimentConfig cfg = opts.build();
  const fs::path dir(out_dir);
  const fs::path file = dir / "dataset.csv";
  if (fs::exists(file) && !force) {
    std::cerr << "error: " << file.string() << " exists; pass --force to overwrite\n";
    return 1;
  }
  prepare_dir(dir);
  const Dataset ds = generate(cfg.seed, generator_config(cfg));
  const std::string csv = to_csv(ds);
  write_file(file, csv);
  write_file(dir / "config.echo", to_text(cfg) + "# dataset_sha1 = " + git_blob_sha1(csv) + "\n");
  std::cout << "wrote " << ds.samples().size() << " samples to " << file.string() << " (sha1 " << git_blob_sha1(csv)
            << ")\n";
  return 0;
}

int cmd_run(const ConfigOptions& opts, const std::string& out_dir, const std::string& seeds,
            const std::string& samplers, const std::string& modes, int jobs, bool checkpoints, bool force) {
  const ExperimentConfig base = opts.build();
  const fs::path root(out_dir);
  const bool matrix = !seeds.empty() || !samplers.empty() || !modes.empty();

  if (!matrix) {
    if (fs::exists(root / "stages.csv") && !force) {
      std::cerr << "error: " << (root / "stages.csv").string() << " exists; pass --force to overwrite\n";
      return 1;
    }
    const RunOutcome r = run_one(base, root, checkpoints);
    if (!r.error.empty()) {
      std::cerr << "error: " << r.error << '\n';
      return 1;
    }
    print_stage_table(r);
    return 0;
  }

  std::vector<ExperimentConfig> grid;
  const auto seed_list = seeds.empty() ? std::vector<std::uint64_t>{base.seed} : parse_seed_list(seeds);
  const auto sampler_list = samplers.empty() ? std::vector<std::string>{base.sampler} : split_list(samplers);
  const auto mode_list = modes.empty() ? std::vector<std::string>{base.mode} : split_list(modes);
  for (const auto& m : mode_list)
    for (const auto& s : sampler_list)
      for (auto seed : seed_list) {
        ExperimentConfig c = base;
        c.mode = m;
        c.sampler = s;
        c.seed = seed;
        validate(c);
        grid.push_back(c);
      }
  auto dir_of = [&](const ExperimentConfig& c) {
    return root / (c.sampler + "-" + c.mode + "-seed" + std::to_string(c.seed));
  };
  if (!force)
    for (const auto& c : grid)
      if (fs::exists(dir_of(c) / "stages.csv")) {
        std::cerr << "error: " << dir_of(c).string() << " already holds a run; pass --force to overwrite\n";
        return 1;
      }

  std::vector<RunOutcome> results(grid.size());
  std::size_t next = 0;
  std::mutex lock;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> g(lock);
        if (next == grid.size()) return;
        i = next++;
      }
      results[i] = run_one(grid[i], dir_of(grid[i]), checkpoints);
      std::lock_guard<std::mutex> g(lock);
      std::cerr << (results[i].error.empty() ? "done   " : "FAILED ") << dir_of(grid[i]).string() << '\n';
    }
  };
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(grid.size())));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  int failed = 0;
  std::vector<RunSummary> summaries;
  for (const auto& r : results) {
    if (!r.error.empty()) {
      std::cerr << "error: " << r.dir.string() << ": " << r.error << '\n';
      ++failed;
      continue;
    }
    summaries.push_back(summarize(r.cfg, r.stages, r.dir.string()));
  }
  if (!summaries.empty()) {
    const auto rows = aggregate(summaries);
    std::ostringstream csv;
    write_report_csv(rows, csv);
    write_file(root / "summary.csv", csv.str());
    const int last = base.stages;
    std::printf("final stage %d, mean target accuracy over %zu seed(s)\n", last, seed_list.size());
    std::printf("%-12s %-16s %-8s %-8s %s\n", "sampler", "mode", "mean", "std", "vs random");
    for (const auto& r : rows) {
      if (r.stage != last) continue;
      std::printf("%-12s %-16s %-8.4f %-8.4f ", r.sampler.c_str(), r.mode.c_str(), r.mean, r.std);
      if (r.delta_vs_random)
        std::printf("%+.4f\n", *r.delta_vs_random);
      else
        std::printf("-\n");
    }
  }
  return failed == 0 ? 0 : 1;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& out_file) {
  std::vector<RunSummary> runs;
  for (const auto& d : dirs) runs.push_back(read_run_dir(d));
  const auto rows = aggregate(runs);
  std::ostringstream csv;
  write_report_csv(rows, csv);
  if (out_file.empty())
    std::cout << csv.str();
  else
    write_file(out_file, csv.str());
  return 0;
}

int cmd_eval(const ConfigOptions& opts, const std::string& checkpoint) {
  const ExperimentConfig cfg = opts.build();
  const Model m = load_checkpoint(checkpoint);
  const Dataset ds = make_dataset(cfg);
  if (m.shape.input != ds.dim() || m.shape.classes != ds.classes())
    throw ConfigError("checkpoint shape does not match the dataset");
  const StageReport rep = evaluate_stage(m, ds, 0);
  std::cout << "target,accuracy,domain_distance_to_source\n";
  for (const auto& t : rep.targets)
    std::cout << t.target << ',' << format_double(t.accuracy) << ',' << format_double(t.distance_to_source) << '\n';
  std::cerr << "mean target accuracy " << format_double(rep.mean_accuracy) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-target active domain adaptation laboratory"};
  app.require_subcommand(1);
  app.footer(
      "Config precedence, lowest first: defaults, MTADA_SEED, --config file, --set key=value, dedicated flags.");

  ConfigOptions gen_opts, run_opts, eval_opts;
  std::string gen_out = ".", run_out, seeds, samplers, modes, report_out, checkpoint;
  std::vector<std::string> report_dirs;
  bool gen_force = false, run_force = false, checkpoints = false;
  int jobs = 1;

  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset as <out>/dataset.csv");
  gen_opts.attach(gen);
  gen->add_option("-o,--out", gen_out, "Output directory (created if missing)");
  gen->add_flag("--force", gen_force, "Overwrite an existing dataset");

  auto* run = app.add_subcommand("run", "Pretrain, then run the active stages and write CSV reports");
  run_opts.attach(run);
  run->add_option("-o,--out", run_out, "Output directory")->required();
  run->add_option("--seeds", seeds, "Matrix run over seeds, e.g. 1-5 or 1,4,9");
  run->add_option("--samplers", samplers, "Matrix run over samplers, comma separated");
  run->add_option("--modes", modes, "Matrix run over discrimination modes, comma separated");
  run->add_option("-j,--jobs", jobs, "Matrix runs executed concurrently")->check(CLI::PositiveNumber);
  run->add_flag("--checkpoints", checkpoints, "Also save the model after every stage");
  run->add_flag("--force", run_force, "Overwrite existing run outputs");

  auto* report = app.add_subcommand("report", "Aggregate run directories: mean and std per sampler, mode, stage");
  report->add_option("dirs", report_dirs, "Run directories")->required()->check(CLI::ExistingDirectory);
  report->add_option("-o,--out", report_out, "Write the CSV here instead of stdout");

  auto* eval = app.add_subcommand("eval", "Per-target test accuracy and normalised domain distance of a checkpoint");
  eval_opts.attach(eval);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint CSV written by `run --checkpoints`")
      ->required()
      ->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_generate(gen_opts, gen_out, gen_force);
    if (*run) return cmd_run(run_opts, run_out, seeds, samplers, modes, jobs, checkpoints, run_force);
    if (*report) return cmd_report(report_dirs, report_out);
    if (*eval) return cmd_eval(eval_opts, checkpoint);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
