#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mtada/errors.hpp"
#include "mtada/numerics.hpp"
#include "mtada/rng.hpp"

namespace mtada {

enum class Split { Train, Test };

/// One feature vector with its class label `label` and domain index
/// (0 = source, 1..N = targets).
struct Sample {
  int id = 0;
  int domain = 0;
  Split split = Split::Train;
  int label = 0;
  Vec x;

  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Affine domain shift: rotate the first two coordinates, scale, translate,
/// then add isotropic Gaussian noise.
struct DomainShift {
  double rotation = 0.0;
  Vec translation;  // empty means zero
  double scale = 1.0;
  double noise = 0.0;
};

struct GeneratorConfig {
  int classes = 4;
  int targets = 2;
  int dim = 8;
  int train_per_domain = 300;
  int test_per_domain = 300;
  double class_sep = 3.0;
  double class_std = 1.0;
  std::vector<DomainShift> shifts;  // targets + 1 entries, source first
};

/// Samples of all domains plus the labeled / unlabeled pools of the train
/// partition. Pools hold sample ids sorted ascending. The source pool is
/// fully labeled; target pools start fully unlabeled. Test samples never
/// enter a pool.
class Dataset {
 public:
  Dataset() = default;
  Dataset(int classes, int targets, int dim) : classes_(classes), targets_(targets), dim_(dim) {
    labeled_.resize(targets + 1);
    unlabeled_.resize(targets + 1);
  }

  int classes() const { return classes_; }
  int targets() const { return targets_; }
  int dim() const { return dim_; }
  int domains() const { return targets_ + 1; }

  const std::vector<Sample>& samples() const { return samples_; }
  const Sample& sample(int id) const { return samples_.at(static_cast<std::size_t>(id)); }

  const std::vector<int>& labeled(int domain) const { return labeled_.at(domain); }
  const std::vector<int>& unlabeled(int domain) const { return unlabeled_.at(domain); }

  /// Appends a sample and files it into the pool its split dictates.
  /// `labeled` only matters for target train samples.
  void add(Sample s, bool labeled = false) {
    require_shape(static_cast<int>(s.x.size()) == dim_, "Dataset::add: feature length != dim");
    if (s.id != static_cast<int>(samples_.size())) throw ConfigError("Dataset::add: ids must be sequential");
    if (s.domain < 0 || s.domain > targets_) throw ConfigError("Dataset::add: domain out of range");
    if (s.label < 0 || s.label >= classes_) throw ConfigError("Dataset::add: label out of range");
    if (s.split == Split::Train) {
      if (s.domain == 0 || labeled)
        labeled_[s.domain].push_back(s.id);
      else
        unlabeled_[s.domain].push_back(s.id);
    }
    samples_.push_back(std::move(s));
  }

  std::vector<int> ids(int domain, Split split) const {
    std::vector<int> out;
    for (const auto& s : samples_)
      if (s.domain == domain && s.split == split) out.push_back(s.id);
    return out;
  }

  /// Union of all target unlabeled pools, ascending id.
  std::vector<int> unlabeled_target_union() const {
    std::vector<int> out;
    for (int m = 1; m <= targets_; ++m) out.insert(out.end(), unlabeled_[m].begin(), unlabeled_[m].end());
    std::sort(out.begin(), out.end());
    return out;
  }

  std::size_t pool_total() const {
    std::size_t n = 0;
    for (int m = 0; m <= targets_; ++m) n += labeled_[m].size() + unlabeled_[m].size();
    return n;
  }

  /// Reveals labels of `ids`: moves them from the domain's unlabeled pool to
  /// its labeled pool. Fails without modification if any id is not in the pool.
  void annotate(int domain, std::span<const int> ids) {
    if (domain < 1 || domain > targets_) throw SelectionError("annotate: not a target domain");
    auto& pool = unlabeled_[domain];
    std::vector<int> sorted(ids.begin(), ids.end());
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw SelectionError("annotate: duplicate id");
    for (int id : sorted)
      if (!std::binary_search(pool.begin(), pool.end(), id))
        throw SelectionError("annotate: id " + std::to_string(id) + " is not in the unlabeled pool of domain " +
                             std::to_string(domain));
    std::vector<int> rest;
    std::set_difference(pool.begin(), pool.end(), sorted.begin(), sorted.end(), std::back_inserter(rest));
    pool = std::move(rest);
    auto& lab = labeled_[domain];
    std::vector<int> merged;
    std::merge(lab.begin(), lab.end(), sorted.begin(), sorted.end(), std::back_inserter(merged));
    lab = std::move(merged);
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  int classes_ = 0;
  int targets_ = 0;
  int dim_ = 0;
  std::vector<Sample> samples_;
  std::vector<std::vector<int>> labeled_;
  std::vector<std::vector<int>> unlabeled_;
};

inline void apply_shift(const DomainShift& shift, Rng& rng, std::span<double> x) {
  if (shift.rotation != 0.0) {
    const double c = std::cos(shift.rotation), s = std::sin(shift.rotation);
    const double a = x[0], b = x[1];
    x[0] = c * a - s * b;
    x[1] = s * a + c * b;
  }
  for (double& v : x) v *= shift.scale;
  if (!shift.translation.empty())
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += shift.translation[i];
  if (shift.noise > 0.0)
    for (double& v : x) v += shift.noise * rng.normal();
}

/// Draws class means once and one shared set of class-conditional base
/// points (train then test, label = index mod K). Every domain, source first,
/// is that base set passed through the domain's shift with its own noise.
inline Dataset generate(std::uint64_t seed, const GeneratorConfig& cfg) {
  const int K = cfg.classes, N = cfg.targets, d = cfg.dim;
  if (K < 2 || N < 1 || d < 1) throw ConfigError("generate: need classes >= 2, targets >= 1, dim >= 1");
  if (cfg.train_per_domain < 4 * K) throw ConfigError("generate: train_per_domain must be >= 4 * classes");
  if (cfg.test_per_domain < K) throw ConfigError("generate: test_per_domain must be >= classes");
  if (static_cast<int>(cfg.shifts.size()) != N + 1)
    throw ConfigError("generate: need one shift per domain (targets + 1)");
  for (const auto& s : cfg.shifts) {
    if (!(s.scale > 0.0)) throw ConfigError("generate: shift scale must be > 0");
    if (!(s.noise >= 0.0)) throw ConfigError("generate: shift noise must be >= 0");
    if (s.rotation != 0.0 && d < 2) throw ConfigError("generate: rotation needs dim >= 2");
    if (!s.translation.empty() && static_cast<int>(s.translation.size()) != d)
      throw ConfigError("generate: translation length != dim");
  }

  Rng rng(seed);
  std::vector<Vec> means(K, Vec(d));
  for (auto& mu : means) {
    double n = 0.0;
    while (n < 1e-12) {
      for (double& v : mu) v = rng.normal();
      n = l2_norm(mu);
    }
    for (double& v : mu) v *= cfg.class_sep / n;
  }

  std::vector<Sample> base;
  for (Split split : {Split::Train, Split::Test}) {
    const int count = split == Split::Train ? cfg.train_per_domain : cfg.test_per_domain;
    for (int i = 0; i < count; ++i) {
      Sample s{0, 0, split, i % K, Vec(d)};
      for (int j = 0; j < d; ++j) s.x[j] = means[s.label][j] + cfg.class_std * rng.normal();
      base.push_back(std::move(s));
    }
  }

  Dataset ds(K, N, d);
  int id = 0;
  for (int m = 0; m <= N; ++m) {
    Rng noise = rng.fork("domain" + std::to_string(m));
    for (const auto& b : base) {
      Sample s = b;
      s.id = id++;
      s.domain = m;
      apply_shift(cfg.shifts[m], noise, s.x);
      ds.add(std::move(s));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// CSV: id,domain,split,label,x0,...,x{d-1}
// split is "train", "labeled" (annotated target train sample) or "test".

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline void write_csv(const Dataset& ds, std::ostream& out) {
  out << "id,domain,split,label";
  for (int j = 0; j < ds.dim(); ++j) out << ",x" << j;
  out << '\n';
  for (const auto& s : ds.samples()) {
    const char* split = "test";
    if (s.split == Split::Train) {
      const auto& lab = ds.labeled(s.domain);
      split = s.domain > 0 && std::binary_search(lab.begin(), lab.end(), s.id) ? "labeled" : "train";
    }
    out << s.id << ',' << s.domain << ',' << split << ',' << s.label;
    for (double v : s.x) out << ',' << format_double(v);
    out << '\n';
  }
}

inline std::string to_csv(const Dataset& ds) {
  std::ostringstream os;
  write_csv(ds, os);
  return os.str();
}

inline void save_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  write_csv(ds, out);
  if (!out) throw ConfigError("write failed: " + path.string());
}

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view f, std::size_t line_no) {
  T v{};
  auto res = std::from_chars(f.data(), f.data() + f.size(), v);
  if (res.ec != std::errc() || res.ptr != f.data() + f.size())
    throw ParseError("line " + std::to_string(line_no) + ": bad number '" + std::string(f) + "'");
  return v;
}

}  // namespace detail

/// Parses the CSV schema above. Class and target counts are inferred as
/// max label + 1 and max domain.
inline Dataset read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("line 1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_fields(line);
  if (header.size() < 4 || header[0] != "id" || header[1] != "domain" || header[2] != "split" ||
      header[3] != "label")
    throw ParseError("line 1: header must start with id,domain,split,label");
  const int dim = static_cast<int>(header.size()) - 4;
  for (int j = 0; j < dim; ++j)
    if (header[4 + j] != "x" + std::to_string(j)) throw ParseError("line 1: unexpected column " + std::string(header[4 + j]));

  struct Row {
    Sample s;
    bool labeled;
  };
  std::vector<Row> rows;
  std::size_t line_no = 1;
  int max_label = -1, max_domain = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_fields(line);
    if (f.size() != header.size())
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                       " columns, got " + std::to_string(f.size()));
    Row r{};
    r.s.id = detail::parse_number<int>(f[0], line_no);
    r.s.domain = detail::parse_number<int>(f[1], line_no);
    if (f[2] == "train" || f[2] == "labeled") {
      r.s.split = Split::Train;
      r.labeled = f[2] == "labeled";
    } else if (f[2] == "test") {
      r.s.split = Split::Test;
    } else {
      throw ParseError("line " + std::to_string(line_no) + ": unknown split '" + std::string(f[2]) + "'");
    }
    r.s.label = detail::parse_number<int>(f[3], line_no);
    if (r.s.domain < 0 || r.s.label < 0) throw ParseError("line " + std::to_string(line_no) + ": negative index");
    if (r.s.id != static_cast<int>(rows.size()))
      throw ParseError("line " + std::to_string(line_no) + ": ids must be sequential from 0");
    r.s.x.resize(dim);
    for (int j = 0; j < dim; ++j) r.s.x[j] = detail::parse_number<double>(f[4 + j], line_no);
    max_label = std::max(max_label, r.s.label);
    max_domain = std::max(max_domain, r.s.domain);
    rows.push_back(std::move(r));
  }
  Dataset ds(max_label + 1, max_domain, dim);
  for (auto& r : rows) ds.add(std::move(r.s), r.labeled);
  return ds;
}

inline Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  return read_csv(in);
}

}  // namespace mtada
