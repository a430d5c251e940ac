#include "mtl/tasks.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "mtl/errors.hpp"
#include "mtl/rng.hpp"

namespace mtl::tasks {

double toy_f1(double z) {
  if (z < 0.0) throw DomainError("toy_f1 needs z >= 0, got " + std::to_string(z));
  return std::sin(z) + std::sqrt(z) / 300.0 + 2.0 + 3.0 * std::sin(5.0 * z) * std::cos(2.0 * z);
}

double toy_f2(double z) {
  if (z < 0.0) throw DomainError("toy_f2 needs z >= 0, got " + std::to_string(z));
  return std::cos(z / 3.0) + std::sqrt(z) / 200.0 + 1.0 -
         std::sin(3.0 * z) * std::cos(4.0 * z);
}

int64_t ImbalancedDataset::count_A() const {
  int64_t n = 0;
  for (const Sample& s : samples) {
    const auto& rich = rich_task == 1 ? s.label1 : s.label2;
    n += rich.has_value();
  }
  return n;
}

int64_t ImbalancedDataset::count_B() const {
  int64_t n = 0;
  for (const Sample& s : samples) n += (s.label1.has_value() && s.label2.has_value());
  return n;
}

void ImbalancedDataset::validate() const {
  if (rich_task != 1 && rich_task != 2) throw IntegrityError("rich_task must be 1 or 2");
  if (count_A() != static_cast<int64_t>(samples.size()))
    throw IntegrityError("every training sample must carry the rich task's label");
  for (const Sample& s : samples) {
    if (!s.label1 && !s.label2)
      throw IntegrityError("training sample with no labels at all");
    if (!samples.empty() && s.z.size() != samples[0].z.size())
      throw IntegrityError("inconsistent input dimensionality");
    if (kind1 == model::TaskKind::classification && s.label1 &&
        (*s.label1 < 0 || *s.label1 >= static_cast<double>(classes1)))
      throw IntegrityError("task-1 class index out of range");
    if (kind2 == model::TaskKind::classification && s.label2 &&
        (*s.label2 < 0 || *s.label2 >= static_cast<double>(classes2)))
      throw IntegrityError("task-2 class index out of range");
  }
  for (const Sample& s : eval_set)
    if (!s.label1 || !s.label2) throw IntegrityError("eval samples must be fully labeled");
  if (count_B() > count_A()) throw IntegrityError("count_B exceeds count_A");
}

ImbalancedDataset sample_toy_dataset(int64_t n_a, int64_t n_b, uint64_t seed) {
  if (n_b > n_a)
    throw ConfigError("n_B (" + std::to_string(n_b) + ") must not exceed n_A (" +
                      std::to_string(n_a) + ")");
  if (n_a < 1) throw ConfigError("n_A must be positive");
  ImbalancedDataset ds;
  Rng rng(seed);
  ds.samples.reserve(static_cast<size_t>(n_a));
  for (int64_t i = 0; i < n_a; ++i) {
    Sample s;
    s.z = {rng.uniform()};
    s.label1 = toy_f1(s.z[0]);
    ds.samples.push_back(std::move(s));
  }
  // uniform choice of which samples also get the scarce label
  std::vector<int64_t> order = rng.permutation(n_a);
  for (int64_t i = 0; i < n_b; ++i) {
    Sample& s = ds.samples[static_cast<size_t>(order[static_cast<size_t>(i)])];
    s.label2 = toy_f2(s.z[0]);
  }
  ds.eval_set.reserve(1000);
  for (int i = 0; i < 1000; ++i) {
    Sample s;
    s.z = {static_cast<double>(i) / 999.0};
    s.label1 = toy_f1(s.z[0]);
    s.label2 = toy_f2(s.z[0]);
    ds.eval_set.push_back(std::move(s));
  }
  return ds;
}

Condition condition_from_string(const std::string& s) {
  if (s == "cond1") return Condition::cond1;
  if (s == "cond2") return Condition::cond2;
  if (s == "cond2_mirror" || s == "cond2m") return Condition::cond2_mirror;
  if (s == "cond3") return Condition::cond3;
  throw ConfigError("unknown condition: " + s);
}

std::string to_string(Condition c) {
  switch (c) {
    case Condition::cond1: return "cond1";
    case Condition::cond2: return "cond2";
    case Condition::cond2_mirror: return "cond2_mirror";
    case Condition::cond3: return "cond3";
  }
  return "?";
}

double scenario_basis(int64_t k, double z) {
  return std::sin(static_cast<double>(k) * std::numbers::pi * z +
                  static_cast<double>(k) / 7.0);
}

double ScenarioTasks::f1(double z) const {
  double acc = 0.0;
  size_t i = 0;
  for (int64_t k : shared) acc += alpha[i++] * scenario_basis(k, z);
  for (int64_t k : only1) acc += alpha[i++] * scenario_basis(k, z);
  return acc;
}

double ScenarioTasks::f2(double z) const {
  double acc = 0.0;
  size_t i = 0;
  for (int64_t k : shared) acc += beta[i++] * scenario_basis(k, z);
  for (int64_t k : only2) acc += beta[i++] * scenario_basis(k, z);
  return acc;
}

namespace {

void require(bool ok, const std::string& clause, int64_t lhs, int64_t rhs,
             const std::string& lhs_name, const std::string& rhs_name) {
  if (!ok)
    throw ConfigError(clause + " requires |" + lhs_name + "| > |" + rhs_name + "| (got |" +
                      lhs_name + "|=" + std::to_string(lhs) + ", |" + rhs_name +
                      "|=" + std::to_string(rhs) + ")");
}

}  // namespace

ScenarioTasks build_condition_scenario(Condition condition, int64_t basis_size,
                                       int64_t n_shared, int64_t n_only1, int64_t n_only2,
                                       uint64_t seed) {
  if (n_shared < 0 || n_only1 < 0 || n_only2 < 0)
    throw ConfigError("set cardinalities must be non-negative");
  if (n_shared + n_only1 + n_only2 > basis_size)
    throw ConfigError("|S|+|O|+|P| = " + std::to_string(n_shared + n_only1 + n_only2) +
                      " exceeds basis size " + std::to_string(basis_size));
  if (n_shared + n_only1 == 0 || n_shared + n_only2 == 0)
    throw ConfigError("each task needs at least one basis term");
  switch (condition) {
    case Condition::cond1:
      require(n_shared > n_only1, "Condition 1", n_shared, n_only1, "S", "O");
      require(n_shared > n_only2, "Condition 1", n_shared, n_only2, "S", "P");
      break;
    case Condition::cond2:
      require(n_shared > n_only1, "Condition 2", n_shared, n_only1, "S", "O");
      require(n_only2 > n_shared, "Condition 2", n_only2, n_shared, "P", "S");
      break;
    case Condition::cond2_mirror:
      require(n_shared > n_only2, "Condition 2 (mirror)", n_shared, n_only2, "S", "P");
      require(n_only1 > n_shared, "Condition 2 (mirror)", n_only1, n_shared, "O", "S");
      break;
    case Condition::cond3:
      require(n_only1 > n_shared, "Condition 3", n_only1, n_shared, "O", "S");
      require(n_only2 > n_shared, "Condition 3", n_only2, n_shared, "P", "S");
      break;
  }

  ScenarioTasks sc;
  sc.declared = condition;
  sc.basis_size = basis_size;
  Rng rng(seed);
  std::vector<int64_t> order = rng.permutation(basis_size);
  auto take = [&order](int64_t from, int64_t count) {
    std::vector<int64_t> out;
    out.reserve(static_cast<size_t>(count));
    for (int64_t i = from; i < from + count; ++i)
      out.push_back(order[static_cast<size_t>(i)] + 1);  // basis indices are 1-based
    return out;
  };
  sc.shared = take(0, n_shared);
  sc.only1 = take(n_shared, n_only1);
  sc.only2 = take(n_shared + n_only1, n_only2);
  // A shared term is the same sub-function in both tasks, so its coefficient
  // is drawn once and reused; with independent per-task coefficients the
  // tasks would merely correlate and the cross-task structure the conditions
  // describe would not exist.
  for (int64_t i = 0; i < n_shared; ++i) {
    const double c = rng.uniform(0.5, 1.5);
    sc.alpha.push_back(c);
    sc.beta.push_back(c);
  }
  for (int64_t i = 0; i < n_only1; ++i) sc.alpha.push_back(rng.uniform(0.5, 1.5));
  for (int64_t i = 0; i < n_only2; ++i) sc.beta.push_back(rng.uniform(0.5, 1.5));
  return sc;
}

ImbalancedDataset sample_scenario_dataset(const ScenarioTasks& scenario, int64_t n_rich,
                                          int64_t n_scarce, int rich_task, uint64_t seed) {
  if (rich_task != 1 && rich_task != 2) throw ConfigError("rich_task must be 1 or 2");
  if (n_scarce > n_rich)
    throw ConfigError("n_scarce (" + std::to_string(n_scarce) + ") must not exceed n_rich (" +
                      std::to_string(n_rich) + ")");
  if (n_rich < 1) throw ConfigError("n_rich must be positive");
  ImbalancedDataset ds;
  ds.rich_task = rich_task;
  Rng rng(seed);
  ds.samples.reserve(static_cast<size_t>(n_rich));
  for (int64_t i = 0; i < n_rich; ++i) {
    Sample s;
    s.z = {rng.uniform()};
    if (rich_task == 1)
      s.label1 = scenario.f1(s.z[0]);
    else
      s.label2 = scenario.f2(s.z[0]);
    ds.samples.push_back(std::move(s));
  }
  std::vector<int64_t> order = rng.permutation(n_rich);
  for (int64_t i = 0; i < n_scarce; ++i) {
    Sample& s = ds.samples[static_cast<size_t>(order[static_cast<size_t>(i)])];
    if (rich_task == 1)
      s.label2 = scenario.f2(s.z[0]);
    else
      s.label1 = scenario.f1(s.z[0]);
  }
  ds.eval_set.reserve(1000);
  for (int i = 0; i < 1000; ++i) {
    Sample s;
    s.z = {static_cast<double>(i) / 999.0};
    s.label1 = scenario.f1(s.z[0]);
    s.label2 = scenario.f2(s.z[0]);
    ds.eval_set.push_back(std::move(s));
  }
  return ds;
}

double synth_depth(double z1, double z2) {
  using std::numbers::pi;
  return 1.7 + std::sin(pi * z1 + 0.4) + 0.5 * std::cos(2.0 * pi * z2);
}

double synth_class_field(double z1, double z2) {
  using std::numbers::pi;
  return std::sin(pi * z1 + 0.4) + 0.5 * std::cos(2.0 * pi * z2) +
         0.8 * std::sin(2.0 * pi * z1) * std::cos(pi * z2);
}

namespace {

// Quantile thresholds of the class field over a fixed 1e5-point reference
// sample; independent of the caller's seed so bins mean the same thing in
// every dataset.
std::vector<double> class_thresholds(int64_t n_classes) {
  constexpr int64_t kReference = 100000;
  Rng rng(0x5e9f00dULL);
  std::vector<double> vals(kReference);
  for (double& v : vals) {
    double z1 = rng.uniform();
    double z2 = rng.uniform();
    v = synth_class_field(z1, z2);
  }
  std::sort(vals.begin(), vals.end());
  std::vector<double> thr;
  for (int64_t c = 1; c < n_classes; ++c)
    thr.push_back(vals[static_cast<size_t>(c * kReference / n_classes)]);
  return thr;
}

int64_t bin_of(double value, const std::vector<double>& thresholds) {
  int64_t c = 0;
  while (c < static_cast<int64_t>(thresholds.size()) &&
         value >= thresholds[static_cast<size_t>(c)])
    ++c;
  return c;
}

}  // namespace

ImbalancedDataset build_synth_segmentation(int64_t n_classes, int64_t n_a, int64_t n_b,
                                           uint64_t seed) {
  if (n_classes < 2) throw ConfigError("n_classes must be >= 2");
  if (n_b > n_a)
    throw ConfigError("n_B (" + std::to_string(n_b) + ") must not exceed n_A (" +
                      std::to_string(n_a) + ")");
  if (n_a < 1) throw ConfigError("n_A must be positive");
  const std::vector<double> thr = class_thresholds(n_classes);

  ImbalancedDataset ds;
  ds.kind2 = model::TaskKind::classification;
  ds.classes2 = n_classes;
  Rng rng(seed);
  ds.samples.reserve(static_cast<size_t>(n_a));
  for (int64_t i = 0; i < n_a; ++i) {
    Sample s;
    s.z = {rng.uniform(), rng.uniform()};
    s.label1 = synth_depth(s.z[0], s.z[1]);
    ds.samples.push_back(std::move(s));
  }
  std::vector<int64_t> order = rng.permutation(n_a);
  for (int64_t i = 0; i < n_b; ++i) {
    Sample& s = ds.samples[static_cast<size_t>(order[static_cast<size_t>(i)])];
    s.label2 = static_cast<double>(bin_of(synth_class_field(s.z[0], s.z[1]), thr));
  }
  // fixed 32x32 grid as the eval set
  for (int i = 0; i < 32; ++i) {
    for (int j = 0; j < 32; ++j) {
      Sample s;
      s.z = {static_cast<double>(i) / 31.0, static_cast<double>(j) / 31.0};
      s.label1 = synth_depth(s.z[0], s.z[1]);
      s.label2 = static_cast<double>(bin_of(synth_class_field(s.z[0], s.z[1]), thr));
      ds.eval_set.push_back(std::move(s));
    }
  }
  return ds;
}

namespace {

std::string format_double(double x) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, end);
}

double parse_double(std::string_view s, const std::string& path, size_t line) {
  double x = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw IoError(path + ":" + std::to_string(line) + ": bad number '" + std::string(s) + "'");
  return x;
}

}  // namespace

void export_dataset_csv(const std::vector<Sample>& samples, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset: " + path);
  const size_t dim = samples.empty() ? 1 : samples[0].z.size();
  for (size_t d = 0; d < dim; ++d) out << "z" << d << ",";
  out << "label1,label2\n";
  for (const Sample& s : samples) {
    for (double z : s.z) out << format_double(z) << ",";
    if (s.label1) out << format_double(*s.label1);
    out << ",";
    if (s.label2) out << format_double(*s.label2);
    out << "\n";
  }
}

std::vector<Sample> import_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read dataset: " + path);
  std::string header;
  if (!std::getline(in, header)) throw IoError(path + ": empty file");
  size_t dim = 0;
  {
    std::stringstream ss(header);
    std::string col;
    while (std::getline(ss, col, ',')) {
      if (col.size() > 1 && col[0] == 'z') ++dim;
    }
  }
  if (dim == 0) throw IoError(path + ": header has no z columns");

  std::vector<Sample> samples;
  std::string line;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    size_t start = 0;
    while (true) {
      size_t pos = line.find(',', start);
      if (pos == std::string::npos) {
        cells.push_back(line.substr(start));
        break;
      }
      cells.push_back(line.substr(start, pos - start));
      start = pos + 1;
    }
    if (cells.size() != dim + 2)
      throw IoError(path + ":" + std::to_string(lineno) + ": expected " +
                    std::to_string(dim + 2) + " cells, got " + std::to_string(cells.size()));
    Sample s;
    for (size_t d = 0; d < dim; ++d) s.z.push_back(parse_double(cells[d], path, lineno));
    if (!cells[dim].empty()) s.label1 = parse_double(cells[dim], path, lineno);
    if (!cells[dim + 1].empty()) s.label2 = parse_double(cells[dim + 1], path, lineno);
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace mtl::tasks
