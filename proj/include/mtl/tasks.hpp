#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mtl/model.hpp"

namespace mtl::tasks {

// Scalar target functions of the toy regression pair.
double toy_f1(double z);
double toy_f2(double z);

struct Sample {
  std::vector<double> z;
  std::optional<double> label1;  // real target, or class index for classification
  std::optional<double> label2;
  bool pseudo1 = false;  // label came from a teacher, not ground truth
  bool pseudo2 = false;
};

// Training pool where one task (the "rich" one) is labeled on every sample
// and the other only on a subset, plus a fully labeled held-out eval set.
struct ImbalancedDataset {
  int rich_task = 1;  // 1 or 2
  model::TaskKind kind1 = model::TaskKind::regression;
  model::TaskKind kind2 = model::TaskKind::regression;
  int64_t classes1 = 0;  // K for classification kinds, 0 otherwise
  int64_t classes2 = 0;
  std::vector<Sample> samples;
  std::vector<Sample> eval_set;

  int scarce_task() const { return rich_task == 1 ? 2 : 1; }
  int64_t input_dim() const { return samples.empty() ? 0 : int64_t(samples[0].z.size()); }

  // Label counts recomputed from the samples (never cached).
  int64_t count_A() const;  // samples carrying the rich task's label
  int64_t count_B() const;  // samples carrying both labels

  // Checks the accounting invariants; throws IntegrityError on violation.
  void validate() const;
};

// n_A uniform z in [0,1] with f1 labels; a uniform subset of n_B of them
// additionally carries f2 labels. Eval set: the fixed 1000-point grid i/999.
ImbalancedDataset sample_toy_dataset(int64_t n_a, int64_t n_b, uint64_t seed);

enum class Condition { cond1, cond2, cond2_mirror, cond3 };

Condition condition_from_string(const std::string& s);
std::string to_string(Condition c);

// Two synthetic tasks built from a shared sinusoidal basis. The index sets
// record exactly which basis terms each task uses, so the shared-structure
// ground truth is known, unlike for real task pairs.
struct ScenarioTasks {
  Condition declared;
  int64_t basis_size = 0;
  std::vector<int64_t> shared;  // S: basis indices used by both tasks
  std::vector<int64_t> only1;   // O: used by task 1 alone
  std::vector<int64_t> only2;   // P: used by task 2 alone
  std::vector<double> alpha;    // coefficients for task 1, aligned with shared+only1
  std::vector<double> beta;     // coefficients for task 2, aligned with shared+only2

  double f1(double z) const;
  double f2(double z) const;
};

// Basis term k (1-based).
double scenario_basis(int64_t k, double z);

// Draws index sets without replacement and coefficients in U(0.5, 1.5);
// shared indices get one coefficient used by both tasks, so a shared term is
// literally the same sub-function on each side. cardinalities =
// (|S|, |O|, |P|); they must satisfy the condition's inequalities or a
// ConfigError names the violated clause.
ScenarioTasks build_condition_scenario(Condition condition, int64_t basis_size,
                                       int64_t n_shared, int64_t n_only1, int64_t n_only2,
                                       uint64_t seed);

// Imbalanced regression dataset over a scenario's task pair. rich_task picks
// which of f1/f2 gets the full label set.
ImbalancedDataset sample_scenario_dataset(const ScenarioTasks& scenario, int64_t n_rich,
                                          int64_t n_scarce, int rich_task, uint64_t seed);

// Depth-like regression + quantile-binned classification over z in [0,1]^2.
// Task 1: smooth positive field d(z). Task 2: class = quantile bin of a
// second overlapping field, bins computed once on a fixed reference sample.
ImbalancedDataset build_synth_segmentation(int64_t n_classes, int64_t n_a, int64_t n_b,
                                           uint64_t seed);

// The underlying synthetic fields (exposed for tests).
double synth_depth(double z1, double z2);
double synth_class_field(double z1, double z2);

// Delimited-text round trip: z columns, then one column per task label
// (empty cell = absent). Exact decimal round-trip via shortest form.
void export_dataset_csv(const std::vector<Sample>& samples, const std::string& path);
std::vector<Sample> import_dataset_csv(const std::string& path);

}  // namespace mtl::tasks
