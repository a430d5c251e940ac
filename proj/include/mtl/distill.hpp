#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtl/metrics.hpp"
#include "mtl/model.hpp"
#include "mtl/tasks.hpp"
#include "mtl/training.hpp"

namespace mtl::distill {

enum class Direction { task1_as_input, task2_as_input };

Direction direction_from_string(const std::string& s);
std::string to_string(Direction d);

inline int source_task(Direction d) { return d == Direction::task1_as_input ? 1 : 2; }
inline int target_task(Direction d) { return d == Direction::task1_as_input ? 2 : 1; }

struct DistillConfig {
  double tau = 0.9;  // classification confidence threshold, [0,1]
  train::TrainingConfig teacher;
  train::TrainingConfig student;
  Direction direction = Direction::task1_as_input;
  // Multi-task student when true: the pseudo-labeled rows join the imbalanced
  // pool and the student keeps both heads. Single-task student when false:
  // trained on the target task's rows (ground truth + pseudo) alone.
  bool student_multitask = true;

  void validate() const;
};

// Everything a full teacher->pseudo->student run needs: the student
// architecture template (uni-modal, one head per task in task order; the
// teacher mirrors it with an extra input branch) plus the distillation knobs.
struct PipelineConfig {
  model::NetworkConfig net;
  DistillConfig distill;
  // Eval metrics per task; empty = mse for regression, miou for classification.
  std::vector<metrics::MetricKind> metrics1;
  std::vector<metrics::MetricKind> metrics2;
};

struct PseudoLabel {
  int64_t sample_index = 0;
  double value = 0.0;  // regression value or class index
  std::optional<double> confidence;  // softmax max-prob; absent for regression
};

struct PseudoLabelSet {
  int target_task = 2;
  uint64_t teacher_fingerprint = 0;
  std::vector<PseudoLabel> entries;
  int64_t skipped = 0;  // candidates missing the source-task label
  int64_t dropped = 0;  // classification candidates at or below tau
};

void export_pseudo_csv(const PseudoLabelSet& set, const std::string& path);

// Trains the multi-modal teacher on the both-labeled subset, feeding the
// direction's source-task ground truth as the second modality.
model::MultiModalTeacher train_teacher(const tasks::ImbalancedDataset& dataset,
                                       const PipelineConfig& config);

// Teacher inference over every sample lacking the target label. Regression
// outputs are all retained; classification outputs only with max softmax
// probability strictly above tau.
PseudoLabelSet generate_pseudo_labels(const model::MultiModalTeacher& teacher,
                                      const tasks::ImbalancedDataset& dataset,
                                      const PipelineConfig& config);

// New dataset with pseudo labels filled in where ground truth was missing.
// Ground truth is never overwritten; a pseudo entry pointing at a sample
// that already has the target label is an integrity error.
tasks::ImbalancedDataset merge_with_pseudo(const tasks::ImbalancedDataset& dataset,
                                           const PseudoLabelSet& pseudo);

using DatasetFactory = std::function<tasks::ImbalancedDataset(uint64_t seed)>;

// Metric kinds evaluated for a task: the pipeline's explicit choice when one
// is given, else the task kind's default (mse / miou).
std::vector<metrics::MetricKind> metric_kinds_for(const PipelineConfig& config,
                                                  const tasks::ImbalancedDataset& dataset,
                                                  int task);

// One trained-and-evaluated configuration. The fingerprint identifies the
// trained parameters exactly, which is how run-to-run equivalences are
// asserted without serializing whole nets.
struct SingleRun {
  metrics::MetricsReport report;
  uint64_t net_fingerprint = 0;
};

// Single-task baseline: the scarce task's head alone, trained on the samples
// that carry that task's ground truth.
SingleRun run_st_baseline(const tasks::ImbalancedDataset& dataset, const PipelineConfig& config,
                          uint64_t seed);

// Multi-task student on the imbalanced pool; missing labels are masked.
SingleRun run_mtl_student(const tasks::ImbalancedDataset& dataset, const PipelineConfig& config,
                          uint64_t seed);

struct DistilledRun {
  metrics::MetricsReport teacher_report;  // its source-task entries are
                                          // self-reconstruction, not comparable
  metrics::MetricsReport student_report;
  PseudoLabelSet pseudo;
  uint64_t teacher_fingerprint = 0;
  uint64_t student_fingerprint = 0;
};

// The full pipeline for one seed: teacher on the both-labeled subset,
// pseudo-labels for the rest, student on the merged pool. The multi-task
// student draws the same streams as run_mtl_student, so with nothing to
// pseudo-label the two produce identical nets.
DistilledRun run_distilled(const tasks::ImbalancedDataset& dataset, const PipelineConfig& config,
                           uint64_t seed);

struct ComparisonReport {
  int target_task = 2;
  metrics::MetricKind target_metric = metrics::MetricKind::mse;
  std::vector<uint64_t> seeds;

  struct SeedResult {
    bool ok = false;
    std::string error;
    metrics::MetricsReport st, mtl, ts, teacher;
    PseudoLabelSet pseudo;
  };
  std::vector<SeedResult> results;  // aligned with seeds

  int64_t n_ok = 0;
  // headline stats on the target task's metric, over succeeded seeds
  double st_mean = 0, st_std = 0;
  double mtl_mean = 0, mtl_std = 0;
  double ts_mean = 0, ts_std = 0;
  double improvement_of_means = 0;    // ratio computed on the two means
  double mean_seed_improvement = 0;   // mean of per-seed ratios
};

// Runs all configurations for one seed and fills one result slot.
ComparisonReport::SeedResult run_comparison_seed(const tasks::ImbalancedDataset& dataset,
                                                 const PipelineConfig& config, uint64_t seed);

// Recomputes n_ok and the aggregate statistics from `results`; used after
// assembling results out of independently computed slots.
void recompute_aggregates(ComparisonReport& report);

// For each seed: single-task baseline on the scarce task's ground truth,
// multi-task student on the imbalanced pool, and the full teacher->pseudo->
// student pipeline; all evaluated on the factory dataset's eval set.
ComparisonReport run_teacher_student(const DatasetFactory& factory, const PipelineConfig& config,
                                     std::span<const uint64_t> seeds);

// Convenience: fixed dataset for every seed.
ComparisonReport run_teacher_student(const tasks::ImbalancedDataset& dataset,
                                     const PipelineConfig& config,
                                     std::span<const uint64_t> seeds);

struct InteractionConfig {
  PipelineConfig pipeline;
  int64_t n_rich = 384;
  int64_t n_scarce = 96;
  double threshold = 0.05;  // mean relative improvement above this counts
};

struct ConditionVerdict {
  enum class Kind { cond1, cond2_1to2, cond2_2to1, cond3 };
  Kind verdict = Kind::cond3;
  double mean_improvement_1to2 = 0, std_1to2 = 0;
  double mean_improvement_2to1 = 0, std_2to1 = 0;
  double threshold = 0.05;
  int64_t n_seeds = 0;
  ComparisonReport dir_1to2, dir_2to1;
};

std::string to_string(ConditionVerdict::Kind k);

// Derives the verdict from two already-computed direction reports. dir_1to2
// uses task 1 as the teacher input (improvement measured on task 2) and
// dir_2to1 the reverse.
ConditionVerdict classify_interaction(ComparisonReport dir_1to2, ComparisonReport dir_2to1,
                                      double threshold);

// Runs the pipeline with each task as the teacher input in turn (building
// the mirrored imbalanced dataset for each direction) and classifies the
// improvement pattern.
ConditionVerdict analyze_task_interaction(const tasks::ScenarioTasks& scenario,
                                          const InteractionConfig& config,
                                          std::span<const uint64_t> seeds);

// Same analysis over caller-supplied per-direction dataset factories
// (used for the synthetic depth/segmentation pair).
ConditionVerdict analyze_task_interaction(const DatasetFactory& rich1_factory,
                                          const DatasetFactory& rich2_factory,
                                          const InteractionConfig& config,
                                          std::span<const uint64_t> seeds);

double mean_of(std::span<const double> xs);
double std_of(std::span<const double> xs);  // sample std, 0 when n < 2

}  // namespace mtl::distill
