#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mtl/metrics.hpp"
#include "mtl/model.hpp"
#include "mtl/tasks.hpp"

namespace mtl::train {

struct TrainingConfig {
  double learning_rate = 1e-3;
  int64_t batch_size = 32;
  int64_t epochs = 100;
  double alpha = 1.0;  // loss weight of every task after the first
  uint64_t seed = 0;
  // Loss kind per head, aligned with the net's head list. Empty = defaults
  // (mse for regression heads, cross_entropy for classification heads).
  std::vector<ad::LossKind> losses;

  void validate() const;  // throws ConfigError listing the violation
};

struct TrainingHistory {
  std::vector<double> total;  // one entry per epoch, mean batch loss
  std::vector<double> task1;  // unweighted per-task means (0 when absent)
  std::vector<double> task2;
};

void export_history_csv(const TrainingHistory& history, const std::string& path);

// Mini-batch training of a student on an imbalanced pool. head_tasks names
// the dataset task (1 or 2) each net head learns; empty binds head i to
// task i+1. Samples missing a head's label are masked out of that head's
// loss (zero loss, zero gradient). Deterministic in (net init, data, config).
TrainingHistory train_student(model::MultiTaskNet& net, const tasks::ImbalancedDataset& dataset,
                              const TrainingConfig& config,
                              std::vector<int> head_tasks = {});

// Same loop over an explicit sample list (e.g. a fully labeled subset).
TrainingHistory train_student_on(model::MultiTaskNet& net,
                                 const std::vector<tasks::Sample>& samples,
                                 const tasks::ImbalancedDataset& dataset_meta,
                                 const TrainingConfig& config,
                                 std::vector<int> head_tasks = {});

// Teacher variant: trains on `samples` (every row must carry both labels),
// feeding each sample's `source_task` ground-truth label as the second
// input modality (one-hot for classification sources).
TrainingHistory train_teacher_net(model::MultiModalTeacher& net,
                                  const std::vector<tasks::Sample>& samples,
                                  const tasks::ImbalancedDataset& dataset_meta,
                                  const TrainingConfig& config, int source_task,
                                  std::vector<int> head_tasks = {});

// Per-task metrics over a fully labeled eval set. Classification heads are
// reduced to argmax class indices before the metric.
metrics::MetricsReport evaluate(const model::MultiTaskNet& net,
                                const std::vector<tasks::Sample>& eval_set,
                                const std::vector<int>& head_tasks,
                                const std::vector<std::vector<metrics::MetricKind>>& kinds);

// Teacher evaluation: the source task's ground truth is fed as modality 2.
metrics::MetricsReport evaluate_teacher(const model::MultiModalTeacher& net,
                                        const std::vector<tasks::Sample>& eval_set,
                                        int source_task,
                                        const std::vector<int>& head_tasks,
                                        const std::vector<std::vector<metrics::MetricKind>>& kinds);

// Batch assembly helpers shared with the distillation pipeline.
Tensor gather_inputs(const std::vector<tasks::Sample>& samples, std::span<const int64_t> rows);
// One-hot encodes classification labels; regression labels pass through as
// a single column. Rows must all carry the label.
Tensor gather_label_modality(const std::vector<tasks::Sample>& samples,
                             std::span<const int64_t> rows, int task,
                             model::TaskKind kind, int64_t n_classes);

}  // namespace mtl::train
