#include "mtl/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "mtl/adam.hpp"
#include "mtl/errors.hpp"
#include "mtl/rng.hpp"
#include "mtl/tape.hpp"

namespace mtl::train {

using ad::LossKind;
using ad::Tape;
using ad::Value;
using model::TaskKind;
using tasks::ImbalancedDataset;
using tasks::Sample;

void TrainingConfig::validate() const {
  if (learning_rate < 0.0) throw ConfigError("learning_rate must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (alpha < 0.0) throw ConfigError("alpha must be >= 0");
}

void export_history_csv(const TrainingHistory& history, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write history: " + path);
  out << "epoch,total,task1,task2\n";
  char buf[128];
  for (size_t e = 0; e < history.total.size(); ++e) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", e, history.total[e],
                  history.task1[e], history.task2[e]);
    out << buf;
  }
}

Tensor gather_inputs(const std::vector<Sample>& samples, std::span<const int64_t> rows) {
  const int64_t dim = rows.empty() ? 1 : static_cast<int64_t>(samples[size_t(rows[0])].z.size());
  Tensor x = Tensor::zeros({static_cast<int64_t>(rows.size()), dim});
  for (size_t r = 0; r < rows.size(); ++r) {
    const Sample& s = samples[static_cast<size_t>(rows[r])];
    for (int64_t d = 0; d < dim; ++d) x.at(static_cast<int64_t>(r), d) = s.z[size_t(d)];
  }
  return x;
}

Tensor gather_label_modality(const std::vector<Sample>& samples, std::span<const int64_t> rows,
                             int task, TaskKind kind, int64_t n_classes) {
  const int64_t n = static_cast<int64_t>(rows.size());
  const int64_t width = kind == TaskKind::classification ? n_classes : 1;
  Tensor x = Tensor::zeros({n, width});
  for (size_t r = 0; r < rows.size(); ++r) {
    const Sample& s = samples[static_cast<size_t>(rows[r])];
    const auto& label = task == 1 ? s.label1 : s.label2;
    if (!label)
      throw UsageError("sample " + std::to_string(rows[r]) + " lacks the task-" +
                       std::to_string(task) + " label needed as a modality");
    if (kind == TaskKind::classification) {
      const int64_t c = static_cast<int64_t>(std::llround(*label));
      if (c < 0 || c >= n_classes)
        throw IntegrityError("class index " + std::to_string(c) + " outside [0," +
                             std::to_string(n_classes) + ")");
      x.at(static_cast<int64_t>(r), c) = 1.0;
    } else {
      x.at(static_cast<int64_t>(r), 0) = *label;
    }
  }
  return x;
}

namespace {

struct HeadPlan {
  size_t head_index;  // into the net's head list
  int task;           // 1 or 2
  TaskKind kind;
  int64_t dim;
  LossKind loss;
};

TaskKind task_kind(const ImbalancedDataset& ds, int task) {
  return task == 1 ? ds.kind1 : ds.kind2;
}

int64_t task_classes(const ImbalancedDataset& ds, int task) {
  return task == 1 ? ds.classes1 : ds.classes2;
}

// Resolve and validate the head->task binding against net and dataset.
std::vector<HeadPlan> plan_heads(const std::vector<model::MultiTaskNet::Head>& heads,
                                 const ImbalancedDataset& ds, const TrainingConfig& cfg,
                                 std::vector<int> head_tasks) {
  if (head_tasks.empty())
    for (size_t i = 0; i < heads.size(); ++i) head_tasks.push_back(static_cast<int>(i) + 1);
  if (head_tasks.size() != heads.size())
    throw ConfigError("head_tasks has " + std::to_string(head_tasks.size()) +
                      " entries for " + std::to_string(heads.size()) + " heads");
  if (!cfg.losses.empty() && cfg.losses.size() != heads.size())
    throw ConfigError("losses list has " + std::to_string(cfg.losses.size()) +
                      " entries for " + std::to_string(heads.size()) + " heads");

  std::vector<HeadPlan> plan;
  bool seen[3] = {false, false, false};
  for (size_t i = 0; i < heads.size(); ++i) {
    const int task = head_tasks[i];
    if (task != 1 && task != 2) throw ConfigError("head_tasks entries must be 1 or 2");
    if (seen[task]) throw ConfigError("two heads bound to task " + std::to_string(task));
    seen[task] = true;

    const TaskKind want = task_kind(ds, task);
    if (heads[i].kind != want)
      throw ConfigError("head '" + heads[i].name + "' is " + model::to_string(heads[i].kind) +
                        " but task " + std::to_string(task) + " labels are " +
                        model::to_string(want));
    if (want == TaskKind::classification && heads[i].dim != task_classes(ds, task))
      throw ConfigError("head '" + heads[i].name + "' emits " + std::to_string(heads[i].dim) +
                        " classes but task " + std::to_string(task) + " has " +
                        std::to_string(task_classes(ds, task)));

    LossKind loss = cfg.losses.empty()
                        ? (want == TaskKind::classification ? LossKind::cross_entropy
                                                            : LossKind::mse)
                        : cfg.losses[i];
    if ((loss == LossKind::cross_entropy) != (want == TaskKind::classification))
      throw ConfigError("loss kind " + ad::to_string(loss) + " does not fit " +
                        model::to_string(want) + " task " + std::to_string(task));
    plan.push_back({i, task, want, heads[i].dim, loss});
  }
  // order terms by task so the loss weighting (first term 1, rest alpha) is
  // stable regardless of head declaration order
  std::sort(plan.begin(), plan.end(),
            [](const HeadPlan& a, const HeadPlan& b) { return a.task < b.task; });
  return plan;
}

// One task's labels for a batch: targets (or class indices) plus mask.
struct BatchLabels {
  Tensor targets;            // regression: [n, dim]
  std::vector<int> classes;  // classification: per-row index
  std::vector<uint8_t> mask;
  bool any = false;
};

BatchLabels gather_labels(const std::vector<Sample>& samples, std::span<const int64_t> rows,
                          const HeadPlan& plan) {
  BatchLabels out;
  const int64_t n = static_cast<int64_t>(rows.size());
  out.mask.assign(static_cast<size_t>(n), 0);
  if (plan.kind == TaskKind::classification)
    out.classes.assign(static_cast<size_t>(n), 0);
  else
    out.targets = Tensor::zeros({n, plan.dim});
  for (size_t r = 0; r < rows.size(); ++r) {
    const Sample& s = samples[static_cast<size_t>(rows[r])];
    const auto& label = plan.task == 1 ? s.label1 : s.label2;
    if (!label) continue;
    out.mask[r] = 1;
    out.any = true;
    if (plan.kind == TaskKind::classification)
      out.classes[r] = static_cast<int>(std::llround(*label));
    else
      out.targets.at(static_cast<int64_t>(r), 0) = *label;
  }
  return out;
}

using ForwardFn = std::function<std::vector<Value>(Tape&, std::span<const int64_t>)>;

TrainingHistory run_loop(ad::ParameterSet& params, const std::vector<Sample>& samples,
                         const std::vector<HeadPlan>& plan, const TrainingConfig& cfg,
                         const ForwardFn& forward) {
  if (samples.empty()) throw ConfigError("training set is empty");
  const int64_t n = static_cast<int64_t>(samples.size());

  opt::AdamState adam({.learning_rate = cfg.learning_rate});
  TrainingHistory history;
  history.total.reserve(static_cast<size_t>(cfg.epochs));

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", static_cast<uint64_t>(epoch)));
    std::vector<int64_t> order = shuffle_rng.permutation(n);

    double epoch_total = 0.0;
    int64_t n_batches = 0;
    double task_sum[3] = {0, 0, 0};
    int64_t task_batches[3] = {0, 0, 0};

    for (int64_t start = 0; start < n; start += cfg.batch_size) {
      const int64_t stop = std::min(start + cfg.batch_size, n);
      std::span<const int64_t> rows(order.data() + start, static_cast<size_t>(stop - start));

      params.zero_grads();
      Tape tape;
      std::vector<Value> preds = forward(tape, rows);

      Value combined = tape.input(Tensor::scalar(0.0));
      bool any = false;
      for (size_t t = 0; t < plan.size(); ++t) {
        BatchLabels labels = gather_labels(samples, rows, plan[t]);
        if (!labels.any) continue;
        Value pred = preds[plan[t].head_index];
        Value li = plan[t].kind == TaskKind::classification
                       ? tape.cross_entropy_loss(pred, labels.classes, labels.mask)
                       : tape.loss(plan[t].loss, pred, labels.targets, labels.mask);
        task_sum[plan[t].task] += tape.scalar(li);
        ++task_batches[plan[t].task];
        combined = tape.axpy(combined, t == 0 ? 1.0 : cfg.alpha, li);
        any = true;
      }
      if (!any)
        throw UsageError("degenerate batch: every sample is masked for every task (epoch " +
                         std::to_string(epoch) + ")");

      const double loss_value = tape.scalar(combined);
      if (!std::isfinite(loss_value))
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch));
      epoch_total += loss_value;
      ++n_batches;

      tape.backward(combined);
      adam.step(params);
    }

    history.total.push_back(epoch_total / static_cast<double>(n_batches));
    history.task1.push_back(task_batches[1] ? task_sum[1] / double(task_batches[1]) : 0.0);
    history.task2.push_back(task_batches[2] ? task_sum[2] / double(task_batches[2]) : 0.0);
  }
  return history;
}

}  // namespace

TrainingHistory train_student_on(model::MultiTaskNet& net, const std::vector<Sample>& samples,
                                 const ImbalancedDataset& dataset_meta,
                                 const TrainingConfig& config, std::vector<int> head_tasks) {
  config.validate();
  std::vector<HeadPlan> plan = plan_heads(net.heads, dataset_meta, config,
                                          std::move(head_tasks));
  ForwardFn forward = [&net, &samples](Tape& tape, std::span<const int64_t> rows) {
    return model::student_forward(tape, net, gather_inputs(samples, rows));
  };
  return run_loop(net.params, samples, plan, config, forward);
}

TrainingHistory train_student(model::MultiTaskNet& net, const ImbalancedDataset& dataset,
                              const TrainingConfig& config, std::vector<int> head_tasks) {
  return train_student_on(net, dataset.samples, dataset, config, std::move(head_tasks));
}

TrainingHistory train_teacher_net(model::MultiModalTeacher& net,
                                  const std::vector<Sample>& samples,
                                  const ImbalancedDataset& dataset_meta,
                                  const TrainingConfig& config, int source_task,
                                  std::vector<int> head_tasks) {
  config.validate();
  if (source_task != 1 && source_task != 2) throw ConfigError("source_task must be 1 or 2");
  for (const Sample& s : samples)
    if (!s.label1 || !s.label2)
      throw ConfigError("teacher training requires fully labeled samples");
  std::vector<HeadPlan> plan = plan_heads(net.heads, dataset_meta, config,
                                          std::move(head_tasks));
  const TaskKind source_kind = source_task == 1 ? dataset_meta.kind1 : dataset_meta.kind2;
  const int64_t source_classes = source_task == 1 ? dataset_meta.classes1
                                                  : dataset_meta.classes2;
  ForwardFn forward = [&, source_task, source_kind,
                       source_classes](Tape& tape, std::span<const int64_t> rows) {
    std::vector<Tensor> inputs;
    inputs.push_back(gather_inputs(samples, rows));
    inputs.push_back(gather_label_modality(samples, rows, source_task, source_kind,
                                           source_classes));
    return model::teacher_forward(tape, net, inputs);
  };
  return run_loop(net.params, samples, plan, config, forward);
}

namespace {

// Reduce raw head outputs to flat per-sample values: regression takes the
// scalar column, classification the argmax class.
std::vector<double> head_values(const Tensor& out, TaskKind kind) {
  const int64_t n = out.rows();
  std::vector<double> vals(static_cast<size_t>(n));
  if (kind == TaskKind::classification) {
    for (int64_t b = 0; b < n; ++b) {
      int64_t best = 0;
      for (int64_t j = 1; j < out.cols(); ++j)
        if (out.at(b, j) > out.at(b, best)) best = j;
      vals[static_cast<size_t>(b)] = static_cast<double>(best);
    }
  } else {
    for (int64_t b = 0; b < n; ++b) vals[static_cast<size_t>(b)] = out.at(b, 0);
  }
  return vals;
}

metrics::MetricsReport report_from_outputs(
    const std::vector<Tensor>& outs, const std::vector<model::MultiTaskNet::Head>& heads,
    const std::vector<tasks::Sample>& eval_set, const std::vector<int>& head_tasks,
    const std::vector<std::vector<metrics::MetricKind>>& kinds) {
  if (head_tasks.size() != heads.size() || kinds.size() != heads.size())
    throw UsageError("evaluate: head_tasks and kinds must match the net's head count");
  metrics::MetricsReport report;
  report.sample_count = static_cast<int64_t>(eval_set.size());

  // stable task order in the report
  std::vector<size_t> idx(heads.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(),
            [&](size_t a, size_t b) { return head_tasks[a] < head_tasks[b]; });

  for (size_t i : idx) {
    const int task = head_tasks[i];
    std::vector<double> pred = head_values(outs[i], heads[i].kind);
    std::vector<double> gt(eval_set.size());
    for (size_t r = 0; r < eval_set.size(); ++r) {
      const auto& label = task == 1 ? eval_set[r].label1 : eval_set[r].label2;
      if (!label) throw UsageError("eval sample " + std::to_string(r) + " lacks a label");
      gt[r] = *label;
    }
    for (metrics::MetricKind kind : kinds[i])
      report.entries.push_back({task, kind, metrics::compute_metric(kind, pred, gt)});
  }
  return report;
}

}  // namespace

metrics::MetricsReport evaluate(const model::MultiTaskNet& net,
                                const std::vector<tasks::Sample>& eval_set,
                                const std::vector<int>& head_tasks,
                                const std::vector<std::vector<metrics::MetricKind>>& kinds) {
  if (eval_set.empty()) throw UsageError("evaluate: empty eval set");
  std::vector<int64_t> rows(eval_set.size());
  for (size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int64_t>(i);
  std::vector<Tensor> outs = model::predict(net, gather_inputs(eval_set, rows));
  return report_from_outputs(outs, net.heads, eval_set, head_tasks, kinds);
}

metrics::MetricsReport evaluate_teacher(
    const model::MultiModalTeacher& net, const std::vector<tasks::Sample>& eval_set,
    int source_task, const std::vector<int>& head_tasks,
    const std::vector<std::vector<metrics::MetricKind>>& kinds) {
  if (eval_set.empty()) throw UsageError("evaluate: empty eval set");
  if (source_task != 1 && source_task != 2) throw UsageError("source_task must be 1 or 2");
  std::vector<int64_t> rows(eval_set.size());
  for (size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int64_t>(i);

  const int64_t width = net.config.input_dims[1];
  const bool onehot = width > 1;
  std::vector<Tensor> inputs;
  inputs.push_back(gather_inputs(eval_set, rows));
  inputs.push_back(gather_label_modality(
      eval_set, rows, source_task,
      onehot ? model::TaskKind::classification : model::TaskKind::regression, width));
  std::vector<Tensor> outs = model::predict(net, inputs);
  return report_from_outputs(outs, net.heads, eval_set, head_tasks, kinds);
}

}  // namespace mtl::train
