#include "mtl/distill.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "mtl/errors.hpp"
#include "mtl/rng.hpp"
#include "mtl/tape.hpp"

namespace mtl::distill {

Direction direction_from_string(const std::string& s) {
  if (s == "task1_as_input" || s == "1") return Direction::task1_as_input;
  if (s == "task2_as_input" || s == "2") return Direction::task2_as_input;
  throw ConfigError("unknown direction '" + s + "' (want task1_as_input or task2_as_input)");
}

std::string to_string(Direction d) {
  return d == Direction::task1_as_input ? "task1_as_input" : "task2_as_input";
}

std::string to_string(ConditionVerdict::Kind k) {
  switch (k) {
    case ConditionVerdict::Kind::cond1: return "cond1";
    case ConditionVerdict::Kind::cond2_1to2: return "cond2_1to2";
    case ConditionVerdict::Kind::cond2_2to1: return "cond2_2to1";
    case ConditionVerdict::Kind::cond3: return "cond3";
  }
  throw UsageError("unreachable verdict kind");
}

void DistillConfig::validate() const {
  if (!(tau >= 0.0 && tau <= 1.0))
    throw ConfigError("tau must be in [0,1], got " + std::to_string(tau));
  teacher.validate();
  student.validate();
}

double mean_of(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double s = 0;
  for (double x : xs) s += x;
  return s / double(xs.size());
}

double std_of(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  double m = mean_of(xs);
  double s = 0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / double(xs.size() - 1));
}

namespace {

void validate_pipeline(const PipelineConfig& config) {
  config.distill.validate();
  if (config.net.heads.size() != 2)
    throw ConfigError("distillation pipeline needs exactly two heads (task 1 and task 2), got " +
                      std::to_string(config.net.heads.size()));
  if (config.net.input_dims.size() != 1)
    throw ConfigError("pipeline net config lists the raw-input modality only; teacher's extra "
                      "branch is derived from the direction");
}

model::TaskKind dataset_kind(const tasks::ImbalancedDataset& d, int task) {
  return task == 1 ? d.kind1 : d.kind2;
}

int64_t dataset_classes(const tasks::ImbalancedDataset& d, int task) {
  return task == 1 ? d.classes1 : d.classes2;
}

bool has_label(const tasks::Sample& s, int task) {
  return task == 1 ? s.label1.has_value() : s.label2.has_value();
}

// Architecture of the teacher matching a student template: same trunk and
// heads, plus a second input branch carrying the source task's label.
model::NetworkConfig teacher_config(const model::NetworkConfig& net,
                                    const tasks::ImbalancedDataset& dataset, int source) {
  model::NetworkConfig cfg = net;
  int64_t source_dim = dataset_kind(dataset, source) == model::TaskKind::classification
                           ? dataset_classes(dataset, source)
                           : 1;
  cfg.input_dims = {dataset.input_dim(), source_dim};
  return cfg;
}

// Single-head copy of the template keeping only the given task's head.
model::NetworkConfig single_task_config(const model::NetworkConfig& net, int task) {
  model::NetworkConfig cfg = net;
  cfg.heads = {net.heads[size_t(task - 1)]};
  return cfg;
}

std::vector<tasks::Sample> labeled_subset(const std::vector<tasks::Sample>& samples, int task) {
  std::vector<tasks::Sample> out;
  for (const auto& s : samples)
    if (has_label(s, task)) out.push_back(s);
  return out;
}

std::vector<tasks::Sample> both_labeled_subset(const std::vector<tasks::Sample>& samples) {
  std::vector<tasks::Sample> out;
  for (const auto& s : samples)
    if (s.label1 && s.label2) out.push_back(s);
  return out;
}

}  // namespace

std::vector<metrics::MetricKind> metric_kinds_for(const PipelineConfig& config,
                                                  const tasks::ImbalancedDataset& dataset,
                                                  int task) {
  const auto& chosen = task == 1 ? config.metrics1 : config.metrics2;
  if (!chosen.empty()) return chosen;
  if (dataset_kind(dataset, task) == model::TaskKind::classification)
    return {metrics::MetricKind::miou};
  return {metrics::MetricKind::mse};
}

model::MultiModalTeacher train_teacher(const tasks::ImbalancedDataset& dataset,
                                       const PipelineConfig& config) {
  validate_pipeline(config);
  dataset.validate();
  const int source = source_task(config.distill.direction);
  auto subset = both_labeled_subset(dataset.samples);
  if (subset.empty())
    throw ConfigError("teacher training needs at least one sample labeled for both tasks");

  model::NetworkConfig cfg = teacher_config(config.net, dataset, source);
  cfg.init_seed = derive_seed(config.distill.teacher.seed, "init");
  model::MultiModalTeacher teacher = model::build_teacher(cfg);
  train::train_teacher_net(teacher, subset, dataset, config.distill.teacher, source);
  return teacher;
}

PseudoLabelSet generate_pseudo_labels(const model::MultiModalTeacher& teacher,
                                      const tasks::ImbalancedDataset& dataset,
                                      const PipelineConfig& config) {
  validate_pipeline(config);
  const int source = source_task(config.distill.direction);
  const int target = target_task(config.distill.direction);
  const model::TaskKind src_kind = dataset_kind(dataset, source);
  const model::TaskKind tgt_kind = dataset_kind(dataset, target);
  const int64_t src_classes = dataset_classes(dataset, source);

  PseudoLabelSet set;
  set.target_task = target;
  set.teacher_fingerprint = model::fingerprint(teacher);

  std::vector<int64_t> candidates;
  for (int64_t i = 0; i < int64_t(dataset.samples.size()); ++i) {
    const auto& s = dataset.samples[size_t(i)];
    if (has_label(s, target)) continue;
    if (!has_label(s, source)) {
      ++set.skipped;
      continue;
    }
    candidates.push_back(i);
  }

  constexpr int64_t kChunk = 256;  // row-independent kernels: split size is inert
  for (int64_t start = 0; start < int64_t(candidates.size()); start += kChunk) {
    int64_t stop = std::min<int64_t>(start + kChunk, int64_t(candidates.size()));
    std::span<const int64_t> rows(candidates.data() + start, size_t(stop - start));
    Tensor z = train::gather_inputs(dataset.samples, rows);
    Tensor m2 = train::gather_label_modality(dataset.samples, rows, source, src_kind, src_classes);
    std::vector<Tensor> outs = model::predict(teacher, {z, m2});
    const Tensor& head = outs[size_t(target - 1)];

    if (tgt_kind == model::TaskKind::regression) {
      for (int64_t r = 0; r < head.rows(); ++r)
        set.entries.push_back({rows[size_t(r)], head.at(r, 0), std::nullopt});
    } else {
      Tensor probs = ad::softmax(head);
      for (int64_t r = 0; r < probs.rows(); ++r) {
        int64_t best = 0;
        double best_p = probs.at(r, 0);
        for (int64_t c = 1; c < probs.cols(); ++c)
          if (probs.at(r, c) > best_p) { best_p = probs.at(r, c); best = c; }
        if (best_p > config.distill.tau)
          set.entries.push_back({rows[size_t(r)], double(best), best_p});
        else
          ++set.dropped;
      }
    }
  }
  return set;
}

tasks::ImbalancedDataset merge_with_pseudo(const tasks::ImbalancedDataset& dataset,
                                           const PseudoLabelSet& pseudo) {
  tasks::ImbalancedDataset out = dataset;
  const int target = pseudo.target_task;
  for (const auto& e : pseudo.entries) {
    if (e.sample_index < 0 || e.sample_index >= int64_t(out.samples.size()))
      throw IntegrityError("pseudo label references sample " + std::to_string(e.sample_index) +
                           " outside the dataset (size " + std::to_string(out.samples.size()) +
                           ")");
    tasks::Sample& s = out.samples[size_t(e.sample_index)];
    if (has_label(s, target))
      throw IntegrityError("pseudo label would overwrite ground truth of task " +
                           std::to_string(target) + " at sample " +
                           std::to_string(e.sample_index));
    if (target == 1) {
      s.label1 = e.value;
      s.pseudo1 = true;
    } else {
      s.label2 = e.value;
      s.pseudo2 = true;
    }
  }
  return out;
}

void export_pseudo_csv(const PseudoLabelSet& set, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << "id,label,confidence\n";
  char buf[64];
  auto fmt = [&](double v) {
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  };
  for (const auto& e : set.entries) {
    f << e.sample_index << ',' << fmt(e.value) << ',';
    if (e.confidence) f << fmt(*e.confidence);
    f << '\n';
  }
  if (!f) throw IoError("write to '" + path + "' failed");
}

SingleRun run_st_baseline(const tasks::ImbalancedDataset& dataset, const PipelineConfig& config,
                          uint64_t seed) {
  validate_pipeline(config);
  dataset.validate();
  const int scarce = dataset.scarce_task();
  train::TrainingConfig tc = config.distill.student;
  tc.seed = derive_seed(seed, "st");
  tc.losses.clear();
  model::NetworkConfig cfg = single_task_config(config.net, scarce);
  cfg.init_seed = derive_seed(tc.seed, "init");
  model::MultiTaskNet net = model::build_student(cfg);
  train::train_student_on(net, labeled_subset(dataset.samples, scarce), dataset, tc, {scarce});
  SingleRun out;
  out.report = train::evaluate(net, dataset.eval_set, {scarce},
                               {metric_kinds_for(config, dataset, scarce)});
  out.net_fingerprint = model::fingerprint(net);
  return out;
}

SingleRun run_mtl_student(const tasks::ImbalancedDataset& dataset, const PipelineConfig& config,
                          uint64_t seed) {
  validate_pipeline(config);
  dataset.validate();
  train::TrainingConfig tc = config.distill.student;
  tc.seed = derive_seed(seed, "mtl");
  model::NetworkConfig cfg = config.net;
  cfg.init_seed = derive_seed(tc.seed, "init");
  model::MultiTaskNet net = model::build_student(cfg);
  train::train_student(net, dataset, tc);
  SingleRun out;
  out.report = train::evaluate(
      net, dataset.eval_set, {1, 2},
      {metric_kinds_for(config, dataset, 1), metric_kinds_for(config, dataset, 2)});
  out.net_fingerprint = model::fingerprint(net);
  return out;
}

DistilledRun run_distilled(const tasks::ImbalancedDataset& dataset, const PipelineConfig& config,
                           uint64_t seed) {
  validate_pipeline(config);
  dataset.validate();
  const int scarce = dataset.scarce_task();
  const int source = source_task(config.distill.direction);
  const auto kinds1 = metric_kinds_for(config, dataset, 1);
  const auto kinds2 = metric_kinds_for(config, dataset, 2);

  PipelineConfig pc = config;
  pc.distill.teacher.seed = derive_seed(seed, "teacher");
  model::MultiModalTeacher teacher = train_teacher(dataset, pc);

  DistilledRun out;
  out.pseudo = generate_pseudo_labels(teacher, dataset, pc);
  out.teacher_fingerprint = model::fingerprint(teacher);
  tasks::ImbalancedDataset merged = merge_with_pseudo(dataset, out.pseudo);
  out.teacher_report =
      train::evaluate_teacher(teacher, dataset.eval_set, source, {1, 2}, {kinds1, kinds2});

  train::TrainingConfig tc = config.distill.student;
  if (config.distill.student_multitask) {
    // Same stream as run_mtl_student: with nothing to pseudo-label the two
    // runs are bit-identical, which is the property tying MTL-TS back to MTL.
    tc.seed = derive_seed(seed, "mtl");
    model::NetworkConfig cfg = config.net;
    cfg.init_seed = derive_seed(tc.seed, "init");
    model::MultiTaskNet net = model::build_student(cfg);
    train::train_student(net, merged, tc);
    out.student_report = train::evaluate(net, merged.eval_set, {1, 2}, {kinds1, kinds2});
    out.student_fingerprint = model::fingerprint(net);
  } else {
    tc.seed = derive_seed(seed, "ts");
    tc.losses.clear();
    model::NetworkConfig cfg = single_task_config(config.net, scarce);
    cfg.init_seed = derive_seed(tc.seed, "init");
    model::MultiTaskNet net = model::build_student(cfg);
    train::train_student_on(net, labeled_subset(merged.samples, scarce), merged, tc, {scarce});
    const auto& kinds_scarce = scarce == 1 ? kinds1 : kinds2;
    out.student_report = train::evaluate(net, merged.eval_set, {scarce}, {kinds_scarce});
    out.student_fingerprint = model::fingerprint(net);
  }
  return out;
}

ComparisonReport::SeedResult run_comparison_seed(const tasks::ImbalancedDataset& dataset,
                                                 const PipelineConfig& config, uint64_t seed) {
  ComparisonReport::SeedResult slot;
  slot.st = run_st_baseline(dataset, config, seed).report;
  slot.mtl = run_mtl_student(dataset, config, seed).report;
  DistilledRun d = run_distilled(dataset, config, seed);
  slot.ts = std::move(d.student_report);
  slot.teacher = std::move(d.teacher_report);
  slot.pseudo = std::move(d.pseudo);
  slot.ok = true;
  return slot;
}

void recompute_aggregates(ComparisonReport& report) {
  report.n_ok = 0;
  std::vector<double> st_v, mtl_v, ts_v, per_seed_impr;
  const bool hib = metrics::higher_is_better(report.target_metric);
  for (const auto& r : report.results) {
    if (!r.ok) continue;
    ++report.n_ok;
    double st = r.st.get(report.target_task, report.target_metric);
    double mtl = r.mtl.get(report.target_task, report.target_metric);
    double ts = r.ts.get(report.target_task, report.target_metric);
    st_v.push_back(st);
    mtl_v.push_back(mtl);
    ts_v.push_back(ts);
    if (mtl != 0.0) per_seed_impr.push_back(metrics::improvement_ratio(mtl, ts, hib));
  }
  report.st_mean = mean_of(st_v);
  report.st_std = std_of(st_v);
  report.mtl_mean = mean_of(mtl_v);
  report.mtl_std = std_of(mtl_v);
  report.ts_mean = mean_of(ts_v);
  report.ts_std = std_of(ts_v);
  report.improvement_of_means = 0;
  if (report.mtl_mean != 0.0)
    report.improvement_of_means = metrics::improvement_ratio(report.mtl_mean, report.ts_mean, hib);
  report.mean_seed_improvement = mean_of(per_seed_impr);
}

ComparisonReport run_teacher_student(const DatasetFactory& factory, const PipelineConfig& config,
                                     std::span<const uint64_t> seeds) {
  validate_pipeline(config);
  if (seeds.empty()) throw UsageError("run_teacher_student needs at least one seed");

  ComparisonReport report;
  report.seeds.assign(seeds.begin(), seeds.end());
  report.results.resize(seeds.size());

  bool meta_set = false;
  for (size_t i = 0; i < seeds.size(); ++i) {
    auto& slot = report.results[i];
    try {
      tasks::ImbalancedDataset dataset = factory(seeds[i]);
      if (!meta_set) {
        report.target_task = dataset.scarce_task();
        report.target_metric = metric_kinds_for(config, dataset, report.target_task)[0];
        meta_set = true;
      }
      slot = run_comparison_seed(dataset, config, seeds[i]);
    } catch (const std::exception& e) {
      slot.error = e.what();
    }
  }
  recompute_aggregates(report);
  return report;
}

ComparisonReport run_teacher_student(const tasks::ImbalancedDataset& dataset,
                                     const PipelineConfig& config,
                                     std::span<const uint64_t> seeds) {
  return run_teacher_student([&dataset](uint64_t) { return dataset; }, config, seeds);
}

ConditionVerdict classify_interaction(ComparisonReport dir_1to2, ComparisonReport dir_2to1,
                                      double threshold) {
  ConditionVerdict v;
  v.threshold = threshold;
  v.n_seeds = int64_t(dir_1to2.seeds.size());
  v.dir_1to2 = std::move(dir_1to2);
  v.dir_2to1 = std::move(dir_2to1);

  auto seed_improvements = [](const ComparisonReport& r) {
    std::vector<double> out;
    const bool hib = metrics::higher_is_better(r.target_metric);
    for (const auto& s : r.results) {
      if (!s.ok) continue;
      double mtl = s.mtl.get(r.target_task, r.target_metric);
      double ts = s.ts.get(r.target_task, r.target_metric);
      if (mtl != 0.0) out.push_back(metrics::improvement_ratio(mtl, ts, hib));
    }
    return out;
  };
  auto i12 = seed_improvements(v.dir_1to2);
  auto i21 = seed_improvements(v.dir_2to1);
  v.mean_improvement_1to2 = mean_of(i12);
  v.std_1to2 = std_of(i12);
  v.mean_improvement_2to1 = mean_of(i21);
  v.std_2to1 = std_of(i21);

  const bool fwd_helps = v.mean_improvement_1to2 > threshold;
  const bool rev_helps = v.mean_improvement_2to1 > threshold;
  using K = ConditionVerdict::Kind;
  v.verdict = fwd_helps && rev_helps ? K::cond1
              : fwd_helps            ? K::cond2_1to2
              : rev_helps            ? K::cond2_2to1
                                     : K::cond3;
  return v;
}

ConditionVerdict analyze_task_interaction(const DatasetFactory& rich1_factory,
                                          const DatasetFactory& rich2_factory,
                                          const InteractionConfig& config,
                                          std::span<const uint64_t> seeds) {
  // Direction i->j: task i's ground truth feeds the teacher, so task i must
  // be the richly labeled one and the improvement lands on task j.
  PipelineConfig fwd = config.pipeline;
  fwd.distill.direction = Direction::task1_as_input;
  PipelineConfig rev = config.pipeline;
  rev.distill.direction = Direction::task2_as_input;
  return classify_interaction(run_teacher_student(rich1_factory, fwd, seeds),
                              run_teacher_student(rich2_factory, rev, seeds), config.threshold);
}

ConditionVerdict analyze_task_interaction(const tasks::ScenarioTasks& scenario,
                                          const InteractionConfig& config,
                                          std::span<const uint64_t> seeds) {
  auto make_factory = [&scenario, &config](int rich_task) {
    return [&scenario, &config, rich_task](uint64_t seed) {
      return tasks::sample_scenario_dataset(scenario, config.n_rich, config.n_scarce, rich_task,
                                            derive_seed(seed, "data"));
    };
  };
  return analyze_task_interaction(make_factory(1), make_factory(2), config, seeds);
}

}  // namespace mtl::distill
