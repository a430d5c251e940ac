#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtl/distill.hpp"
#include "mtl/metrics.hpp"

namespace mtl::harness {

// Runnable experiments. The toy-* ids train the named configuration(s) on the
// two-curve regression pair; toy-table2 runs the full four-way comparison.
// cond1..cond3 are the fixed basis-overlap scenarios, interaction is the
// free-form variant, and synthseg-matrix pairs depth regression with
// quantile-bin segmentation.
enum class ExperimentId {
  toy_st,
  toy_mtl,
  toy_ts,
  toy_table2,
  cond1,
  cond2,
  cond2m,
  cond3,
  synthseg_matrix,
  interaction,
};

ExperimentId experiment_from_string(const std::string& s);
std::string to_string(ExperimentId id);

// True for the ids that run the pipeline in both directions and classify the
// improvement pattern (cond*, interaction, synthseg-matrix).
bool is_interaction_experiment(ExperimentId id);

struct DatasetParams {
  int64_t n_rich = 640;
  int64_t n_scarce = 160;
  int64_t n_classes = 4;                      // synthseg-matrix only
  int64_t basis_size = 12;                    // scenario experiments only
  int64_t n_shared = 0, n_only1 = 0, n_only2 = 0;
  uint64_t scenario_seed = 1;                 // the scenario is fixed per config
  tasks::Condition condition = tasks::Condition::cond1;  // free-form id only
};

struct ExperimentConfig {
  ExperimentId experiment = ExperimentId::toy_table2;
  std::vector<uint64_t> seeds;
  std::string output_dir;
  int workers = 1;
  bool dump_datasets = false;
  bool dump_pseudo_labels = false;
  DatasetParams dataset;
  distill::PipelineConfig pipeline;
  double interaction_threshold = 0.05;
};

// The parsed config plus the canonical serialized form it validates to.
// The fingerprint is taken over the canonical form, so formatting and key
// order of the on-disk document do not affect it.
struct LoadedConfig {
  ExperimentConfig config;
  std::string canonical_text;
  uint64_t fingerprint = 0;
};

// The compiled-in default document for an experiment (what the shipped
// config files are generated from).
std::string default_config_text(ExperimentId id);

// Parses and validates a config document. Overrides are dotted-path
// assignments ("student.epochs=120"); values parse as structured text first,
// falling back to plain strings. seed_override (when non-empty) and
// out_override (when non-empty) replace the document's seeds / output_dir
// before validation. Throws ValidationError listing every violation.
LoadedConfig parse_config(const std::string& text,
                          const std::vector<std::string>& overrides = {},
                          const std::vector<uint64_t>& seed_override = {},
                          const std::string& out_override = "");
LoadedConfig load_config(const std::string& path,
                         const std::vector<std::string>& overrides = {},
                         const std::vector<uint64_t>& seed_override = {},
                         const std::string& out_override = "");

uint64_t config_fingerprint(const std::string& text);

// One long-format result row; this is the atom everything else is built from.
struct MetricRow {
  std::string experiment;
  uint64_t seed = 0;
  std::string configuration;  // st | mtl | teacher | ts
  int task = 0;
  metrics::MetricKind metric = metrics::MetricKind::mse;
  double value = 0;
};

// Per-(configuration, task, metric) statistics, computed from the rows
// AFTER 6-significant-digit rounding so every summary number is recomputable
// from the emitted file.
struct SummaryLine {
  std::string configuration;
  int task = 0;
  metrics::MetricKind metric = metrics::MetricKind::mse;
  double mean = 0;
  double stddev = 0;
  int64_t n = 0;
};

struct SeedFailure {
  uint64_t seed = 0;
  std::string error;
};

struct Table2Verdict {
  bool ordering_holds = false;  // distilled beats multi-task beats single-task
  double improvement = 0;       // distilled vs multi-task, on rounded means
  bool pass = false;            // ordering_holds && improvement >= 0.15
  bool official = false;        // at least 10 seeds
};

struct InteractionVerdict {
  std::string verdict;   // cond1 | cond2_1to2 | cond2_2to1 | cond3
  std::string expected;  // empty when the id carries no expectation
  bool matches_expected = true;
  double mean_improvement_1to2 = 0, std_1to2 = 0;
  double mean_improvement_2to1 = 0, std_2to1 = 0;
  double threshold = 0.05;
  bool official = false;  // at least 5 seeds
};

// Pseudo-label sets produced along the way, kept so dumps and audits do not
// have to retrain anything. tag is empty for single-direction experiments,
// "1to2"/"2to1" otherwise.
struct PseudoRecord {
  std::string tag;
  uint64_t seed = 0;
  distill::PseudoLabelSet set;
};

struct RunRecord {
  std::string experiment;
  uint64_t fingerprint = 0;
  std::vector<uint64_t> seeds;
  int64_t n_ok = 0;  // seeds whose every sub-run succeeded
  std::vector<SeedFailure> failures;
  std::vector<MetricRow> rows;  // canonical order: seed, configuration, task, metric
  std::vector<SummaryLine> summary;
  std::optional<Table2Verdict> table2;
  std::optional<InteractionVerdict> interaction;
  std::vector<PseudoRecord> pseudo;
  std::vector<std::string> notes;  // caveats carried into the report document
  double wall_seconds = 0;  // kept off the emitted files so outputs stay byte-stable
  std::vector<std::string> artifacts;
};

// 6-significant-digit decimal rendering used for every value that leaves the
// process, and the matching re-parse.
std::string format_value(double v);
double round_value(double v);

// Runs the experiment and fills a record; touches no files.
RunRecord execute(const LoadedConfig& loaded);

// execute() plus the output tree: canonical config copy, metrics.csv, the
// report document, and any requested dumps, all under config.output_dir.
RunRecord run_experiment(const LoadedConfig& loaded);

enum class ReportFormat { csv, structured_text };

std::string render_csv(std::span<const RunRecord> records);
std::string render_report(std::span<const RunRecord> records);
// Human-readable console summary of one record.
std::string render_console(const RunRecord& record);

// Renders records in the given format and writes them to path.
void emit_report(std::span<const RunRecord> records, ReportFormat format, const std::string& path);

// Seed-parallel version of distill::run_teacher_student: identical results,
// seeds dispatched to up to `workers` threads.
distill::ComparisonReport run_comparison(const distill::DatasetFactory& factory,
                                         const distill::PipelineConfig& pipeline,
                                         std::span<const uint64_t> seeds, int workers);

// The dataset a config describes, for the given run seed. Two-direction
// experiments expose their task-1-rich variant here (rich_task 2 is the
// mirrored build used internally).
tasks::ImbalancedDataset build_dataset(const ExperimentConfig& config, uint64_t seed,
                                       int rich_task = 1);

}  // namespace mtl::harness
