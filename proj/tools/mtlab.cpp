#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mtl/errors.hpp"
#include "mtl/harness.hpp"
#include "mtl/tasks.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<uint64_t> seeds;
  std::string out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required) {
  auto* config =
      cmd->add_option("--config", args.config_path, "experiment config file")
          ->check(CLI::ExistingFile);
  if (config_required) config->required();
  cmd->add_option("--seed", args.seeds, "seed to run; repeatable, replaces the config seed list");
  cmd->add_option("--override", args.overrides,
                  "config override as dotted.path=value; repeatable");
}

mtl::harness::LoadedConfig load(const CommonArgs& args, const std::string& fallback_text,
                                const std::string& out_override) {
  if (args.config_path.empty())
    return mtl::harness::parse_config(fallback_text, args.overrides, args.seeds, out_override);
  return mtl::harness::load_config(args.config_path, args.overrides, args.seeds, out_override);
}

int finish(const mtl::harness::RunRecord& record) {
  std::fputs(mtl::harness::render_console(record).c_str(), stdout);
  return record.n_ok == 0 ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mtlab: teacher-student experiments on imbalanced multi-task data"};
  app.require_subcommand(1);

  CommonArgs run_args, table2_args, interaction_args, export_args;
  std::string run_out, table2_out, interaction_out, export_out;

  CLI::App* cmd_run = app.add_subcommand("run", "run one experiment end to end");
  add_common(cmd_run, run_args, true);
  cmd_run->add_option("--out", run_out, "output directory; replaces the config output_dir");

  CLI::App* cmd_table2 = app.add_subcommand(
      "reproduce-table2",
      "three-way toy comparison (st / mtl / ts) checked against the reference result");
  add_common(cmd_table2, table2_args, false);
  cmd_table2->add_option("--out", table2_out, "output directory; replaces the config output_dir");

  CLI::App* cmd_interaction = app.add_subcommand(
      "analyze-interaction", "train both transfer directions and classify the task interaction");
  add_common(cmd_interaction, interaction_args, true);
  cmd_interaction->add_option("--out", interaction_out,
                              "output directory; replaces the config output_dir");

  CLI::App* cmd_export =
      app.add_subcommand("export-dataset", "sample one dataset and write its training pool");
  add_common(cmd_export, export_args, true);
  cmd_export->add_option("--out", export_out, "destination csv file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*cmd_run) return finish(mtl::harness::run_experiment(load(run_args, "", run_out)));

    if (*cmd_table2) {
      const std::string fallback =
          mtl::harness::default_config_text(mtl::harness::ExperimentId::toy_table2);
      return finish(mtl::harness::run_experiment(load(table2_args, fallback, table2_out)));
    }

    if (*cmd_interaction) {
      mtl::harness::LoadedConfig loaded = load(interaction_args, "", interaction_out);
      if (!mtl::harness::is_interaction_experiment(loaded.config.experiment))
        throw mtl::ConfigError("experiment '" + mtl::harness::to_string(loaded.config.experiment) +
                               "' has a fixed transfer direction; use the run command");
      return finish(mtl::harness::run_experiment(loaded));
    }

    // export-dataset: --out names a file, not a directory, so it never goes
    // through the output_dir override.
    mtl::harness::LoadedConfig loaded = load(export_args, "", "");
    const uint64_t seed = loaded.config.seeds.front();
    mtl::tasks::ImbalancedDataset dataset = mtl::harness::build_dataset(loaded.config, seed);
    mtl::tasks::export_dataset_csv(dataset.samples, export_out);
    std::printf("wrote %zu samples to %s (seed %llu)\n", dataset.samples.size(),
                export_out.c_str(), static_cast<unsigned long long>(seed));
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
