#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fedsde/cli/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"FedAvg simulator and SDE-limit lab"};
  app.require_subcommand(1);

  std::string run_config;
  std::string out_dir;
  int threads = 0;
  auto* run = app.add_subcommand("run", "Run an experiment config");
  run->add_option("config", run_config, "Experiment config (JSON)")->required();
  auto* out_opt = run->add_option("--out", out_dir, "Output directory (overrides output_dir)");
  auto* threads_opt = run->add_option("--threads", threads, "Worker threads (default: FEDSDE_THREADS or all cores)");

  std::string validate_config;
  auto* validate = app.add_subcommand("validate", "Check a config and list every problem");
  validate->add_option("config", validate_config, "Experiment config (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : fedsde::cli::exit_invalid;
  }

  if (*run) {
    fedsde::cli::RunOptions options;
    if (*out_opt) options.out_dir = out_dir;
    if (*threads_opt) options.threads = threads;
    return fedsde::cli::run_command(run_config, options, std::cout, std::cerr);
  }
  return fedsde::cli::validate_command(validate_config, std::cout, std::cerr);
}
