#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "sensorgrad/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Policy-gradient experiments with sensor-augmented estimators"};
  app.require_subcommand(1);

  sensorgrad::CommandOptions options;
  std::string out_dir;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* config = sub->add_option("--config", options.config_path, "Configuration file");
    if (needs_config) {
      config->required()->check(CLI::ExistingFile);
    }
    sub->add_option("--out", out_dir, "Output directory (overrides SENSORGRAD_OUT and output.dir)");
    sub->add_option("--seed", seed, "Root seed (overrides the config's seed)");
    sub->add_option("--threads", options.threads, "Worker threads")->check(CLI::PositiveNumber);
  };
  add_common(app.add_subcommand("run", "Learning curves for each configured estimator"), true);
  add_common(app.add_subcommand("variance-check", "Monte Carlo check of the estimator variance laws"), true);
  add_common(app.add_subcommand("encode-search", "Search a sensor projection on one batch"), true);
  add_common(app.add_subcommand("schema-check", "Validate the output files of a directory"), false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? sensorgrad::kExitOk : sensorgrad::kExitConfig;
  }

  CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--out")) options.out_dir = out_dir;
  if (sub->count("--seed")) options.seed = seed;
  return sensorgrad::run_subcommand(sub->get_name(), options, std::cout, std::cerr);
}
