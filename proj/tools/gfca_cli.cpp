#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gfca/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Few-shot cross-domain adaptation with generative feature augmentation"};
  app.require_subcommand(1);

  std::string config;
  std::vector<std::string> sets;
  auto* train = app.add_subcommand("train", "train and evaluate one experiment");
  train->add_option("-c,--config", config, "experiment config (JSON)")->required();
  train->add_option("--set", sets, "override, key=value (repeatable)");

  auto* synth = app.add_subcommand("synth", "write a synthetic source/target pair");
  synth->add_option("-c,--config", config, "config with a \"synthetic\" object")->required();
  synth->add_option("--set", sets, "override, key=value (repeatable)");

  gfca::GradcheckOptions gc;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every loss gradient");
  grad->add_option("--scope", gc.scope, "all, feature-gan, adapt-net, mkmmd, or one loss name")->capture_default_str();
  grad->add_option("--seed", gc.seed, "first instance seed")->capture_default_str();
  grad->add_option("--seeds", gc.seeds, "instances per loss")->capture_default_str();
  bool fault = gc.inject_fault;
  grad->add_flag("--inject-fault", fault, "corrupt one analytic gradient entry (the check must fail)");

  std::vector<std::string> runs;
  std::string format = "md";
  std::string output;
  auto* report = app.add_subcommand("report", "aggregate metrics reports into a mode x task table");
  report->add_option("runs", runs, "run directories or metrics.json files")->required();
  report->add_option("--format", format, "md or csv")->capture_default_str();
  report->add_option("-o,--output", output, "write the table here instead of stdout");

  std::string run_dir;
  auto* embed = app.add_subcommand("export-embeddings", "write encoder embeddings of a finished run as CSV");
  embed->add_option("run", run_dir, "run directory")->required();
  embed->add_option("-o,--output", output, "CSV path (default <run>/embeddings.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : gfca::kExitConfig;
  }

  const auto out_path = output.empty() ? std::nullopt : std::optional<std::filesystem::path>(output);
  if (*train) return gfca::cmd_train(config, sets, gfca::current_environment(), std::cout, std::cerr);
  if (*synth) return gfca::cmd_synth(config, sets, gfca::current_environment(), std::cout, std::cerr);
  if (*grad) {
    gc.inject_fault = fault;
    return gfca::cmd_gradcheck(gc, std::cout, std::cerr);
  }
  if (*report) {
    std::vector<std::filesystem::path> paths(runs.begin(), runs.end());
    return gfca::cmd_report(paths, format, out_path, std::cout, std::cerr);
  }
  return gfca::cmd_export_embeddings(run_dir, out_path, std::cout, std::cerr);
}
