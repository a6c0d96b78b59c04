#include "distnewton/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  namespace cli = distnewton::cli;

  CLI::App app{"Distributed quasi-Newton training simulator"};
  app.require_subcommand(1);

  cli::Options options;
  std::string config_path;
  std::string output_dir;
  std::uint64_t seed = 0;
  std::vector<int> workers;
  int threads = 1;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Experiment config (key = value file)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", output_dir, "Output directory (default: $DISTNEWTON_OUT or ./out)");
    sub->add_option("--seed", seed, "Override harness.seed");
    sub->add_option("--threads", threads, "Worker threads per round")->check(CLI::PositiveNumber);
  };

  auto* run = app.add_subcommand("run", "Run one experiment and write its CSV history");
  add_common(run);
  auto* sweep = app.add_subcommand("sweep", "Run distnewton for each worker count plus the SGD baseline");
  add_common(sweep);
  sweep->add_option("--workers", workers, "Worker counts, e.g. 1,2,4,8")->delimiter(',');
  auto* grad_check = app.add_subcommand("grad-check", "Compare analytic gradients with finite differences");
  add_common(grad_check);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kExitOk : cli::kExitConfigError;
  }

  options.config_path = config_path;
  if (!output_dir.empty()) options.output_dir = output_dir;
  for (auto* sub : {run, sweep, grad_check}) {
    if (sub->count("--seed") > 0) options.seed = seed;
    if (sub->count("--threads") > 0) options.threads = threads;
  }
  if (!workers.empty()) options.workers = workers;

  if (*run) return cli::run(options, std::cout, std::cerr);
  if (*sweep) return cli::sweep(options, std::cout, std::cerr);
  return cli::grad_check(options, std::cout, std::cerr);
}
