#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mfb/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"mfb: multiphase free-boundary solver and diagnostics"};
  app.require_subcommand(1);
  auto* run = app.add_subcommand("run", "run the pipeline of a configuration file");
  std::string config;
  mfb::RunOptions opt;
  run->add_option("config", config, "configuration file")->required()->check(CLI::ExistingFile);
  run->add_option("--out", opt.out_dir, "artifact directory")->capture_default_str();
  run->add_option("--workers", opt.workers, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  run->add_option("--seed", opt.seed, "probe sampling seed")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  mfb::RunPlan plan;
  try {
    plan = mfb::make_plan(mfb::Config::load(config));
  } catch (const mfb::Error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  }
  try {
    const auto res = mfb::run_pipeline(std::move(plan), opt);
    res.summary.write(std::cout);
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << "\nartifacts in '" << opt.out_dir << "' are partial\n";
    return 1;
  }
  return 0;
}
