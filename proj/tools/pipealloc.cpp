// Command-line driver: pipealloc <command> --config FILE [options]

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pipealloc/cli.hpp"
#include "pipealloc/errors.hpp"

int main(int argc, char** argv) {
  CLI::App app{"GPU microservice pipeline allocation experiments"};
  app.require_subcommand(1, 1);
  app.fallthrough();  // global options may follow the subcommand

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  bool strict_paper = false;
  std::string mode = "max-load";

  app.add_option("--config", config_path, "experiment configuration (JSON)")->required()->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "overrides every seed in the configuration");
  app.add_option("--out", out_dir, "output directory (default: the config's output_dir)");
  app.add_flag("--strict-paper", strict_paper, "leave inter-stage communication out of the QoS constraint");

  auto* profile = app.add_subcommand("profile", "sample the performance oracle on the profiling grid");
  auto* train = app.add_subcommand("train", "fit per-stage models from profile/samples.csv");
  auto* allocate = app.add_subcommand("allocate", "solve for instance counts and shares");
  auto* place = app.add_subcommand("place", "map allocated instances onto GPUs");
  auto* simulate = app.add_subcommand("simulate", "replay a Poisson trace against placed plans");
  auto* sweep = app.add_subcommand("sweep", "peak load per batch size for the even and annealed allocations");
  for (auto* sub : {allocate, place, simulate}) {
    sub->add_option("--mode", mode, "max-load or min-resource")
        ->check(CLI::IsMember({"max-load", "min-resource"}))
        ->capture_default_str();
  }

  CLI11_PARSE(app, argc, argv);

  try {
    pipealloc::ExperimentConfig cfg = pipealloc::load_config(config_path);
    pipealloc::apply_overrides(cfg, seed, strict_paper,
                               out_dir ? std::optional<std::filesystem::path>(*out_dir) : std::nullopt);
    const pipealloc::AllocMode m = pipealloc::parse_mode(mode);

    pipealloc::Written written;
    if (profile->parsed()) written = pipealloc::cmd_profile(cfg);
    if (train->parsed()) written = pipealloc::cmd_train(cfg);
    if (allocate->parsed()) written = pipealloc::cmd_allocate(cfg, m);
    if (place->parsed()) written = pipealloc::cmd_place(cfg, m);
    if (simulate->parsed()) written = pipealloc::cmd_simulate(cfg, m);
    if (sweep->parsed()) written = pipealloc::cmd_sweep(cfg);
    for (const auto& path : written) std::cout << path.string() << "\n";
  } catch (const pipealloc::InfeasibleError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
