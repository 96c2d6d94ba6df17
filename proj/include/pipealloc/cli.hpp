#pragma once

#include <filesystem>
#include <string_view>
#include <vector>

#include "pipealloc/config.hpp"

// Experiment commands. Each reads the artifacts of the previous step from
// the output directory, writes its own, and returns the files it wrote.
//
//   profile/samples.csv            profile
//   models/models.json, report.json train
//   alloc/<plan>.json              allocate
//   place/<plan>.json              place
//   sim/max-load.csv, min-resource.csv simulate
//   sim/sweep.csv, load_levels.csv sweep
//
// <plan> is "max-load" or "min-resource-<level>".

namespace pipealloc {

enum class AllocMode { kMaxLoad, kMinResource };

// Throws ConfigError on anything but "max-load" or "min-resource".
AllocMode parse_mode(std::string_view text);

using Written = std::vector<std::filesystem::path>;

Written cmd_profile(const ExperimentConfig& cfg);
Written cmd_train(const ExperimentConfig& cfg);
Written cmd_allocate(const ExperimentConfig& cfg, AllocMode mode);
Written cmd_place(const ExperimentConfig& cfg, AllocMode mode);
Written cmd_simulate(const ExperimentConfig& cfg, AllocMode mode);
Written cmd_sweep(const ExperimentConfig& cfg);

}  // namespace pipealloc
