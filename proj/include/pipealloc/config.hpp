#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pipealloc/allocator.hpp"
#include "pipealloc/comm.hpp"
#include "pipealloc/simulator.hpp"
#include "pipealloc/workload.hpp"

namespace pipealloc {

struct ProfileSettings {
  std::vector<double> shares;  // empty: 10..100 step 10
  int batch_first = 1;
  int batch_last = 32;
};

struct SimulationSettings {
  double duration_s = 20;
  std::int64_t max_queries = 200000;
  ArrivalProcess arrival = ArrivalProcess::kPoisson;
  SimOptions options;
  double rate_fraction = 0.7;  // cmd_simulate offers this fraction of the predicted peak
};

struct Seeds {
  std::uint64_t profile = 1;
  std::uint64_t split = 1;
  std::uint64_t sa = 1;
  std::uint64_t trace = 1;
};

struct ExperimentConfig {
  std::string name = "experiment";
  GpuSpec gpu;
  int gpu_count = 1;
  PipelineSpec pipeline;
  std::vector<int> batch_sizes;    // sweep axis; defaults to {pipeline.batch_size}
  std::vector<double> load_levels;  // fractions of the max-load peak for min-resource runs
  SaParams sa;
  AllocatorOptions allocator;
  bool calibrate_comm = true;
  ProfileSettings profile;
  SimulationSettings simulation;
  Seeds seeds;
  std::filesystem::path output_dir = "out";
  std::uint64_t hash = 0;  // over the canonical form of the effective settings

  std::vector<GpuSpec> cluster() const { return std::vector<GpuSpec>(gpu_count, gpu); }
  void validate() const;
};

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hash_hex(std::uint64_t hash);

// Throws ConfigError; JSON syntax errors carry the line and column.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Overrides applied by the command line. Recomputes the hash.
void apply_overrides(ExperimentConfig& cfg, std::optional<std::uint64_t> seed, bool strict_paper,
                     std::optional<std::filesystem::path> out_dir);

nlohmann::json to_json(const GpuSpec& gpu);
nlohmann::json to_json(const PipelineSpec& pipeline);
nlohmann::json effective_json(const ExperimentConfig& cfg);

}  // namespace pipealloc
