#include "pipealloc/config.hpp"

#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include "pipealloc/errors.hpp"

namespace pipealloc {

using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw ConfigError(where + ": unknown key \"" + key + "\"");
  }
}

template <class T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

GpuSpec parse_gpu(const json& j, const std::string& where, GpuSpec gpu) {
  check_keys(j, where, {"name", "gflops", "mem_capacity_mb", "mem_bandwidth_mbps", "pcie_effective_mbps",
                        "pcie_per_stream_mbps", "instance_cap"});
  read(j, "name", gpu.name, where);
  read(j, "gflops", gpu.gflops, where);
  read(j, "mem_capacity_mb", gpu.mem_capacity_mb, where);
  read(j, "mem_bandwidth_mbps", gpu.mem_bandwidth_mbps, where);
  read(j, "pcie_effective_mbps", gpu.pcie_effective_mbps, where);
  read(j, "pcie_per_stream_mbps", gpu.pcie_per_stream_mbps, where);
  read(j, "instance_cap", gpu.instance_cap, where);
  return gpu;
}

MicroserviceSpec parse_stage(const json& j, const std::string& where) {
  check_keys(j, where, {"name", "compute_gflop_per_item", "mem_traffic_mb_per_item", "payload_out_mb",
                        "model_footprint_mb", "footprint_per_item_mb", "scaling_exponent", "pinned_output"});
  MicroserviceSpec m;
  read(j, "name", m.name, where);
  read(j, "compute_gflop_per_item", m.compute_gflop_per_item, where);
  read(j, "mem_traffic_mb_per_item", m.mem_traffic_mb_per_item, where);
  read(j, "payload_out_mb", m.payload_out_mb, where);
  read(j, "model_footprint_mb", m.model_footprint_mb, where);
  read(j, "footprint_per_item_mb", m.footprint_per_item_mb, where);
  read(j, "scaling_exponent", m.scaling_exponent, where);
  read(j, "pinned_output", m.pinned_output, where);
  return m;
}

ArtifactParams parse_artifact_params(const json& j, const std::string& where) {
  check_keys(j, where, {"level_factor", "pcie_compute_gflop", "pcie_mem_mb", "pcie_payload_mb", "pcie_model_mb",
                        "pcie_item_mb", "compute_gflop", "compute_mem_mb", "compute_payload_mb",
                        "compute_model_mb", "compute_item_mb", "memory_compute_gflop", "memory_mem_mb",
                        "memory_payload_mb", "memory_model_mb", "memory_item_mb", "scaling_exponent",
                        "qos_target_ms", "batch_size"});
  ArtifactParams p;
  if (j.contains("level_factor")) {
    std::vector<double> f;
    read(j, "level_factor", f, where);
    if (f.size() != 3) throw ConfigError(where + ".level_factor: expected three values");
    for (int i = 0; i < 3; ++i) p.level_factor[i] = f[i];
  }
  read(j, "pcie_compute_gflop", p.pcie_compute_gflop, where);
  read(j, "pcie_mem_mb", p.pcie_mem_mb, where);
  read(j, "pcie_payload_mb", p.pcie_payload_mb, where);
  read(j, "pcie_model_mb", p.pcie_model_mb, where);
  read(j, "pcie_item_mb", p.pcie_item_mb, where);
  read(j, "compute_gflop", p.compute_gflop, where);
  read(j, "compute_mem_mb", p.compute_mem_mb, where);
  read(j, "compute_payload_mb", p.compute_payload_mb, where);
  read(j, "compute_model_mb", p.compute_model_mb, where);
  read(j, "compute_item_mb", p.compute_item_mb, where);
  read(j, "memory_compute_gflop", p.memory_compute_gflop, where);
  read(j, "memory_mem_mb", p.memory_mem_mb, where);
  read(j, "memory_payload_mb", p.memory_payload_mb, where);
  read(j, "memory_model_mb", p.memory_model_mb, where);
  read(j, "memory_item_mb", p.memory_item_mb, where);
  read(j, "scaling_exponent", p.scaling_exponent, where);
  read(j, "qos_target_ms", p.qos_target_ms, where);
  read(j, "batch_size", p.batch_size, where);
  return p;
}

PipelineSpec parse_artifact(const json& j) {
  check_keys(j, "artifact", {"compute", "memory", "pcie", "params"});
  int c = 1, m = 1, p = 1;
  read(j, "compute", c, "artifact");
  read(j, "memory", m, "artifact");
  read(j, "pcie", p, "artifact");
  const ArtifactParams params = j.contains("params") ? parse_artifact_params(j["params"], "artifact.params")
                                                     : ArtifactParams{};
  try {
    return make_artifact_pipeline(c, m, p, params);
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("artifact: ") + e.what());
  }
}

PipelineSpec parse_pipeline(const json& j) {
  check_keys(j, "pipeline", {"name", "stages", "qos_target_ms", "batch_size"});
  PipelineSpec p;
  read(j, "name", p.name, "pipeline");
  read(j, "qos_target_ms", p.qos_target_ms, "pipeline");
  read(j, "batch_size", p.batch_size, "pipeline");
  if (!j.contains("stages") || !j["stages"].is_array()) throw ConfigError("pipeline.stages: expected an array");
  for (std::size_t i = 0; i < j["stages"].size(); ++i) {
    MicroserviceSpec m = parse_stage(j["stages"][i], "pipeline.stages[" + std::to_string(i) + "]");
    m.stage_id = static_cast<int>(i);
    p.stages.push_back(std::move(m));
  }
  return p;
}

void parse_sa(const json& j, SaParams& sa) {
  check_keys(j, "sa", {"iterations", "initial_temperature", "cooling_rate", "share_step", "instance_step",
                       "restarts", "share_grid"});
  read(j, "iterations", sa.iterations, "sa");
  read(j, "initial_temperature", sa.initial_temperature, "sa");
  read(j, "cooling_rate", sa.cooling_rate, "sa");
  read(j, "share_step", sa.share_step, "sa");
  read(j, "instance_step", sa.instance_step, "sa");
  read(j, "restarts", sa.restarts, "sa");
  read(j, "share_grid", sa.share_grid, "sa");
}

void parse_comm(const json& j, CommConfig& c) {
  check_keys(j, "comm", {"handle_bytes", "ipc_fixed_overhead_ms", "host_copy_fixed_overhead_ms",
                         "crossover_target_mb"});
  read(j, "handle_bytes", c.handle_bytes, "comm");
  read(j, "ipc_fixed_overhead_ms", c.ipc_fixed_overhead_ms, "comm");
  read(j, "host_copy_fixed_overhead_ms", c.host_copy_fixed_overhead_ms, "comm");
  read(j, "crossover_target_mb", c.crossover_target_mb, "comm");
}

void parse_simulation(const json& j, SimulationSettings& s) {
  check_keys(j, "simulation", {"duration_s", "max_queries", "arrival", "warmup_fraction", "flush_guard_fraction",
                               "contention", "global_memory_comm", "drain_s", "rate_fraction"});
  read(j, "duration_s", s.duration_s, "simulation");
  read(j, "max_queries", s.max_queries, "simulation");
  read(j, "warmup_fraction", s.options.warmup_fraction, "simulation");
  read(j, "flush_guard_fraction", s.options.flush_guard_fraction, "simulation");
  read(j, "global_memory_comm", s.options.global_memory_comm, "simulation");
  read(j, "drain_s", s.options.drain_s, "simulation");
  read(j, "rate_fraction", s.rate_fraction, "simulation");
  std::string arrival = "poisson", contention = "active";
  read(j, "arrival", arrival, "simulation");
  read(j, "contention", contention, "simulation");
  if (arrival == "poisson") {
    s.arrival = ArrivalProcess::kPoisson;
  } else if (arrival == "fixed") {
    s.arrival = ArrivalProcess::kFixedInterval;
  } else {
    throw ConfigError("simulation.arrival: expected \"poisson\" or \"fixed\"");
  }
  if (contention == "active") {
    s.options.contention = ContentionPolicy::kActiveDemand;
  } else if (contention == "resident") {
    s.options.contention = ContentionPolicy::kResidentDemand;
  } else {
    throw ConfigError("simulation.contention: expected \"active\" or \"resident\"");
  }
}

void finalize(ExperimentConfig& cfg) {
  if (cfg.calibrate_comm) {
    try {
      cfg.allocator.comm = calibrate_overheads(cfg.allocator.comm, cfg.gpu);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("comm: ") + e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  cfg.hash = fnv1a64(effective_json(cfg).dump());
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hash_hex(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

void ExperimentConfig::validate() const {
  gpu.validate();
  if (gpu_count < 1) throw InvalidArgument("gpu_count must be at least 1");
  pipeline.validate();
  pipeline.validate_against(cluster());
  for (int b : batch_sizes) {
    if (b < 1) throw InvalidArgument("batch sizes must be positive");
  }
  for (double l : load_levels) {
    if (!(l > 0 && l <= 1)) throw InvalidArgument("load levels must be in (0, 1]");
  }
  sa.validate();
  if (profile.batch_first < 1 || profile.batch_last < profile.batch_first) {
    throw InvalidArgument("profile batch range is empty");
  }
  for (int b : batch_sizes) {
    if (b > profile.batch_last) throw InvalidArgument("batch size beyond the profiled range");
  }
  if (!(allocator.target_utilization > 0 && allocator.target_utilization <= 1)) {
    throw InvalidArgument("target_utilization must be in (0, 1]");
  }
  if (!(simulation.duration_s > 0) || simulation.max_queries < 1) {
    throw InvalidArgument("simulation horizon must be positive");
  }
  if (!(simulation.rate_fraction > 0)) throw InvalidArgument("rate_fraction must be positive");
}

ExperimentConfig parse_config(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  check_keys(root, "config", {"name", "gpu", "gpu_presets", "gpu_count", "pipeline", "artifact", "qos_target_ms",
                              "batch_sizes", "load_levels", "sa", "allocator", "comm", "calibrate_comm",
                              "profile", "simulation", "seed", "seeds", "output_dir"});
  ExperimentConfig cfg;
  read(root, "name", cfg.name, "config");

  const json gpu = root.value("gpu", json("2080ti"));
  if (gpu.is_string()) {
    const std::string name = gpu.get<std::string>();
    std::optional<GpuSpec> spec = builtin_preset(name);
    if (root.contains("gpu_presets")) {
      const json& presets = root["gpu_presets"];
      if (!presets.is_object()) throw ConfigError("gpu_presets: expected an object");
      if (presets.contains(name)) {
        GpuSpec base;
        base.name = name;
        spec = parse_gpu(presets[name], "gpu_presets." + name, base);
      }
    }
    if (!spec) throw ConfigError("gpu: unknown preset \"" + name + "\"");
    cfg.gpu = *spec;
  } else {
    cfg.gpu = parse_gpu(gpu, "gpu", preset_2080ti());
  }
  read(root, "gpu_count", cfg.gpu_count, "config");

  if (root.contains("pipeline") == root.contains("artifact")) {
    throw ConfigError("config: give exactly one of \"pipeline\" or \"artifact\"");
  }
  cfg.pipeline = root.contains("pipeline") ? parse_pipeline(root["pipeline"]) : parse_artifact(root["artifact"]);
  read(root, "qos_target_ms", cfg.pipeline.qos_target_ms, "config");
  read(root, "batch_sizes", cfg.batch_sizes, "config");
  if (cfg.batch_sizes.empty()) cfg.batch_sizes = {cfg.pipeline.batch_size};
  read(root, "load_levels", cfg.load_levels, "config");

  if (root.contains("sa")) parse_sa(root["sa"], cfg.sa);
  if (root.contains("allocator")) {
    const json& a = root["allocator"];
    check_keys(a, "allocator", {"enforce_bandwidth", "comm_in_qos", "target_utilization"});
    read(a, "enforce_bandwidth", cfg.allocator.enforce_bandwidth, "allocator");
    read(a, "comm_in_qos", cfg.allocator.comm_in_qos, "allocator");
    read(a, "target_utilization", cfg.allocator.target_utilization, "allocator");
  }
  if (root.contains("comm")) parse_comm(root["comm"], cfg.allocator.comm);
  read(root, "calibrate_comm", cfg.calibrate_comm, "config");
  if (root.contains("profile")) {
    const json& p = root["profile"];
    check_keys(p, "profile", {"shares", "batch_first", "batch_last"});
    read(p, "shares", cfg.profile.shares, "profile");
    read(p, "batch_first", cfg.profile.batch_first, "profile");
    read(p, "batch_last", cfg.profile.batch_last, "profile");
  }
  if (root.contains("simulation")) parse_simulation(root["simulation"], cfg.simulation);

  if (root.contains("seed")) {
    std::uint64_t s = 0;
    read(root, "seed", s, "config");
    cfg.seeds = {s, s, s, s};
  }
  if (root.contains("seeds")) {
    const json& s = root["seeds"];
    check_keys(s, "seeds", {"profile", "split", "sa", "trace"});
    read(s, "profile", cfg.seeds.profile, "seeds");
    read(s, "split", cfg.seeds.split, "seeds");
    read(s, "sa", cfg.seeds.sa, "seeds");
    read(s, "trace", cfg.seeds.trace, "seeds");
  }
  cfg.sa.seed = cfg.seeds.sa;
  std::string out = "out";
  read(root, "output_dir", out, "config");
  cfg.output_dir = out;

  finalize(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

void apply_overrides(ExperimentConfig& cfg, std::optional<std::uint64_t> seed, bool strict_paper,
                     std::optional<std::filesystem::path> out_dir) {
  if (seed) {
    cfg.seeds = {*seed, *seed, *seed, *seed};
    cfg.sa.seed = *seed;
  }
  if (strict_paper) cfg.allocator.comm_in_qos = false;
  if (out_dir) cfg.output_dir = *out_dir;
  cfg.hash = fnv1a64(effective_json(cfg).dump());
}

json to_json(const GpuSpec& g) {
  return {{"name", g.name},
          {"gflops", g.gflops},
          {"mem_capacity_mb", g.mem_capacity_mb},
          {"mem_bandwidth_mbps", g.mem_bandwidth_mbps},
          {"pcie_effective_mbps", g.pcie_effective_mbps},
          {"pcie_per_stream_mbps", g.pcie_per_stream_mbps},
          {"instance_cap", g.instance_cap}};
}

json to_json(const PipelineSpec& p) {
  json stages = json::array();
  for (const auto& m : p.stages) {
    stages.push_back({{"name", m.name},
                      {"compute_gflop_per_item", m.compute_gflop_per_item},
                      {"mem_traffic_mb_per_item", m.mem_traffic_mb_per_item},
                      {"payload_out_mb", m.payload_out_mb},
                      {"model_footprint_mb", m.model_footprint_mb},
                      {"footprint_per_item_mb", m.footprint_per_item_mb},
                      {"scaling_exponent", m.scaling_exponent},
                      {"pinned_output", m.pinned_output}});
  }
  return {{"name", p.name}, {"qos_target_ms", p.qos_target_ms}, {"batch_size", p.batch_size}, {"stages", stages}};
}

// The output directory is left out: moving an experiment must not change its hash.
json effective_json(const ExperimentConfig& c) {
  const auto& s = c.simulation;
  return {{"name", c.name},
          {"gpu", to_json(c.gpu)},
          {"gpu_count", c.gpu_count},
          {"pipeline", to_json(c.pipeline)},
          {"batch_sizes", c.batch_sizes},
          {"load_levels", c.load_levels},
          {"sa",
           {{"iterations", c.sa.iterations},
            {"initial_temperature", c.sa.initial_temperature},
            {"cooling_rate", c.sa.cooling_rate},
            {"share_step", c.sa.share_step},
            {"instance_step", c.sa.instance_step},
            {"restarts", c.sa.restarts},
            {"share_grid", c.sa.share_grid}}},
          {"allocator",
           {{"enforce_bandwidth", c.allocator.enforce_bandwidth},
            {"comm_in_qos", c.allocator.comm_in_qos},
            {"target_utilization", c.allocator.target_utilization}}},
          {"comm",
           {{"handle_bytes", c.allocator.comm.handle_bytes},
            {"ipc_fixed_overhead_ms", c.allocator.comm.ipc_fixed_overhead_ms},
            {"host_copy_fixed_overhead_ms", c.allocator.comm.host_copy_fixed_overhead_ms},
            {"crossover_target_mb", c.allocator.comm.crossover_target_mb}}},
          {"calibrate_comm", c.calibrate_comm},
          {"profile",
           {{"shares", c.profile.shares}, {"batch_first", c.profile.batch_first}, {"batch_last", c.profile.batch_last}}},
          {"simulation",
           {{"duration_s", s.duration_s},
            {"max_queries", s.max_queries},
            {"arrival", s.arrival == ArrivalProcess::kPoisson ? "poisson" : "fixed"},
            {"warmup_fraction", s.options.warmup_fraction},
            {"flush_guard_fraction", s.options.flush_guard_fraction},
            {"contention", s.options.contention == ContentionPolicy::kActiveDemand ? "active" : "resident"},
            {"global_memory_comm", s.options.global_memory_comm},
            {"drain_s", s.options.drain_s},
            {"rate_fraction", s.rate_fraction}}},
          {"seeds",
           {{"profile", c.seeds.profile}, {"split", c.seeds.split}, {"sa", c.seeds.sa}, {"trace", c.seeds.trace}}}};
}

}  // namespace pipealloc
