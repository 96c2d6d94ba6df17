#include "pipealloc/workload.hpp"

#include <cmath>
#include <string>

#include "pipealloc/errors.hpp"

namespace pipealloc {

namespace {

void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidArgument(what);
}

void check_batch_share(int batch, double share) {
  require(batch >= 1, "batch must be >= 1, got " + std::to_string(batch));
  require(std::isfinite(share) && share > 0.0 && share <= 100.0,
          "share must be in (0, 100], got " + std::to_string(share));
}

}  // namespace

void GpuSpec::validate() const {
  require(compute_share_total == 100.0, name + ": compute_share_total must be 100");
  require(gflops > 0, name + ": gflops must be positive");
  require(mem_capacity_mb > 0, name + ": mem_capacity_mb must be positive");
  require(mem_bandwidth_mbps > 0, name + ": mem_bandwidth_mbps must be positive");
  require(pcie_effective_mbps > 0, name + ": pcie_effective_mbps must be positive");
  require(pcie_per_stream_mbps > 0, name + ": pcie_per_stream_mbps must be positive");
  require(pcie_per_stream_mbps <= pcie_effective_mbps,
          name + ": pcie_per_stream_mbps exceeds pcie_effective_mbps");
  require(instance_cap >= 1, name + ": instance_cap must be >= 1");
}

GpuSpec preset_2080ti() {
  GpuSpec g;
  g.name = "2080ti";
  g.gflops = 13450.0;
  g.mem_capacity_mb = 11264.0;
  g.mem_bandwidth_mbps = 616000.0;
  g.pcie_effective_mbps = 12160.0;
  g.pcie_per_stream_mbps = 3150.0;
  g.instance_cap = 48;
  return g;
}

GpuSpec preset_v100() {
  GpuSpec g;
  g.name = "v100";
  g.gflops = 15700.0;
  g.mem_capacity_mb = 32768.0;
  g.mem_bandwidth_mbps = 897000.0;
  g.pcie_effective_mbps = 12160.0;
  g.pcie_per_stream_mbps = 3150.0;
  g.instance_cap = 48;
  return g;
}

std::optional<GpuSpec> builtin_preset(std::string_view name) {
  if (name == "2080ti") return preset_2080ti();
  if (name == "v100") return preset_v100();
  return std::nullopt;
}

void MicroserviceSpec::validate() const {
  const std::string who = "stage " + std::to_string(stage_id) + " (" + name + ")";
  require(compute_gflop_per_item >= 0, who + ": compute coefficient is negative");
  require(mem_traffic_mb_per_item >= 0, who + ": memory traffic coefficient is negative");
  require(payload_out_mb >= 0, who + ": payload_out_mb is negative");
  require(model_footprint_mb >= 0, who + ": model_footprint_mb is negative");
  require(footprint_per_item_mb >= 0, who + ": footprint_per_item_mb is negative");
  require(scaling_exponent > 0 && scaling_exponent <= 1,
          who + ": scaling_exponent must be in (0, 1]");
  require(compute_gflop_per_item > 0 || mem_traffic_mb_per_item > 0,
          who + ": stage has neither compute nor memory work");
}

void PipelineSpec::validate() const {
  require(!stages.empty(), "pipeline " + name + " has no stages");
  require(qos_target_ms > 0, "pipeline " + name + ": qos_target_ms must be positive");
  require(batch_size >= 1, "pipeline " + name + ": batch_size must be >= 1");
  for (const auto& s : stages) s.validate();
}

void PipelineSpec::validate_against(const std::vector<GpuSpec>& gpus) const {
  validate();
  require(!gpus.empty(), "cluster has no GPUs");
  for (const auto& g : gpus) {
    g.validate();
    for (const auto& s : stages) {
      require(s.model_footprint_mb < g.mem_capacity_mb,
              "stage " + s.name + " is unschedulable: model footprint does not fit on " +
                  g.name);
    }
  }
}

PipelineSpec make_artifact_pipeline(int compute_level, int mem_level, int pcie_level,
                                    const ArtifactParams& p) {
  auto check_level = [](int level, const char* what) {
    require(level >= 1 && level <= 3,
            std::string(what) + " level must be in 1..3, got " + std::to_string(level));
  };
  check_level(compute_level, "compute");
  check_level(mem_level, "memory");
  check_level(pcie_level, "pcie");

  const double cf = p.level_factor[compute_level - 1];
  const double mf = p.level_factor[mem_level - 1];
  const double pf = p.level_factor[pcie_level - 1];

  PipelineSpec pipe;
  pipe.name = "p" + std::to_string(pcie_level) + "+c" + std::to_string(compute_level) +
              "+m" + std::to_string(mem_level);
  pipe.qos_target_ms = p.qos_target_ms;
  pipe.batch_size = p.batch_size;

  MicroserviceSpec pcie;
  pcie.stage_id = 0;
  pcie.name = "p" + std::to_string(pcie_level);
  pcie.compute_gflop_per_item = p.pcie_compute_gflop;
  pcie.mem_traffic_mb_per_item = p.pcie_mem_mb;
  pcie.payload_out_mb = p.pcie_payload_mb * pf;
  pcie.model_footprint_mb = p.pcie_model_mb;
  pcie.footprint_per_item_mb = p.pcie_item_mb;
  pcie.scaling_exponent = p.scaling_exponent;

  MicroserviceSpec compute;
  compute.stage_id = 1;
  compute.name = "c" + std::to_string(compute_level);
  compute.compute_gflop_per_item = p.compute_gflop * cf;
  compute.mem_traffic_mb_per_item = p.compute_mem_mb;
  compute.payload_out_mb = p.compute_payload_mb;
  compute.model_footprint_mb = p.compute_model_mb;
  compute.footprint_per_item_mb = p.compute_item_mb;
  compute.scaling_exponent = p.scaling_exponent;

  MicroserviceSpec memory;
  memory.stage_id = 2;
  memory.name = "m" + std::to_string(mem_level);
  memory.compute_gflop_per_item = p.memory_compute_gflop;
  memory.mem_traffic_mb_per_item = p.memory_mem_mb * mf;
  memory.payload_out_mb = p.memory_payload_mb;
  memory.model_footprint_mb = p.memory_model_mb;
  memory.footprint_per_item_mb = p.memory_item_mb;
  memory.scaling_exponent = p.scaling_exponent;

  pipe.stages = {pcie, compute, memory};
  pipe.validate();
  return pipe;
}

double oracle_duration_ms(const MicroserviceSpec& m, int batch, double share,
                          const GpuSpec& gpu) {
  check_batch_share(batch, share);
  const double items = static_cast<double>(batch);
  const double compute_s =
      m.compute_gflop_per_item * items / (gpu.gflops * std::pow(share / 100.0, m.scaling_exponent));
  const double memory_s = m.mem_traffic_mb_per_item * items / gpu.mem_bandwidth_mbps;
  return (compute_s + memory_s) * 1000.0;
}

double oracle_bandwidth_mbps(const MicroserviceSpec& m, int batch, double share,
                             const GpuSpec& gpu) {
  return m.mem_traffic_mb_per_item * batch / oracle_duration_ms(m, batch, share, gpu) * 1000.0;
}

double oracle_throughput_qps(const MicroserviceSpec& m, int batch, double share,
                             const GpuSpec& gpu) {
  return batch / oracle_duration_ms(m, batch, share, gpu) * 1000.0;
}

double oracle_flops_gflop(const MicroserviceSpec& m, int batch) {
  require(batch >= 0, "batch must be >= 0");
  return m.compute_gflop_per_item * batch;
}

double oracle_footprint_mb(const MicroserviceSpec& m, int batch) {
  require(batch >= 0, "batch must be >= 0");
  return m.model_footprint_mb + m.footprint_per_item_mb * batch;
}

}  // namespace pipealloc
