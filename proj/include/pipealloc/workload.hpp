#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

// GPUs, microservice stages and pipelines, plus the closed-form performance
// oracle that stands in for solo-run profiling on real hardware.
//
// Units are fixed across the library: MB, MB/s, milliseconds, GFLOP(s).
// 1 MB = 1e6 bytes.

namespace pipealloc {

struct GpuSpec {
  std::string name;
  double compute_share_total = 100.0;  // percent; always 100
  double gflops = 0;                   // GFLOP/s
  double mem_capacity_mb = 0;
  double mem_bandwidth_mbps = 0;
  double pcie_effective_mbps = 0;
  double pcie_per_stream_mbps = 0;
  int instance_cap = 0;  // MPS client limit per device

  // Throws InvalidArgument on non-positive capacities or a per-stream PCIe
  // rate above the effective bus rate.
  void validate() const;
};

// Turing-class card: 616 GB/s global memory, 11 GB.
GpuSpec preset_2080ti();
// Volta-class card: 897 GB/s global memory, 32 GB.
GpuSpec preset_v100();
std::optional<GpuSpec> builtin_preset(std::string_view name);

struct MicroserviceSpec {
  int stage_id = 0;
  std::string name;
  double compute_gflop_per_item = 0;
  double mem_traffic_mb_per_item = 0;
  double payload_out_mb = 0;  // per query, handed to the next stage
  double model_footprint_mb = 0;
  double footprint_per_item_mb = 0;
  double scaling_exponent = 0.8;  // in (0, 1]
  bool pinned_output = false;     // main-memory copies use the whole bus

  void validate() const;
};

struct PipelineSpec {
  std::string name;
  std::vector<MicroserviceSpec> stages;
  double qos_target_ms = 0;
  int batch_size = 1;

  void validate() const;
  // Every stage's resident weights must fit on every GPU of the cluster.
  void validate_against(const std::vector<GpuSpec>& gpus) const;
};

// Base coefficients of the synthetic compute-, memory- and PCIe-intensive
// stages. A level L in {1,2,3} multiplies the stage's characteristic
// coefficient by `level_factor[L-1]`.
struct ArtifactParams {
  double level_factor[3] = {1.0, 2.0, 3.0};

  // PCIe-intensive stage: light kernels, large output payload.
  double pcie_compute_gflop = 0.4;
  double pcie_mem_mb = 15.0;
  double pcie_payload_mb = 0.5;
  double pcie_model_mb = 400.0;
  double pcie_item_mb = 12.0;

  // Compute-intensive stage.
  double compute_gflop = 4.0;
  double compute_mem_mb = 25.0;
  double compute_payload_mb = 0.05;
  double compute_model_mb = 1200.0;
  double compute_item_mb = 20.0;

  // Memory-intensive stage.
  double memory_compute_gflop = 0.5;
  double memory_mem_mb = 60.0;
  double memory_payload_mb = 0.01;
  double memory_model_mb = 800.0;
  double memory_item_mb = 30.0;

  double scaling_exponent = 0.8;
  double qos_target_ms = 100.0;
  int batch_size = 16;
};

// Three-stage pipeline: PCIe-, compute-, then memory-intensive stage.
// Throws InvalidArgument when a level is outside 1..3.
PipelineSpec make_artifact_pipeline(int compute_level, int mem_level,
                                    int pcie_level,
                                    const ArtifactParams& params = {});

// duration = compute*batch / (gflops * (share/100)^exponent)
//          + mem_traffic*batch / mem_bandwidth        (seconds, returned in ms)
double oracle_duration_ms(const MicroserviceSpec& m, int batch, double share,
                          const GpuSpec& gpu);
double oracle_bandwidth_mbps(const MicroserviceSpec& m, int batch, double share,
                             const GpuSpec& gpu);
double oracle_throughput_qps(const MicroserviceSpec& m, int batch, double share,
                             const GpuSpec& gpu);
double oracle_flops_gflop(const MicroserviceSpec& m, int batch);
// Resident weights plus the per-item working set; batch 0 is allowed.
double oracle_footprint_mb(const MicroserviceSpec& m, int batch);

}  // namespace pipealloc
