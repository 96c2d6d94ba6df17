#pragma once

#include <vector>

#include <json.hpp>

#include "pipealloc/allocator.hpp"
#include "pipealloc/comm.hpp"

namespace pipealloc {

struct PlacedInstance {
  int stage = 0;
  int replica = 0;
  int gpu = 0;
  double share = 0;
};

struct GpuResidual {
  double compute = 0;  // percent
  double memory_mb = 0;
  double bandwidth_mbps = 0;
  int instances = 0;  // placed so far
};

struct PlacementPlan {
  std::vector<PlacedInstance> instances;  // stage-major, replica order
  std::vector<GpuResidual> residual;      // one per GPU considered

  std::vector<int> gpus_of_stage(int stage) const;
  int gpus_used() const;
};

struct PlacementOptions {
  bool enforce_bandwidth = true;
};

// What one instance of a stage costs on a GPU. Weights are charged once per
// GPU per stage; the working set once per instance.
struct InstanceDemand {
  double compute = 0;
  double weights_mb = 0;
  double working_mb = 0;
  double bandwidth_mbps = 0;
};
InstanceDemand instance_demand(const PerfModel& model, int batch, double share);

// Stages in pipeline order; before each stage the GPUs are sorted ascending by
// residual memory, then compute, bandwidth and index. The whole stage goes to
// the first GPU that holds all its instances, otherwise instances are
// spread greedily in sorted order. If that strands an instance, one more pass
// visits stages by decreasing share. Throws PlacementError naming the binding
// dimension (from the first pass) when both fail.
PlacementPlan place(const Allocation& allocation, const PipelineSpec& pipeline,
                    const std::vector<GpuSpec>& gpus, const std::vector<PerfModel>& models,
                    int batch, const PlacementOptions& options = {});
PlacementPlan place(const Allocation& allocation, const AllocationProblem& problem);

// Re-derives residuals from the mapping and throws PlacementError if any
// invariant (non-negative residuals, per-GPU instance cap) fails.
void verify_plan(const PlacementPlan& plan, const Allocation& allocation,
                 const PipelineSpec& pipeline, const std::vector<GpuSpec>& gpus,
                 const std::vector<PerfModel>& models, int batch,
                 const PlacementOptions& options = {});

struct InstancePairPath {
  int producer = 0;  // index into plan.instances
  int consumer = 0;
  CommPath path = CommPath::kMainMemory;
};

struct StagePairPaths {
  int producer_stage = 0;  // hop producer_stage -> producer_stage + 1
  std::vector<InstancePairPath> pairs;
  bool has_global = false;
  bool has_main = false;
};

std::vector<StagePairPaths> effective_comm_paths(const PlacementPlan& plan,
                                                 const PipelineSpec& pipeline);

nlohmann::json to_json(const PlacementPlan& plan, const PipelineSpec& pipeline);

}  // namespace pipealloc
