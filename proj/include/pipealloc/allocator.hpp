#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pipealloc/comm.hpp"
#include "pipealloc/predictor.hpp"
#include "pipealloc/workload.hpp"

namespace pipealloc {

enum class Constraint {
  kCompute,          // sum N_i * p_i <= C * 100, 0 < p_i <= 100
  kInstanceCap,      // sum N_i <= C * I, 1 <= N_i <= I
  kBandwidth,        // sum N_i * b(p_i) <= sum BW
  kMemory,           // sum N_i * M(i, s) <= sum F
  kQos,              // sum d(p_i) + hop times <= QoS
  kThroughputFloor,  // min N_i * f(p_i) >= required load (min-resource only)
  kPacking,          // the placement heuristic finds a per-GPU mapping (multi-GPU only)
};

const char* to_string(Constraint c);

struct ConstraintCheck {
  Constraint kind;
  double used = 0;
  double limit = 0;
  bool ok = true;
  double slack() const { return limit - used; }
};

struct FeasibilityReport {
  bool feasible = true;
  std::vector<ConstraintCheck> checks;    // every constraint, in check order
  std::vector<Constraint> violations;     // all violated constraints
  bool violates(Constraint c) const;
};

struct SolverTrace {
  int restarts = 0;
  int iterations_per_restart = 0;
  int feasible_restarts = 0;
  int best_restart = -1;
  std::uint64_t evaluations = 0;
  std::vector<double> best_so_far;  // global best after each restart that had one
};

struct Allocation {
  std::vector<int> instances;  // N_i
  std::vector<double> shares;  // p_i, percent, shared by every instance of stage i
  int gpu_count = 0;
  double objective = 0;
  SolverTrace trace;

  double resource_usage() const;  // sum N_i * p_i
  int total_instances() const;
};

struct SaParams {
  int iterations = 2000;
  double initial_temperature = 0.05;  // relative objective change accepted with p = 1/e
  double cooling_rate = 0.97;         // applied every kItersPerCooling iterations
  double share_step = 10;             // max share move, percent
  int instance_step = 1;
  std::uint64_t seed = 1;
  int restarts = 200;
  double share_grid = 1;  // percent

  static constexpr int kItersPerCooling = 20;
  void validate() const;
};

struct AllocatorOptions {
  bool enforce_bandwidth = true;  // false reproduces the no-constraint ablation
  bool comm_in_qos = true;        // false: QoS row sums stage durations only
  CommConfig comm;
  // The min-resource throughput floor is offered_load / target_utilization.
  double target_utilization = 0.7;
  // Reject allocations the placement heuristic cannot pack onto the GPUs.
  bool check_packing = true;
};

// Pipeline, cluster, trained models and batch size, with the per-stage
// planning estimates precomputed on the 1% share grid.
class AllocationProblem {
 public:
  AllocationProblem(PipelineSpec pipeline, std::vector<GpuSpec> gpus,
                    std::vector<PerfModel> models, int batch, AllocatorOptions options = {});

  const PipelineSpec& pipeline() const { return pipeline_; }
  const std::vector<GpuSpec>& gpus() const { return gpus_; }
  const std::vector<PerfModel>& models() const { return models_; }
  const AllocatorOptions& options() const { return options_; }
  int batch() const { return batch_; }
  int stage_count() const { return static_cast<int>(pipeline_.stages.size()); }
  double min_share() const { return min_share_; }

  StageEstimate estimate(int stage, double share) const;
  double footprint_mb(int stage) const { return footprint_[stage]; }  // M(i, s)
  // Hop time budgeted into the QoS row for `gpu_count` GPUs: the handle path
  // when everything shares one GPU, one uncontended PCIe copy otherwise.
  double comm_estimate_ms(int gpu_count) const;

  AllocationProblem with_options(AllocatorOptions options) const;

 private:
  PipelineSpec pipeline_;
  std::vector<GpuSpec> gpus_;
  std::vector<PerfModel> models_;
  int batch_;
  AllocatorOptions options_;
  double min_share_ = 1;
  std::vector<double> footprint_;
  std::vector<std::vector<StageEstimate>> table_;  // [stage][integer share]
};

// Predicted bottleneck throughput min_i N_i * f(p_i).
double predicted_throughput(const Allocation& a, const AllocationProblem& problem);

FeasibilityReport feasible(const Allocation& a, const AllocationProblem& problem,
                           std::optional<double> throughput_floor = std::nullopt);

// Maximise min_i N_i * f(p_i) on `gpus().size()` GPUs. Throws InfeasibleError.
Allocation solve_max_load(const AllocationProblem& problem, const SaParams& sa);

// y = max(ceil(sum C(i,s) / (G * QoS seconds)), ceil(sum M(i,s) / F)), >= 1.
int min_gpu_count(const PipelineSpec& pipeline, const std::vector<PerfModel>& models, int batch,
                  const GpuSpec& gpu);

// Fix the GPU count at min_gpu_count (one retry at +1), then minimise
// sum N_i * p_i while keeping min_i N_i * f(p_i) >= offered / target_utilization.
Allocation solve_min_resource(const AllocationProblem& problem, double offered_load_qps,
                              const SaParams& sa);

// Exhaustive max-load search over shares {step, 2*step, ..., 100} and
// 1 <= N_i <= max_instances. Refuses spaces above 1e7 points.
Allocation brute_force_max_load(const AllocationProblem& problem, double share_step,
                                int max_instances);

// One instance per stage, each with an equal slice of all GPUs (capped at 100%).
Allocation even_allocation_baseline(const PipelineSpec& pipeline, const std::vector<GpuSpec>& gpus);
// Same, with the objective filled in from the problem's predictions.
Allocation even_allocation_baseline(const AllocationProblem& problem);

nlohmann::json to_json(const Allocation& a, const AllocationProblem& problem,
                       std::optional<double> throughput_floor = std::nullopt);

}  // namespace pipealloc
