#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pipealloc/allocator.hpp"
#include "pipealloc/comm.hpp"
#include "pipealloc/placement.hpp"

namespace pipealloc {

enum class ArrivalProcess { kPoisson, kFixedInterval };

struct WorkloadTrace {
  ArrivalProcess process = ArrivalProcess::kPoisson;
  double rate_qps = 1;
  double duration_s = 60;
  std::uint64_t seed = 1;
  std::int64_t max_queries = 200000;

  void validate() const;
};

// How a GPU's bandwidth demand is summed when a batch starts.
enum class ContentionPolicy {
  kActiveDemand,    // instances currently executing a batch
  kResidentDemand,  // every instance placed on the GPU, busy or not
};

// max(1, sum(demands) / bandwidth).
double contention_multiplier(std::span<const double> demands_mbps, double bandwidth_mbps);

struct SimOptions {
  double warmup_fraction = 0.1;
  // The dispatcher flushes a partial batch once the head query's slack
  // against (1 - guard) * QoS reaches zero.
  double flush_guard_fraction = 0.05;
  ContentionPolicy contention = ContentionPolicy::kActiveDemand;
  bool global_memory_comm = true;  // false: every hop copies through host memory
  double drain_s = 5;              // extra simulated time after the last arrival
  bool keep_records = false;
};

struct SimulationInput {
  PlacementPlan plan;
  Allocation allocation;
  PipelineSpec pipeline;
  std::vector<GpuSpec> gpus;
  CommConfig comm;
  // Used for the dispatcher's slack estimate; empty means the oracle is used.
  std::vector<PerfModel> models;
};

// Pipeline batch size set to the problem's, comm config and models copied over.
SimulationInput make_sim_input(const AllocationProblem& problem, const Allocation& allocation,
                               const PlacementPlan& plan);

struct StageTimes {
  double queue_ms = 0;    // waiting in the stage dispatcher
  double comm_ms = 0;     // inbound hand-off for the batch
  double service_ms = 0;  // batch execution including contention
};

struct QueryRecord {
  double arrival_ms = 0;
  double completion_ms = -1;  // < 0 while in flight
  std::vector<StageTimes> stages;
};

struct SimulationResult {
  double p99_latency_ms = 0;  // +inf when a measured query never completed
  double mean_latency_ms = 0;
  double achieved_qps = 0;
  std::int64_t arrived = 0;
  std::int64_t completed = 0;
  std::int64_t in_flight = 0;
  std::int64_t measured = 0;  // queries after warm-up
  std::vector<StageTimes> stage_means;  // over completed measured queries
  std::uint64_t events = 0;
  bool clock_monotone = true;
  double max_contention = 1;
  std::vector<QueryRecord> records;  // only with keep_records
};

// Throws SimulationError on non-finite event times.
SimulationResult simulate(const SimulationInput& input, const WorkloadTrace& trace,
                          const SimOptions& options = {});

// min_i N_i * oracle throughput at the allocation's shares and batch size.
double oracle_bottleneck_qps(const Allocation& allocation, const PipelineSpec& pipeline,
                             const GpuSpec& gpu);

struct PeakLoad {
  double rate_qps = 0;
  double p99_latency_ms = 0;
  int simulations = 0;
  std::string diagnostic;
};

// Largest Poisson rate whose simulated p99 stays within the pipeline's QoS:
// bracket by doubling/halving from half the oracle bottleneck, then 12
// bisection steps. `trace` supplies duration, seed and query cap.
PeakLoad find_peak_load(const SimulationInput& input, const WorkloadTrace& trace,
                        const SimOptions& options = {});

struct VariantOutcome {
  Allocation allocation;
  PlacementPlan plan;
  double offered_qps = 0;
  SimulationResult result;
  bool meets_qos = false;
};

struct ValidationReport {
  VariantOutcome constrained;
  VariantOutcome unconstrained;  // bandwidth constraint disabled at allocation time
  double qos_ms = 0;
  double p99_ratio = 0;  // unconstrained / constrained
};

// Solves max-load with and without the bandwidth constraint, places both and
// simulates each at `load_fraction` of the peak its own plan predicts.
ValidationReport validate_allocation(const AllocationProblem& problem, const SaParams& sa,
                                     const WorkloadTrace& trace, double load_fraction = 0.7,
                                     const SimOptions& options = {});

}  // namespace pipealloc
