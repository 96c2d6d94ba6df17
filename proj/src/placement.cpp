#include "pipealloc/placement.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "pipealloc/errors.hpp"

namespace pipealloc {

namespace {

constexpr double kEps = 1e-9;
constexpr int kUnbounded = std::numeric_limits<int>::max();

enum Dimension { kMemoryDim, kComputeDim, kBandwidthDim, kInstanceDim, kNumDims };
const char* kDimensionNames[kNumDims] = {"memory", "compute", "bandwidth", "instances"};

int fit_count(double residual, double per_instance) {
  if (per_instance <= 0) return kUnbounded;
  const double n = std::floor((residual + kEps * std::max(1.0, std::abs(residual))) / per_instance);
  if (n <= 0) return 0;
  return n >= kUnbounded ? kUnbounded : static_cast<int>(n);
}

struct GpuState {
  GpuResidual residual;
  std::vector<bool> hosts_stage;
};

// canHold(): per-dimension instance counts for one stage on one GPU.
std::array<int, kNumDims> can_hold(const GpuState& g, int stage, const InstanceDemand& d,
                                   int instance_cap, bool enforce_bandwidth) {
  std::array<int, kNumDims> c{};
  c[kComputeDim] = fit_count(g.residual.compute, d.compute);
  c[kBandwidthDim] = enforce_bandwidth ? fit_count(g.residual.bandwidth_mbps, d.bandwidth_mbps) : kUnbounded;
  c[kInstanceDim] = std::max(0, instance_cap - g.residual.instances);
  if (g.hosts_stage[stage]) {
    c[kMemoryDim] = fit_count(g.residual.memory_mb, d.working_mb);
  } else {
    const double first = d.weights_mb + d.working_mb;
    const double tol = kEps * std::max(1.0, std::abs(g.residual.memory_mb));
    if (g.residual.memory_mb + tol < first) {
      c[kMemoryDim] = 0;
    } else {
      const int rest = fit_count(g.residual.memory_mb - first, d.working_mb);
      c[kMemoryDim] = rest == kUnbounded ? kUnbounded : 1 + rest;
    }
  }
  return c;
}

int min_of(const std::array<int, kNumDims>& c) { return *std::min_element(c.begin(), c.end()); }

void deploy(GpuState& g, int stage, const InstanceDemand& d, int count) {
  g.residual.compute -= d.compute * count;
  g.residual.bandwidth_mbps -= d.bandwidth_mbps * count;
  g.residual.memory_mb -= d.working_mb * count;
  if (!g.hosts_stage[stage]) {
    g.residual.memory_mb -= d.weights_mb;
    g.hosts_stage[stage] = true;
  }
  g.residual.instances += count;
}

std::vector<GpuState> fresh_states(const std::vector<GpuSpec>& gpus, int gpu_count, int stages) {
  std::vector<GpuState> states(gpu_count);
  for (int j = 0; j < gpu_count; ++j) {
    states[j].residual = {gpus[j].compute_share_total, gpus[j].mem_capacity_mb,
                          gpus[j].mem_bandwidth_mbps, 0};
    states[j].hosts_stage.assign(stages, false);
  }
  return states;
}

void check_inputs(const Allocation& a, const PipelineSpec& pipeline, const std::vector<GpuSpec>& gpus,
                  const std::vector<PerfModel>& models) {
  const std::size_t stages = pipeline.stages.size();
  if (a.instances.size() != stages || a.shares.size() != stages || models.size() != stages) {
    throw InvalidArgument("allocation/models do not match the pipeline");
  }
  if (a.gpu_count < 1 || a.gpu_count > static_cast<int>(gpus.size())) {
    throw InvalidArgument("allocation GPU count outside the cluster");
  }
}

}  // namespace

std::vector<int> PlacementPlan::gpus_of_stage(int stage) const {
  std::vector<int> out;
  for (const auto& inst : instances) {
    if (inst.stage == stage && std::find(out.begin(), out.end(), inst.gpu) == out.end()) {
      out.push_back(inst.gpu);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

int PlacementPlan::gpus_used() const {
  int used = 0;
  for (const auto& r : residual) used += r.instances > 0 ? 1 : 0;
  return used;
}

InstanceDemand instance_demand(const PerfModel& model, int batch, double share) {
  InstanceDemand d;
  d.compute = share;
  d.weights_mb = std::max(0.0, model.footprint.intercept);
  d.working_mb = std::max(0.0, predict_footprint(model, batch) - d.weights_mb);
  d.bandwidth_mbps = plan_estimate(model, batch, share).bandwidth_mbps;
  return d;
}

namespace {

// One pass of the capacity-first heuristic with stages visited in `stage_order`.
PlacementPlan place_in_order(const Allocation& a, const PipelineSpec& pipeline, const std::vector<GpuSpec>& gpus,
                             const std::vector<PerfModel>& models, int batch, const PlacementOptions& options,
                             const std::vector<int>& stage_order) {
  const int stages = static_cast<int>(pipeline.stages.size());
  std::vector<GpuState> states = fresh_states(gpus, a.gpu_count, stages);
  std::vector<int> order(a.gpu_count);

  PlacementPlan plan;
  for (int i : stage_order) {
    const InstanceDemand d = instance_demand(models[i], batch, a.shares[i]);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int x, int y) {
      const auto& rx = states[x].residual;
      const auto& ry = states[y].residual;
      if (rx.memory_mb != ry.memory_mb) return rx.memory_mb < ry.memory_mb;
      if (rx.compute != ry.compute) return rx.compute < ry.compute;
      if (rx.bandwidth_mbps != ry.bandwidth_mbps) return rx.bandwidth_mbps < ry.bandwidth_mbps;
      return x < y;
    });

    int remaining = a.instances[i];
    int replica = 0;
    auto emit = [&](int gpu, int count) {
      deploy(states[gpu], i, d, count);
      for (int r = 0; r < count; ++r) plan.instances.push_back({i, replica++, gpu, a.shares[i]});
      remaining -= count;
    };

    for (int j : order) {
      if (min_of(can_hold(states[j], i, d, gpus[j].instance_cap, options.enforce_bandwidth)) >= remaining) {
        emit(j, remaining);
        break;
      }
    }
    if (remaining > 0) {
      for (int j : order) {
        const int n = std::min(remaining,
                               min_of(can_hold(states[j], i, d, gpus[j].instance_cap, options.enforce_bandwidth)));
        if (n > 0) emit(j, n);
        if (remaining == 0) break;
      }
    }
    if (remaining > 0) {
      std::array<int, kNumDims> binding_votes{};
      for (int j : order) {
        const auto c = can_hold(states[j], i, d, gpus[j].instance_cap, options.enforce_bandwidth);
        binding_votes[std::min_element(c.begin(), c.end()) - c.begin()]++;
      }
      const int dim = static_cast<int>(std::max_element(binding_votes.begin(), binding_votes.end()) -
                                       binding_votes.begin());
      throw PlacementError("cannot place " + std::to_string(remaining) + " instance(s) of stage " +
                               pipeline.stages[i].name + ": " + kDimensionNames[dim] + " exhausted",
                           kDimensionNames[dim]);
    }
  }
  for (const auto& st : states) plan.residual.push_back(st.residual);
  std::stable_sort(plan.instances.begin(), plan.instances.end(),
                   [](const PlacedInstance& x, const PlacedInstance& y) { return x.stage < y.stage; });
  return plan;
}

}  // namespace

PlacementPlan place(const Allocation& a, const PipelineSpec& pipeline, const std::vector<GpuSpec>& gpus,
                    const std::vector<PerfModel>& models, int batch, const PlacementOptions& options) {
  check_inputs(a, pipeline, gpus, models);
  const int stages = static_cast<int>(pipeline.stages.size());
  std::vector<int> pipeline_order(stages);
  std::iota(pipeline_order.begin(), pipeline_order.end(), 0);
  try {
    return place_in_order(a, pipeline, gpus, models, batch, options, pipeline_order);
  } catch (const PlacementError& first) {
    // Pipeline order can strand a large stage behind small ones; retry with
    // the biggest per-instance compute slices first.
    std::vector<int> big_first = pipeline_order;
    std::stable_sort(big_first.begin(), big_first.end(), [&](int x, int y) {
      if (a.shares[x] != a.shares[y]) return a.shares[x] > a.shares[y];
      return predict_footprint(models[x], batch) > predict_footprint(models[y], batch);
    });
    if (big_first == pipeline_order) throw;
    try {
      return place_in_order(a, pipeline, gpus, models, batch, options, big_first);
    } catch (const PlacementError&) {
      throw first;
    }
  }
}

PlacementPlan place(const Allocation& allocation, const AllocationProblem& problem) {
  PlacementOptions options;
  options.enforce_bandwidth = problem.options().enforce_bandwidth;
  return place(allocation, problem.pipeline(), problem.gpus(), problem.models(), problem.batch(),
               options);
}

void verify_plan(const PlacementPlan& plan, const Allocation& a, const PipelineSpec& pipeline,
                 const std::vector<GpuSpec>& gpus, const std::vector<PerfModel>& models, int batch,
                 const PlacementOptions& options) {
  check_inputs(a, pipeline, gpus, models);
  const int stages = static_cast<int>(pipeline.stages.size());
  std::vector<GpuState> states = fresh_states(gpus, a.gpu_count, stages);
  std::vector<int> per_stage(stages, 0);
  for (const auto& inst : plan.instances) {
    if (inst.gpu < 0 || inst.gpu >= a.gpu_count) throw PlacementError("instance on unknown GPU", "gpu");
    deploy(states[inst.gpu], inst.stage, instance_demand(models[inst.stage], batch, a.shares[inst.stage]), 1);
    per_stage[inst.stage]++;
  }
  for (int i = 0; i < stages; ++i) {
    if (per_stage[i] != a.instances[i]) {
      throw PlacementError("stage " + pipeline.stages[i].name + " has the wrong instance count", "instances");
    }
  }
  for (int j = 0; j < a.gpu_count; ++j) {
    const auto& r = states[j].residual;
    const auto& g = gpus[j];
    auto negative = [](double v, double scale) { return v < -kEps * std::max(1.0, scale); };
    if (negative(r.compute, g.compute_share_total)) throw PlacementError("negative compute residual", "compute");
    if (negative(r.memory_mb, g.mem_capacity_mb)) throw PlacementError("negative memory residual", "memory");
    if (options.enforce_bandwidth && negative(r.bandwidth_mbps, g.mem_bandwidth_mbps)) {
      throw PlacementError("negative bandwidth residual", "bandwidth");
    }
    if (r.instances > g.instance_cap) throw PlacementError("instance cap exceeded", "instances");
  }
}

std::vector<StagePairPaths> effective_comm_paths(const PlacementPlan& plan, const PipelineSpec& pipeline) {
  std::vector<StagePairPaths> out;
  const int stages = static_cast<int>(pipeline.stages.size());
  for (int k = 0; k + 1 < stages; ++k) {
    StagePairPaths pair;
    pair.producer_stage = k;
    for (std::size_t a = 0; a < plan.instances.size(); ++a) {
      if (plan.instances[a].stage != k) continue;
      for (std::size_t b = 0; b < plan.instances.size(); ++b) {
        if (plan.instances[b].stage != k + 1) continue;
        const CommPath path = plan.instances[a].gpu == plan.instances[b].gpu ? CommPath::kGlobalMemory
                                                                             : CommPath::kMainMemory;
        pair.pairs.push_back({static_cast<int>(a), static_cast<int>(b), path});
        (path == CommPath::kGlobalMemory ? pair.has_global : pair.has_main) = true;
      }
    }
    out.push_back(std::move(pair));
  }
  return out;
}

nlohmann::json to_json(const PlacementPlan& plan, const PipelineSpec& pipeline) {
  nlohmann::json instances = nlohmann::json::array();
  for (const auto& inst : plan.instances) {
    instances.push_back({{"stage", pipeline.stages[inst.stage].name},
                         {"stage_index", inst.stage},
                         {"replica", inst.replica},
                         {"gpu", inst.gpu},
                         {"share", inst.share}});
  }
  nlohmann::json gpus = nlohmann::json::array();
  for (std::size_t j = 0; j < plan.residual.size(); ++j) {
    const auto& r = plan.residual[j];
    gpus.push_back({{"gpu", j},
                    {"residual_compute", r.compute},
                    {"residual_memory_mb", r.memory_mb},
                    {"residual_bandwidth_mbps", r.bandwidth_mbps},
                    {"instances", r.instances}});
  }
  nlohmann::json paths = nlohmann::json::array();
  for (const auto& p : effective_comm_paths(plan, pipeline)) {
    std::string label = p.has_global && p.has_main ? "mixed" : (p.has_global ? "global-memory" : "main-memory");
    paths.push_back({{"from", pipeline.stages[p.producer_stage].name},
                     {"to", pipeline.stages[p.producer_stage + 1].name},
                     {"path", label}});
  }
  return {{"instances", instances}, {"gpus", gpus}, {"comm_paths", paths}};
}

}  // namespace pipealloc
