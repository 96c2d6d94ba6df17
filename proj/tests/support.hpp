#pragma once

#include <functional>
#include <vector>

#include "pipealloc/allocator.hpp"
#include "pipealloc/predictor.hpp"
#include "pipealloc/workload.hpp"

namespace pipealloc::test {

inline std::vector<PerfModel> train_models(const PipelineSpec& pipe, const GpuSpec& gpu,
                                           std::uint64_t seed = 1, int max_batch = 32) {
  std::vector<PerfModel> models;
  const auto batches = batch_range(1, max_batch);
  const auto shares = default_share_grid();
  for (const auto& s : pipe.stages) {
    models.push_back(train(collect_profile(s, gpu, batches, shares), seed, s.stage_id).model);
  }
  return models;
}

// A model whose trees reproduce `throughput(share)` exactly on the integer
// shares 1..100 at batch `batch`; duration is batch/throughput, bandwidth is
// `bandwidth(share)`.
inline PerfModel exact_model(int stage_id, int batch, const std::function<double(double)>& throughput,
                             const std::function<double(double)>& bandwidth, double footprint_mb = 100) {
  std::vector<RegressionTree::Features> x;
  std::vector<double> thr, dur, bw;
  for (int s = 1; s <= 100; ++s) {
    x.push_back({static_cast<double>(batch), static_cast<double>(s)});
    thr.push_back(throughput(s));
    dur.push_back(1000.0 / throughput(s));  // per item
    bw.push_back(bandwidth(s));
  }
  const RegressionTree::Params exact{16, 1};
  PerfModel m;
  m.stage_id = stage_id;
  m.throughput = RegressionTree::fit(x, thr, exact);
  m.duration = RegressionTree::fit(x, dur, exact);
  m.bandwidth = RegressionTree::fit(x, bw, exact);
  m.flops = {1, 0};
  m.footprint = {0, footprint_mb};
  for (int s = 1; s <= 100; ++s) m.share_levels.push_back(s);
  m.batch_levels = {batch};
  return m;
}

// Stage whose spec only matters for validation (footprint vs capacity).
inline MicroserviceSpec plain_stage(int id, double footprint_mb = 100) {
  MicroserviceSpec m;
  m.stage_id = id;
  m.name = "s" + std::to_string(id);
  m.compute_gflop_per_item = 1;
  m.mem_traffic_mb_per_item = 1;
  m.model_footprint_mb = footprint_mb;
  return m;
}

inline PipelineSpec plain_pipeline(int stages, double qos_ms = 1e6, int batch = 1) {
  PipelineSpec p;
  p.name = "synthetic";
  p.qos_target_ms = qos_ms;
  p.batch_size = batch;
  for (int i = 0; i < stages; ++i) p.stages.push_back(plain_stage(i));
  return p;
}

// Two stages on one GPU where the second one streams `scan_mem_mb` per item
// through global memory, so bandwidth binds well before compute does.
inline PipelineSpec bandwidth_tight_pipeline(double scan_mem_mb) {
  PipelineSpec pipe;
  pipe.name = "scan" + std::to_string(static_cast<int>(scan_mem_mb));
  pipe.qos_target_ms = 100;
  pipe.batch_size = 8;
  MicroserviceSpec front;
  front.stage_id = 0;
  front.name = "front";
  front.compute_gflop_per_item = 1.0;
  front.mem_traffic_mb_per_item = 20;
  front.payload_out_mb = 0.05;
  front.model_footprint_mb = 500;
  front.footprint_per_item_mb = 10;
  MicroserviceSpec scan;
  scan.stage_id = 1;
  scan.name = "scan";
  scan.compute_gflop_per_item = 0.3;
  scan.mem_traffic_mb_per_item = scan_mem_mb;
  scan.payload_out_mb = 0.01;
  scan.model_footprint_mb = 300;
  scan.footprint_per_item_mb = 10;
  pipe.stages = {front, scan};
  return pipe;
}

inline AllocationProblem make_problem(const PipelineSpec& pipe, const GpuSpec& gpu, int gpu_count = 1,
                                      int batch = 0, AllocatorOptions options = {}) {
  options.comm = calibrate_overheads(CommConfig{}, gpu);
  return AllocationProblem(pipe, std::vector<GpuSpec>(gpu_count, gpu), train_models(pipe, gpu),
                           batch > 0 ? batch : pipe.batch_size, options);
}

inline AllocatorOptions calibrated_options(const GpuSpec& gpu) {
  AllocatorOptions o;
  o.comm = calibrate_overheads(CommConfig{}, gpu);
  return o;
}

}  // namespace pipealloc::test
