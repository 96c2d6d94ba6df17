#pragma once

#include <vector>

#include "pipealloc/predictor.hpp"
#include "pipealloc/workload.hpp"

// Hand-computed GPU counts. 2080ti: G = 13450 GFLOP/s, F = 11264 MB.
// v100: G = 15700 GFLOP/s, F = 32768 MB. The compute budget is G * QoS seconds.

namespace pipealloc::test {

struct MinGpuCase {
  const char* label;
  bool v100;
  std::vector<double> gflop_per_item;
  std::vector<double> weights_mb;
  std::vector<double> item_mb;
  int batch;
  double qos_ms;
  int expected;
  bool memory_bound;  // the memory term sets the answer
};

inline std::vector<MinGpuCase> min_gpu_cases() {
  return {
      {"tiny", false, {1}, {1000}, {0}, 1, 100, 1, false},
      {"half capacity", false, {0.01}, {5632}, {0}, 1, 100, 1, true},
      {"2.3 capacities", false, {0.01, 0.01, 0.01}, {10000, 10000, 5907.2}, {0, 0, 0}, 1, 100, 3, true},
      {"exactly two capacities", false, {0.01, 0.01}, {11264, 11264}, {0, 0}, 1, 100, 2, true},
      {"just over two capacities", false, {0.01, 0.01}, {11264, 11265}, {0, 0}, 1, 100, 3, true},
      // 100 * 20 = 2000 GFLOP over a 1345 GFLOP budget
      {"compute 1.49", false, {100}, {500}, {0}, 20, 100, 2, false},
      {"compute exactly one budget", false, {134.5}, {500}, {0}, 10, 100, 1, false},
      {"compute two budgets at 50 ms", false, {134.5}, {500}, {0}, 10, 50, 2, false},
      // 150 * 32 = 4800 over 1345
      {"compute 3.57", false, {50, 50, 50}, {100, 100, 100}, {0, 0, 0}, 32, 100, 4, false},
      {"compute 1.78 at 200 ms", false, {50, 50, 50}, {100, 100, 100}, {0, 0, 0}, 32, 200, 2, false},
      // 4000 + 100 * 32 = 7200
      {"working set fits", false, {0.01}, {4000}, {100}, 32, 100, 1, true},
      // 2 * 7200 = 14400
      {"working set spills", false, {0.01, 0.01}, {4000, 4000}, {100, 100}, 32, 100, 2, true},
      // 3000 / 1345 = 2.23 and 30000 / 11264 = 2.66
      {"both terms give three", false, {100}, {30000}, {0}, 30, 100, 3, false},
      // 6400 / 1345 = 4.76 vs 12000 / 11264 = 1.07
      {"compute dominates", false, {200}, {12000}, {0}, 32, 100, 5, false},
      // 50000 / 11264 = 4.44
      {"memory dominates", false, {1}, {50000}, {0}, 1, 100, 5, true},
      {"nothing at all", false, {0}, {0}, {0}, 1, 100, 1, false},
      // 157 * 10 = 1570 = G * 0.1
      {"v100 exact compute", true, {157}, {1000}, {0}, 10, 100, 1, false},
      {"v100 compute 1.1", true, {157}, {1000}, {0}, 11, 100, 2, false},
      {"v100 three capacities", true, {1}, {98304}, {0}, 1, 100, 3, true},
      {"v100 just over three", true, {1}, {98305}, {0}, 1, 100, 4, true},
  };
}

inline std::vector<PerfModel> min_gpu_models(const MinGpuCase& c) {
  std::vector<PerfModel> models(c.gflop_per_item.size());
  for (std::size_t i = 0; i < models.size(); ++i) {
    models[i].stage_id = static_cast<int>(i);
    models[i].flops = {c.gflop_per_item[i], 0};
    models[i].footprint = {c.item_mb[i], c.weights_mb[i]};
    models[i].share_levels = {10, 100};
    models[i].batch_levels = {1};
  }
  return models;
}

inline PipelineSpec min_gpu_pipeline(const MinGpuCase& c) {
  PipelineSpec p;
  p.name = c.label;
  p.qos_target_ms = c.qos_ms;
  p.batch_size = c.batch;
  for (std::size_t i = 0; i < c.gflop_per_item.size(); ++i) {
    MicroserviceSpec m;
    m.stage_id = static_cast<int>(i);
    m.name = "s" + std::to_string(i);
    m.compute_gflop_per_item = c.gflop_per_item[i];
    m.mem_traffic_mb_per_item = 1;
    p.stages.push_back(m);
  }
  return p;
}

}  // namespace pipealloc::test
