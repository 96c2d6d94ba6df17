#include <doctest.h>

#include <random>
#include <set>

#include "pipealloc/errors.hpp"
#include "pipealloc/placement.hpp"
#include "support.hpp"

using namespace pipealloc;
using namespace pipealloc::test;

namespace {

PerfModel model(int id, double weights_mb, double item_mb = 0, double bw_per_share = 0) {
  auto m = exact_model(id, 1, [](double s) { return s; },
                       [bw_per_share](double s) { return bw_per_share * s; }, weights_mb);
  m.footprint = {item_mb, weights_mb};
  return m;
}

GpuSpec gpu_with_memory(double mb) {
  GpuSpec g = preset_2080ti();
  g.mem_capacity_mb = mb;
  return g;
}

Allocation make(std::vector<int> n, std::vector<double> p, int gpus) {
  Allocation a;
  a.instances = std::move(n);
  a.shares = std::move(p);
  a.gpu_count = gpus;
  return a;
}

}  // namespace

TEST_CASE("the GPU with less free memory is filled first") {
  const auto pipe = plain_pipeline(1);
  const std::vector<PerfModel> models{model(0, 3000)};
  const auto a = make({1}, {50}, 2);

  const auto plan = place(a, pipe, {gpu_with_memory(4000), gpu_with_memory(10000)}, models, 1);
  REQUIRE(plan.instances.size() == 1);
  CHECK(plan.instances[0].gpu == 0);
  CHECK(plan.residual[0].memory_mb == doctest::Approx(1000));

  const auto swapped = place(a, pipe, {gpu_with_memory(10000), gpu_with_memory(4000)}, models, 1);
  CHECK(swapped.instances[0].gpu == 1);
}

TEST_CASE("co-located replicas share their weights") {
  const auto pipe = plain_pipeline(1);
  const std::vector<PerfModel> models{model(0, 1000, 50)};
  const auto plan = place(make({2}, {20}, 1), pipe, {preset_2080ti()}, models, 4);
  CHECK(plan.gpus_of_stage(0) == std::vector<int>{0});
  CHECK(plan.residual[0].memory_mb == doctest::Approx(11264 - 1000 - 2 * 4 * 50));
  CHECK(plan.residual[0].compute == doctest::Approx(60));
  CHECK(plan.residual[0].instances == 2);
}

TEST_CASE("an instance that fits nowhere names the binding dimension") {
  const auto pipe = plain_pipeline(1);
  try {
    place(make({1}, {10}, 1), pipe, {preset_2080ti()}, {model(0, 20000)}, 1);
    FAIL("expected PlacementError");
  } catch (const PlacementError& e) {
    CHECK(e.dimension() == "memory");
  }
  try {
    place(make({3}, {60}, 2), pipe, {preset_2080ti(), preset_2080ti()}, {model(0, 100)}, 1);
    FAIL("expected PlacementError");
  } catch (const PlacementError& e) {
    CHECK(e.dimension() == "compute");
  }
  try {
    place(make({2}, {45}, 1), pipe, {preset_2080ti()}, {model(0, 100, 0, 7000)}, 1);
    FAIL("expected PlacementError");
  } catch (const PlacementError& e) {
    CHECK(e.dimension() == "bandwidth");
  }
  PlacementOptions loose;
  loose.enforce_bandwidth = false;
  CHECK_NOTHROW(place(make({2}, {40}, 1), pipe, {preset_2080ti()}, {model(0, 100, 0, 7000)}, 1, loose));
}

TEST_CASE("comm path labels follow the mapping") {
  const GpuSpec g = preset_2080ti();
  SUBCASE("one GPU") {
    const auto pipe = plain_pipeline(3);
    const auto plan = place(make({1, 2, 1}, {20, 20, 20}, 1), pipe, {g},
                            {model(0, 100), model(1, 100), model(2, 100)}, 1);
    for (const auto& p : effective_comm_paths(plan, pipe)) {
      CHECK(p.has_global);
      CHECK_FALSE(p.has_main);
    }
  }
  SUBCASE("distinct GPUs") {
    const auto pipe = plain_pipeline(2);
    const auto plan = place(make({1, 1}, {20, 20}, 2), pipe, {g, g}, {model(0, 7000), model(1, 7000)}, 1);
    CHECK(plan.instances[0].gpu != plan.instances[1].gpu);
    const auto paths = effective_comm_paths(plan, pipe);
    REQUIRE(paths.size() == 1);
    CHECK(paths[0].has_main);
    CHECK_FALSE(paths[0].has_global);
  }
  SUBCASE("split stage") {
    const auto pipe = plain_pipeline(2);
    const auto plan = place(make({2, 1}, {60, 30}, 2), pipe, {g, g}, {model(0, 100), model(1, 100)}, 1);
    CHECK(plan.gpus_of_stage(0).size() == 2);
    const auto paths = effective_comm_paths(plan, pipe);
    CHECK(paths[0].pairs.size() == 2);
    CHECK(paths[0].has_main);
    CHECK(paths[0].has_global);
    const auto j = to_json(plan, pipe);
    CHECK(j["comm_paths"][0]["path"] == "mixed");
  }
}

TEST_CASE("verify_plan rejects a tampered mapping") {
  const auto pipe = plain_pipeline(2);
  const GpuSpec g = preset_2080ti();
  const std::vector<PerfModel> models{model(0, 7000), model(1, 7000)};
  const auto a = make({1, 1}, {20, 20}, 2);
  auto plan = place(a, pipe, {g, g}, models, 1);
  CHECK_NOTHROW(verify_plan(plan, a, pipe, {g, g}, models, 1));
  plan.instances[1].gpu = plan.instances[0].gpu;
  CHECK_THROWS_AS(verify_plan(plan, a, pipe, {g, g}, models, 1), PlacementError);
  plan.instances.pop_back();
  CHECK_THROWS_AS(verify_plan(plan, a, pipe, {g, g}, models, 1), PlacementError);
}

TEST_CASE("a stage stranded by pipeline order is placed by the fallback pass") {
  // In pipeline order stage 1 takes the spare compute that stage 2's two
  // 70% replicas need.
  const auto pipe = plain_pipeline(3);
  const GpuSpec g = preset_2080ti();
  const std::vector<PerfModel> models{model(0, 3400, 6), model(1, 3300, 14), model(2, 5100, 16)};
  const auto a = make({1, 2, 2}, {90, 20, 70}, 3);
  PlacementPlan plan;
  REQUIRE_NOTHROW(plan = place(a, pipe, {g, g, g}, models, 4));
  CHECK_NOTHROW(verify_plan(plan, a, pipe, {g, g, g}, models, 4));
  CHECK(plan.gpus_of_stage(2).size() == 2);
  for (std::size_t k = 1; k < plan.instances.size(); ++k) {
    CHECK(plan.instances[k - 1].stage <= plan.instances[k].stage);
  }
}

TEST_CASE("placement is deterministic") {
  const auto pipe = plain_pipeline(3);
  const GpuSpec g = preset_2080ti();
  const std::vector<PerfModel> models{model(0, 3000, 10), model(1, 5000, 20), model(2, 2000, 5)};
  const auto a = make({2, 3, 1}, {30, 40, 50}, 3);
  CHECK(to_json(place(a, pipe, {g, g, g}, models, 8), pipe) ==
        to_json(place(a, pipe, {g, g, g}, models, 8), pipe));
}

TEST_CASE("the heuristic packs within one GPU of the exhaustive minimum") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> stages_d(1, 3), count_d(1, 2), share_d(1, 9);
  std::uniform_real_distribution<double> weights_d(500, 6000), item_d(0, 40);
  const GpuSpec g = preset_2080ti();
  const std::vector<GpuSpec> gpus{g, g, g};
  int checked = 0;
  for (int trial = 0; trial < 150; ++trial) {
    const int stages = stages_d(rng);
    auto pipe = plain_pipeline(stages);
    std::vector<PerfModel> models;
    Allocation a;
    a.gpu_count = 3;
    for (int i = 0; i < stages; ++i) {
      models.push_back(model(i, weights_d(rng), item_d(rng)));
      a.instances.push_back(count_d(rng));
      a.shares.push_back(10.0 * share_d(rng));
    }
    int total = 0;
    for (int n : a.instances) total += n;
    if (total > 6) continue;

    // Exhaustive search over every instance -> GPU mapping.
    PlacementPlan candidate;
    for (int i = 0; i < stages; ++i) {
      for (int r = 0; r < a.instances[i]; ++r) candidate.instances.push_back({i, r, 0, a.shares[i]});
    }
    int best = 99;
    std::vector<int> digit(total, 0);
    while (true) {
      for (int k = 0; k < total; ++k) candidate.instances[k].gpu = digit[k];
      try {
        verify_plan(candidate, a, pipe, gpus, models, 4);
        best = std::min(best, static_cast<int>(std::set<int>(digit.begin(), digit.end()).size()));
      } catch (const PlacementError&) {
      }
      int k = 0;
      while (k < total && ++digit[k] == 3) digit[k++] = 0;
      if (k == total) break;
    }
    if (best == 99) {
      CHECK_THROWS_AS(place(a, pipe, gpus, models, 4), PlacementError);
      continue;
    }
    CAPTURE(trial);
    PlacementPlan plan;
    REQUIRE_NOTHROW(plan = place(a, pipe, gpus, models, 4));
    CHECK_NOTHROW(verify_plan(plan, a, pipe, gpus, models, 4));
    CHECK(plan.gpus_used() <= best + 1);
    ++checked;
  }
  CHECK(checked >= 50);
}
