#include <doctest.h>

#include <cmath>
#include <random>

#include "pipealloc/errors.hpp"
#include "pipealloc/simulator.hpp"
#include "support.hpp"

using namespace pipealloc;
using namespace pipealloc::test;

namespace {

SaParams quick_sa() {
  SaParams sa;
  sa.restarts = 10;
  sa.iterations = 1500;
  return sa;
}

struct Setup {
  AllocationProblem problem;
  Allocation allocation;
  PlacementPlan plan;
  SimulationInput input() const { return make_sim_input(problem, allocation, plan); }
};

Setup solved(const AllocationProblem& problem) {
  Allocation a = solve_max_load(problem, quick_sa());
  PlacementPlan plan = place(a, problem);
  return {problem, a, plan};
}

Setup fixed(const AllocationProblem& problem, std::vector<int> n, std::vector<double> p) {
  Allocation a;
  a.instances = std::move(n);
  a.shares = std::move(p);
  a.gpu_count = static_cast<int>(problem.gpus().size());
  a.objective = predicted_throughput(a, problem);
  PlacementOptions loose;
  loose.enforce_bandwidth = false;
  PlacementPlan plan = place(a, problem.pipeline(), problem.gpus(), problem.models(), problem.batch(), loose);
  return {problem, a, plan};
}

WorkloadTrace trace(double rate, double seconds, std::uint64_t seed = 1,
                    ArrivalProcess process = ArrivalProcess::kPoisson) {
  WorkloadTrace t;
  t.rate_qps = rate;
  t.duration_s = seconds;
  t.seed = seed;
  t.process = process;
  return t;
}

}  // namespace

TEST_CASE("an idle pipeline answers in the sum of its stage and hop times") {
  const GpuSpec gpu = preset_2080ti();
  const auto pipe = make_artifact_pipeline(2, 2, 2);
  const auto s = solved(make_problem(pipe, gpu, 1, 1));
  double analytic = 0;
  for (int k = 0; k < 3; ++k) {
    analytic += oracle_duration_ms(pipe.stages[k], 1, s.allocation.shares[k], gpu);
  }
  analytic += 2 * comm_time_global_memory(s.problem.options().comm, gpu);
  const auto r = simulate(s.input(), trace(2, 30, 1, ArrivalProcess::kFixedInterval));
  CHECK(r.completed == r.arrived);
  CHECK(std::abs(r.p99_latency_ms / analytic - 1) <= 0.01);
  CHECK(std::abs(r.mean_latency_ms / analytic - 1) <= 0.01);
}

TEST_CASE("queries are conserved and runs are reproducible") {
  const GpuSpec gpu = preset_2080ti();
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> level(1, 3);
  std::uniform_real_distribution<double> load(0.1, 1.5);
  for (int trial = 0; trial < 8; ++trial) {
    const auto pipe = make_artifact_pipeline(level(rng), level(rng), level(rng));
    const int gpus = 1 + trial % 2;
    const auto s = solved(make_problem(pipe, gpu, gpus));
    const auto t = trace(load(rng) * s.allocation.objective, 3, rng());
    const auto a = simulate(s.input(), t);
    const auto b = simulate(s.input(), t);
    CHECK(a.arrived == a.completed + a.in_flight);
    CHECK(a.clock_monotone);
    CHECK(a.events == b.events);
    CHECK(a.p99_latency_ms == b.p99_latency_ms);
    CHECK(a.mean_latency_ms == b.mean_latency_ms);
    if (a.completed == a.arrived) CHECK(a.p99_latency_ms >= a.mean_latency_ms);
  }
}

TEST_CASE("per-stage breakdowns add up to the latency") {
  const auto s = solved(make_problem(make_artifact_pipeline(1, 3, 2), preset_2080ti(), 2));
  SimOptions opt;
  opt.keep_records = true;
  const auto r = simulate(s.input(), trace(0.6 * s.allocation.objective, 3), opt);
  REQUIRE(r.records.size() == static_cast<std::size_t>(r.arrived));
  int checked = 0;
  for (const auto& q : r.records) {
    if (q.completion_ms < 0) continue;
    double sum = 0;
    for (const auto& st : q.stages) {
      CHECK(st.queue_ms >= 0);
      CHECK(st.comm_ms >= 0);
      CHECK(st.service_ms > 0);
      sum += st.queue_ms + st.comm_ms + st.service_ms;
    }
    CHECK(std::abs(sum - (q.completion_ms - q.arrival_ms)) <= 1e-6);
    ++checked;
  }
  CHECK(checked > 100);
}

TEST_CASE("removing a demand never raises the contention multiplier") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> d(0, 400000);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> demands(1 + trial % 5);
    for (auto& x : demands) x = d(rng);
    const double full = contention_multiplier(demands, 616000);
    CHECK(full >= 1);
    for (std::size_t i = 0; i < demands.size(); ++i) {
      auto less = demands;
      less.erase(less.begin() + static_cast<long>(i));
      CHECK(contention_multiplier(less, 616000) <= full);
    }
  }
  CHECK(contention_multiplier(std::vector<double>{300000, 300000}, 616000) == 1);
  CHECK(contention_multiplier(std::vector<double>{616000, 616000}, 616000) == 2);
}

TEST_CASE("oversubscribed co-location stretches service times") {
  const GpuSpec gpu = preset_2080ti();
  const auto pipe = bandwidth_tight_pipeline(300);
  const auto s = fixed(make_problem(pipe, gpu), {1, 2}, {40, 30});
  const auto r = simulate(s.input(), trace(5000, 3, 1, ArrivalProcess::kFixedInterval));
  CHECK(r.max_contention > 1.2);
  const double solo = oracle_duration_ms(pipe.stages[1], 8, 30, gpu);
  CHECK(r.stage_means[1].service_ms > 1.05 * solo);
}

TEST_CASE("the global-memory hand-off is faster than host copies") {
  const auto pipe = make_artifact_pipeline(1, 1, 3);  // large payload after the first stage
  const auto s = solved(make_problem(pipe, preset_2080ti()));
  const auto t = trace(0.3 * s.allocation.objective, 5);
  SimOptions host;
  host.global_memory_comm = false;
  const auto with_global = simulate(s.input(), t);
  const auto with_host = simulate(s.input(), t, host);
  CHECK(with_global.stage_means[1].comm_ms < with_host.stage_means[1].comm_ms);
  CHECK(with_global.mean_latency_ms < with_host.mean_latency_ms);
}

TEST_CASE("a faster GPU never lowers the peak") {
  const GpuSpec gpu = preset_2080ti();
  const auto pipe = make_artifact_pipeline(2, 2, 1);
  const auto s = solved(make_problem(pipe, gpu));
  auto input = s.input();
  const auto t = trace(1, 4);
  const auto base = find_peak_load(input, t);
  for (auto& g : input.gpus) {
    g.gflops *= 2;
    g.mem_bandwidth_mbps *= 2;
  }
  const auto fast = find_peak_load(input, t);
  CHECK(base.rate_qps > 0);
  CHECK(fast.rate_qps >= base.rate_qps);
  CHECK(base.p99_latency_ms <= pipe.qos_target_ms);
}

TEST_CASE("the peak stays under the bottleneck throughput") {
  const GpuSpec gpu = preset_2080ti();
  const auto s = solved(make_problem(make_artifact_pipeline(3, 1, 2), gpu));
  const auto peak = find_peak_load(s.input(), trace(1, 30));
  CHECK(peak.rate_qps > 0);
  CHECK(peak.rate_qps <= oracle_bottleneck_qps(s.allocation, s.problem.pipeline(), gpu));
}

TEST_CASE("an unreachable target is reported, not searched forever") {
  auto pipe = make_artifact_pipeline(2, 2, 2);
  const auto s = solved(make_problem(pipe, preset_2080ti()));
  auto input = s.input();
  input.pipeline.qos_target_ms = 0.5;
  const auto peak = find_peak_load(input, trace(1, 2));
  CHECK(peak.rate_qps == 0);
  CHECK_FALSE(peak.diagnostic.empty());
}

TEST_CASE("with spare bandwidth both variants meet the target") {
  const auto problem = make_problem(make_artifact_pipeline(3, 1, 1), preset_2080ti());
  const auto r = validate_allocation(problem, quick_sa(), trace(1, 5));
  CHECK(r.constrained.meets_qos);
  CHECK(r.unconstrained.meets_qos);
}

TEST_CASE("ignoring bandwidth costs latency on a scan-heavy pipeline") {
  const auto problem = make_problem(bandwidth_tight_pipeline(250), preset_2080ti());
  const auto r = validate_allocation(problem, quick_sa(), trace(1, 5));
  CHECK(r.constrained.meets_qos);
  CHECK_FALSE(r.unconstrained.meets_qos);
  CHECK(r.p99_ratio >= 1);
}

TEST_CASE("bad inputs are rejected") {
  const auto s = solved(make_problem(make_artifact_pipeline(1, 1, 1), preset_2080ti()));
  CHECK_THROWS_AS(simulate(s.input(), trace(0, 1)), InvalidArgument);
  CHECK_THROWS_AS(simulate(s.input(), trace(10, -1)), InvalidArgument);
  auto input = s.input();
  input.plan.instances.erase(std::remove_if(input.plan.instances.begin(), input.plan.instances.end(),
                                            [](const PlacedInstance& p) { return p.stage == 1; }),
                             input.plan.instances.end());
  CHECK_THROWS_AS(simulate(input, trace(10, 1)), InvalidArgument);
  SimOptions bad;
  bad.warmup_fraction = 1;
  CHECK_THROWS_AS(simulate(s.input(), trace(10, 1), bad), InvalidArgument);
}
