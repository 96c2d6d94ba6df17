#include <doctest.h>

#include <cmath>

#include "pipealloc/comm.hpp"
#include "pipealloc/errors.hpp"

using namespace pipealloc;

TEST_CASE("pcie rate is unchanged up to three streams then splits the bus") {
  const GpuSpec gpu = preset_2080ti();
  for (int n = 1; n <= 3; ++n) CHECK(pcie_stream_rate_mbps(n, gpu) == gpu.pcie_per_stream_mbps);
  for (int n = 4; n <= 64; ++n) {
    CHECK(pcie_stream_rate_mbps(n, gpu) == doctest::Approx(12160.0 / n).epsilon(1e-12));
  }
  CHECK(pcie_stream_rate_mbps(1, gpu, true) == gpu.pcie_effective_mbps);
}

TEST_CASE("an empty payload costs the fixed overhead") {
  const GpuSpec gpu = preset_2080ti();
  CommConfig cfg;
  CHECK(comm_time_main_memory(cfg, 0, 1, gpu) == cfg.host_copy_fixed_overhead_ms);
}

TEST_CASE("global memory time ignores the payload") {
  const GpuSpec gpu = preset_v100();
  const auto cfg = calibrate_overheads(CommConfig{}, gpu);
  const double t = comm_time_global_memory(cfg, gpu);
  CHECK(t > 0);
  CHECK(comm_time_global_memory(cfg, gpu) == t);
}

TEST_CASE("calibration places the crossover at the target") {
  for (const auto& gpu : {preset_2080ti(), preset_v100()}) {
    const auto cfg = calibrate_overheads(CommConfig{}, gpu);
    CHECK(std::abs(crossover_payload_mb(cfg, gpu) - 0.02) <= 1e-9);
    CHECK(std::abs(comm_time_main_memory(cfg, 0.02, 1, gpu) - comm_time_global_memory(cfg, gpu)) <= 1e-9);

    CommConfig doubled;
    doubled.crossover_target_mb = 0.04;
    const auto cfg2 = calibrate_overheads(doubled, gpu);
    CHECK(crossover_payload_mb(cfg2, gpu) == doctest::Approx(2 * crossover_payload_mb(cfg, gpu)));

    const double two_bytes = 2e-6;
    CHECK(comm_time_main_memory(cfg, two_bytes, 1, gpu) < comm_time_global_memory(cfg, gpu));
    CHECK(comm_time_global_memory(cfg, gpu) < comm_time_main_memory(cfg, 0.5, 1, gpu));
  }
}

TEST_CASE("calibration rejects impossible targets") {
  CommConfig tiny;
  tiny.crossover_target_mb = 1e-9;
  tiny.host_copy_fixed_overhead_ms = 0;
  CHECK_THROWS_AS(calibrate_overheads(tiny, preset_2080ti()), CalibrationError);
  CommConfig negative;
  negative.crossover_target_mb = -1;
  CHECK_THROWS_AS(calibrate_overheads(negative, preset_2080ti()), CalibrationError);
}

TEST_CASE("memory charges follow the path") {
  CommConfig cfg;
  const auto main = comm_memory_charge(cfg, CommPath::kMainMemory, 2.0);
  CHECK(main.producer_mb == 2.0);
  CHECK(main.consumer_mb == 2.0);
  const auto global = comm_memory_charge(cfg, CommPath::kGlobalMemory, 2.0);
  CHECK(global.producer_mb == doctest::Approx(2.0 + 8e-6));
  CHECK(global.consumer_mb == doctest::Approx(8e-6));
  CHECK(std::string(to_string(CommPath::kGlobalMemory)) == "global-memory");
}
