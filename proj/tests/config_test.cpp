#include <doctest.h>

#include <string>

#include "pipealloc/config.hpp"
#include "pipealloc/errors.hpp"

using namespace pipealloc;

namespace {

const char* kMinimal = R"({
  "gpu": "2080ti",
  "artifact": {"compute": 1, "memory": 2, "pcie": 3},
  "batch_sizes": [8, 16]
})";

std::string error_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("a minimal config fills in defaults") {
  const auto cfg = parse_config(kMinimal);
  CHECK(cfg.gpu.name == "2080ti");
  CHECK(cfg.gpu_count == 1);
  CHECK(cfg.pipeline.stages.size() == 3);
  CHECK(cfg.batch_sizes == std::vector<int>{8, 16});
  CHECK(cfg.seeds.sa == 1);
  CHECK(cfg.hash != 0);
  // calibration runs at parse time
  CHECK(crossover_payload_mb(cfg.allocator.comm, cfg.gpu) == doctest::Approx(0.02).epsilon(1e-9));
}

TEST_CASE("syntax errors carry a position") {
  const auto msg = error_of(R"({"gpu": "2080ti",, })");
  CHECK(msg.find("line 1") != std::string::npos);
  CHECK(msg.find("column") != std::string::npos);
}

TEST_CASE("semantic errors name the offending key") {
  CHECK(error_of(R"({"gpu": "2080ti", "artifact": {"compute": 1, "memory": 1, "pcie": 1}, "colour": 1})")
            .find("colour") != std::string::npos);
  CHECK(error_of(R"({"gpu": "h100", "artifact": {"compute": 1, "memory": 1, "pcie": 1}})").find("h100") !=
        std::string::npos);
  CHECK_FALSE(error_of(R"({"gpu": "2080ti"})").empty());
  CHECK_FALSE(error_of(R"({"gpu": "2080ti", "artifact": {"compute": 4, "memory": 1, "pcie": 1}})").empty());
  CHECK_FALSE(
      error_of(R"({"gpu": "2080ti", "artifact": {"compute": 1, "memory": 1, "pcie": 1}, "simulation": {"arrival": "burst"}})")
          .empty());
  CHECK_THROWS(parse_config(R"({"gpu": "2080ti", "artifact": {"compute": 1, "memory": 1, "pcie": 1}, "gpu_count": 0})"));
  CHECK_THROWS(parse_config(R"({"gpu": "2080ti", "artifact": {"compute": 1, "memory": 1, "pcie": 1}, "batch_sizes": [64]})"));
}

TEST_CASE("a custom pipeline and GPU object parse") {
  const auto cfg = parse_config(R"({
    "gpu": {"name": "lab", "gflops": 1000, "mem_capacity_mb": 8000, "mem_bandwidth_mbps": 300000,
            "pcie_effective_mbps": 12000, "pcie_per_stream_mbps": 3000, "instance_cap": 16},
    "pipeline": {"name": "two", "qos_target_ms": 50, "batch_size": 4, "stages": [
      {"name": "a", "compute_gflop_per_item": 1, "mem_traffic_mb_per_item": 5, "model_footprint_mb": 100},
      {"name": "b", "compute_gflop_per_item": 2, "mem_traffic_mb_per_item": 1, "model_footprint_mb": 100}]}
  })");
  CHECK(cfg.gpu.instance_cap == 16);
  CHECK(cfg.pipeline.stages.size() == 2);
  CHECK(cfg.pipeline.stages[1].stage_id == 1);
  CHECK(cfg.pipeline.qos_target_ms == 50);
}

TEST_CASE("the hash tracks settings but not the output directory") {
  const auto a = parse_config(kMinimal);
  const auto b = parse_config(kMinimal);
  CHECK(a.hash == b.hash);
  CHECK(hash_hex(a.hash).size() == 16);

  auto moved = a;
  apply_overrides(moved, std::nullopt, false, std::filesystem::path("/tmp/elsewhere"));
  CHECK(moved.hash == a.hash);
  CHECK(moved.output_dir == "/tmp/elsewhere");

  auto reseeded = a;
  apply_overrides(reseeded, 42, false, std::nullopt);
  CHECK(reseeded.seeds.sa == 42);
  CHECK(reseeded.seeds.trace == 42);
  CHECK(reseeded.hash != a.hash);

  auto strict = a;
  apply_overrides(strict, std::nullopt, true, std::nullopt);
  CHECK_FALSE(strict.allocator.comm_in_qos);
  CHECK(strict.hash != a.hash);
}

TEST_CASE("fnv1a64 matches published vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("shipped configs load") {
  for (const char* name : {"artifact.json", "custom_pipeline.json"}) {
    CAPTURE(name);
    CHECK_NOTHROW(load_config(std::filesystem::path(PIPEALLOC_SOURCE_DIR) / "configs" / name));
  }
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}
