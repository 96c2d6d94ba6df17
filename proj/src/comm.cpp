#include "pipealloc/comm.hpp"

#include <cmath>
#include <string>

#include "pipealloc/errors.hpp"

namespace pipealloc {

namespace {

constexpr double kBytesPerMb = 1e6;
constexpr double kTwoBytesMb = 2.0 / kBytesPerMb;

}  // namespace

const char* to_string(CommPath path) {
  return path == CommPath::kGlobalMemory ? "global-memory" : "main-memory";
}

double pcie_stream_rate_mbps(int streams, const GpuSpec& gpu, bool pinned) {
  if (streams < 1) streams = 1;
  const double single = pinned ? gpu.pcie_effective_mbps : gpu.pcie_per_stream_mbps;
  if (streams * single <= gpu.pcie_effective_mbps) return single;
  return gpu.pcie_effective_mbps / streams;
}

double comm_time_main_memory(const CommConfig& cfg, double payload_mb, int streams,
                             const GpuSpec& gpu, bool pinned) {
  const double rate = pcie_stream_rate_mbps(streams, gpu, pinned);
  return cfg.host_copy_fixed_overhead_ms + 2.0 * std::max(0.0, payload_mb) / rate * 1000.0;
}

double comm_time_global_memory(const CommConfig& cfg, const GpuSpec& gpu) {
  const double handle_mb = cfg.handle_bytes / kBytesPerMb;
  return cfg.ipc_fixed_overhead_ms + handle_mb / gpu.pcie_per_stream_mbps * 1000.0;
}

double crossover_payload_mb(const CommConfig& cfg, const GpuSpec& gpu) {
  const double gap_ms = comm_time_global_memory(cfg, gpu) - cfg.host_copy_fixed_overhead_ms;
  return gap_ms / 1000.0 * gpu.pcie_per_stream_mbps / 2.0;
}

CommConfig calibrate_overheads(const CommConfig& cfg, const GpuSpec& gpu) {
  if (!(cfg.crossover_target_mb > 0)) {
    throw CalibrationError("crossover_target_mb must be positive");
  }
  if (cfg.handle_bytes != 8) throw CalibrationError("IPC handle must be 8 bytes");
  if (cfg.host_copy_fixed_overhead_ms < 0) {
    throw CalibrationError("host_copy_fixed_overhead_ms must be >= 0");
  }
  CommConfig out = cfg;
  const double rate = gpu.pcie_per_stream_mbps;
  const double copy_ms = 2.0 * cfg.crossover_target_mb / rate * 1000.0;
  const double handle_ms = cfg.handle_bytes / kBytesPerMb / rate * 1000.0;
  out.ipc_fixed_overhead_ms = cfg.host_copy_fixed_overhead_ms + copy_ms - handle_ms;
  if (out.ipc_fixed_overhead_ms < 0) {
    throw CalibrationError("crossover target is below the handle size; IPC overhead would be negative");
  }
  const double small_main = comm_time_main_memory(out, kTwoBytesMb, 1, gpu);
  const double small_global = comm_time_global_memory(out, gpu);
  if (!(small_main < small_global)) {
    throw CalibrationError("calibrated overheads do not make main memory faster for a 2-byte payload");
  }
  const double at_target_main = comm_time_main_memory(out, cfg.crossover_target_mb * 1.01, 1, gpu);
  if (!(comm_time_global_memory(out, gpu) < at_target_main)) {
    throw CalibrationError("calibrated overheads do not favour global memory above the crossover");
  }
  return out;
}

CommMemoryCharge comm_memory_charge(const CommConfig& cfg, CommPath path, double payload_mb) {
  const double handle_mb = cfg.handle_bytes / kBytesPerMb;
  if (path == CommPath::kMainMemory) return {payload_mb, payload_mb};
  return {payload_mb + handle_mb, handle_mb};
}

}  // namespace pipealloc
