#pragma once

#include "pipealloc/workload.hpp"

// Inter-stage communication cost: the default path copies the payload
// device->host->device over PCIe, the global-memory path hands the consumer
// an 8-byte IPC handle to data that stays on the GPU.

namespace pipealloc {

struct CommConfig {
  double handle_bytes = 8;
  double ipc_fixed_overhead_ms = 0;
  double host_copy_fixed_overhead_ms = 0.02;
  double crossover_target_mb = 0.02;
};

enum class CommPath { kGlobalMemory, kMainMemory };

const char* to_string(CommPath path);

// Per-stream PCIe rate when `streams` copies share the bus. Streams beyond
// floor(effective/per_stream) split the effective bandwidth evenly. A pinned
// source lets a single copy use the whole bus.
double pcie_stream_rate_mbps(int streams, const GpuSpec& gpu, bool pinned = false);

double comm_time_main_memory(const CommConfig& cfg, double payload_mb, int streams,
                             const GpuSpec& gpu, bool pinned = false);

// Payload-independent: only the handle crosses the bus. Both stages must be
// on the same GPU; callers check.
double comm_time_global_memory(const CommConfig& cfg, const GpuSpec& gpu);

// Payload at which both paths cost the same under one stream.
double crossover_payload_mb(const CommConfig& cfg, const GpuSpec& gpu);

// Keeps host_copy_fixed_overhead_ms and solves for ipc_fixed_overhead_ms so
// the paths cross exactly at crossover_target_mb. Throws CalibrationError
// when the pair would need a negative overhead or the small-payload ordering
// (main memory faster for a 2-byte message) would not hold.
CommConfig calibrate_overheads(const CommConfig& cfg, const GpuSpec& gpu);

// Global-memory bytes held for one hand-off, per side.
struct CommMemoryCharge {
  double producer_mb = 0;
  double consumer_mb = 0;
};
CommMemoryCharge comm_memory_charge(const CommConfig& cfg, CommPath path, double payload_mb);

}  // namespace pipealloc
